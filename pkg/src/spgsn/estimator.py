"""scikit-learn compatible wrapper around the predictor."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .config import _resolve_partition
from .network import ModelConfig, SPGSNParams, load_checkpoint, save_checkpoint
from .training import MotionDataset, TrainConfig, evaluate, predict_batched, train
from .training import mpjpe as _mpjpe
from .validation import check_motion, check_pair


class SPGSNRegressor(BaseEstimator, RegressorMixin):
    """Predict future poses ``(n, dT, M, 3)`` from histories ``(n, T, M, 3)``.

    ``partition`` is ``"upper-lower"`` (first half of the joints against the
    rest), ``"1body"``/``None`` for the single-body ablation, or a dict with
    ``upper_joints`` and ``lower_joints``.
    """

    def __init__(
        self,
        blocks=10,
        scatter_layers=2,
        filter_order=2,
        hidden=256,
        dct_coeffs=None,
        partition="upper-lower",
        bones=None,
        block_residuals=True,
        global_skip=True,
        aggregator="spectrum",
        affinity_norm="source",
        epochs=50,
        batch_size=32,
        lr=0.001,
        lr_decay=0.96,
        decay_every=2,
        random_state=0,
    ):
        self.blocks = blocks
        self.scatter_layers = scatter_layers
        self.filter_order = filter_order
        self.hidden = hidden
        self.dct_coeffs = dct_coeffs
        self.partition = partition
        self.bones = bones
        self.block_residuals = block_residuals
        self.global_skip = global_skip
        self.aggregator = aggregator
        self.affinity_norm = affinity_norm
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.random_state = random_state

    def _make_config(self, n_joints: int, history: int, horizon: int) -> ModelConfig:
        return ModelConfig(
            joints=n_joints,
            history=history,
            horizon=horizon,
            bones=[] if self.bones is None else self.bones,
            blocks=self.blocks,
            scatter_layers=self.scatter_layers,
            filter_order=self.filter_order,
            hidden=self.hidden,
            dct_coeffs=self.dct_coeffs,
            partition=_resolve_partition(self.partition, None, n_joints, None),
            block_residuals=self.block_residuals,
            global_skip=self.global_skip,
            aggregator=self.aggregator,
            affinity_norm=self.affinity_norm,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_pair(X, y)
        cfg = self._make_config(X.shape[2], X.shape[1], y.shape[1])
        seed = 0 if self.random_state is None else int(self.random_state)
        tcfg = TrainConfig(
            epochs=self.epochs, seed=seed, batch_size=self.batch_size,
            lr=self.lr, lr_decay=self.lr_decay, decay_every=self.decay_every,
        )
        val = None
        if X_val is not None:
            val = MotionDataset(*check_pair(X_val, y_val))
        result = train(MotionDataset(X, y), cfg, tcfg, val_data=val)
        self.config_ = cfg
        self.params_ = result.params
        self.log_ = result.log
        self.n_joints_ = cfg.joints
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_motion(X, "X", n_frames=self.config_.history, n_joints=self.n_joints_)
        return predict_batched(X, self.params_, self.config_)

    def score(self, X, y, sample_weight=None) -> float:
        """Negative MPJPE averaged over the horizon (higher is better)."""
        X, y = check_pair(X, y)
        return -_mpjpe(self.predict(X), y)

    def mpjpe_table(self, X, y, horizons) -> dict[int, float]:
        self._check_fitted()
        X, y = check_pair(X, y)
        return evaluate(self.params_, self.config_, MotionDataset(X, y), horizons)

    def save(self, path) -> None:
        self._check_fitted()
        save_checkpoint(path, self.params_, self.config_)

    @classmethod
    def from_checkpoint(cls, path) -> "SPGSNRegressor":
        params, cfg, _ = load_checkpoint(path)
        est = cls(
            blocks=cfg.blocks, scatter_layers=cfg.scatter_layers, filter_order=cfg.filter_order,
            hidden=cfg.hidden, dct_coeffs=cfg.dct_coeffs, partition=cfg.partition or "1body",
            bones=cfg.bones, block_residuals=cfg.block_residuals, global_skip=cfg.global_skip,
            aggregator=cfg.aggregator, affinity_norm=cfg.affinity_norm,
        )
        est.config_, est.params_, est.n_joints_, est.log_ = cfg, params, cfg.joints, []
        return est

    def init_params(self, n_joints: int, history: int, horizon: int) -> "SPGSNRegressor":
        """Attach freshly initialized (untrained) parameters without fitting."""
        self.config_ = self._make_config(n_joints, history, horizon)
        self.params_ = SPGSNParams.init(self.config_, seed=self.random_state or 0)
        self.n_joints_ = n_joints
        self.log_ = []
        return self
