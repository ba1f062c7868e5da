import numpy as np
import pytest

import oracle
from spgsn import autodiff as ad
from spgsn.network import (
    CheckpointError,
    ModelConfig,
    SPGSNParams,
    load_checkpoint,
    mpgsb_forward,
    param_count,
    predict,
    save_checkpoint,
    spgsn_forward,
)
from spgsn.parts import ConfigError

TOY4 = [[0, 1], [0, 2], [2, 3]]
UL4 = {"name": "ul", "upper_joints": [0, 1], "lower_joints": [2, 3]}
TWO = {"name": "two", "upper_joints": [0], "lower_joints": [1]}


def toy(**kw):
    base = dict(joints=4, history=6, horizon=3, bones=TOY4, blocks=2, hidden=4, partition=UL4)
    base.update(kw)
    return ModelConfig(**base)


def clips(n, cfg, seed=0):
    return np.random.default_rng(seed).normal(size=(n, cfg.history, cfg.joints, 3))


@pytest.mark.parametrize("partition", [UL4, None])
def test_zero_network_holds_last_frame(partition):
    cfg = toy(partition=partition)
    params = SPGSNParams.init(cfg).zero_()
    hist = clips(3, cfg)
    out = spgsn_forward(hist, params, cfg).data
    want = np.repeat(hist[:, -1:], cfg.horizon, axis=1)
    assert np.abs(out - want).max() < 1e-9


def test_zero_network_without_skip_is_zero_pose():
    cfg = toy(global_skip=False)
    out = spgsn_forward(clips(2, cfg), SPGSNParams.init(cfg).zero_(), cfg).data
    np.testing.assert_array_equal(out, 0.0)


def test_default_sizes_shape_and_finite():
    cfg = ModelConfig(joints=4, history=10, horizon=10, bones=TOY4, partition=UL4, hidden=16, blocks=3)
    out = predict(clips(1, cfg)[0], SPGSNParams.init(cfg), cfg)
    assert out.shape == (10, 4, 3)
    assert np.isfinite(out).all()


def test_batched_matches_single_clip():
    cfg = toy()
    params = SPGSNParams.init(cfg, seed=3)
    hist = clips(3, cfg, 1)
    batched = predict(hist, params, cfg)
    for i in range(3):
        np.testing.assert_allclose(batched[i], predict(hist[i], params, cfg), atol=1e-13)


def test_forward_rejects_wrong_shape():
    cfg = toy()
    with pytest.raises(ad.ShapeError):
        spgsn_forward(np.zeros((1, cfg.history + 1, 4, 3)), SPGSNParams.init(cfg), cfg)


def test_forward_is_deterministic():
    cfg = toy()
    hist = clips(2, cfg)
    a = predict(hist, SPGSNParams.init(cfg, seed=5), cfg)
    b = predict(hist, SPGSNParams.init(cfg, seed=5), cfg)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("partition", [TWO, None])
@pytest.mark.parametrize("aggregator", ["spectrum", "average"])
def test_block_matches_explicit_loop_oracle(partition, aggregator):
    cfg = ModelConfig(joints=2, history=4, horizon=2, bones=[[0, 1]], blocks=1, hidden=3,
                      partition=partition, aggregator=aggregator)
    params = SPGSNParams.init(cfg, seed=11)
    block = params.blocks[0]
    x = np.random.default_rng(12).normal(size=(6, 3))
    got = mpgsb_forward(ad.Tensor(x), block, cfg).data
    np.testing.assert_allclose(got, oracle.block_forward(x, block, cfg), rtol=0, atol=1e-10)


def test_per_branch_weights_match_oracle():
    cfg = ModelConfig(joints=2, history=4, horizon=2, bones=[[0, 1]], blocks=1, hidden=3,
                      partition=TWO, share_branch_weights=False)
    params = SPGSNParams.init(cfg, seed=2)
    x = np.random.default_rng(3).normal(size=(6, 3))
    got = mpgsb_forward(ad.Tensor(x), params.blocks[0], cfg).data
    np.testing.assert_allclose(got, oracle.block_forward(x, params.blocks[0], cfg), atol=1e-10)


def test_full_forward_matches_oracle():
    cfg = ModelConfig(joints=2, history=5, horizon=3, bones=[[0, 1]], blocks=2, hidden=3, partition=TWO, dct_coeffs=6)
    params = SPGSNParams.init(cfg, seed=4)
    hist = np.random.default_rng(5).normal(size=(5, 2, 3))
    np.testing.assert_allclose(predict(hist, params, cfg), oracle.full_forward(hist, params, cfg), atol=1e-10)


def test_one_body_block_uses_doubled_features():
    cfg = ModelConfig(joints=2, history=4, horizon=2, bones=[[0, 1]], blocks=1, hidden=3, partition=None,
                      block_residuals=False, aggregator="average")
    params = SPGSNParams.init(cfg, seed=0)
    block = params.blocks[0]
    x = np.random.default_rng(1).normal(size=(6, 3))
    a = oracle.normalized(block.graphs["whole"].adjacency.data)
    h = oracle.aggregate(oracle.scatter(x, a, block.tree), None)
    mlp = block.mlp
    want = np.tanh((2 * h) @ mlp.first.weight.data + mlp.first.bias.data) @ mlp.second.weight.data
    np.testing.assert_allclose(mpgsb_forward(ad.Tensor(x), block, cfg).data, want, atol=1e-12)


def test_zero_block_is_identity_with_residual():
    cfg = toy()
    params = SPGSNParams.init(cfg, seed=1)
    block = params.blocks[1]
    block.mlp.second.weight.data[...] = 0.0
    x = np.random.default_rng(2).normal(size=(2, 12, 4))
    np.testing.assert_array_equal(mpgsb_forward(ad.Tensor(x), block, cfg).data, x)


def test_zero_input_passes_zero():
    cfg = toy()
    out = mpgsb_forward(ad.Tensor(np.zeros((12, 4))), SPGSNParams.init(cfg).blocks[0], cfg)
    np.testing.assert_array_equal(out.data, 0.0)


def test_every_parameter_gets_a_gradient():
    cfg = toy(blocks=1)
    params = SPGSNParams.init(cfg, seed=6)
    hist = clips(2, cfg, 7)
    target = clips(2, ModelConfig(joints=4, history=3, horizon=1), 8)
    loss = ad.sum_of_squares(ad.sub(spgsn_forward(hist, params, cfg), ad.Tensor(target)))
    loss.backward()
    for name, p in params.named_parameters().items():
        assert p.grad is not None and np.abs(p.grad).max() > 0, name


def test_two_joint_gradients_match_finite_differences():
    cfg = ModelConfig(joints=2, history=4, horizon=2, bones=[[0, 1]], blocks=2, hidden=3, partition=TWO)
    params = SPGSNParams.init(cfg, seed=9)
    hist = np.random.default_rng(1).normal(size=(2, 4, 2, 3))
    fut = np.random.default_rng(2).normal(size=(2, 2, 2, 3))

    def f():
        return ad.scale(ad.sum_of_squares(ad.sub(spgsn_forward(hist, params, cfg), ad.Tensor(fut))), 1 / fut.size)

    # attention/affinity gradients are ~1e-9 at init; the error there falls as
    # 1/eps (roundoff-bound) down to eps=1e-3, so the larger step is the accurate one
    report = ad.finite_diff_check(f, params.named_parameters(), eps=1e-3)
    assert report.max_rel_err < 1e-4, max(report.per_param.items(), key=lambda kv: kv[1])


def test_parameter_names_are_unique():
    params = SPGSNParams.init(toy(blocks=3))
    assert len(params.named_parameters()) == len(params.parameters())


def test_param_count_hand_enumeration():
    cfg = ModelConfig(joints=2, history=1, horizon=1, bones=[[0, 1]], blocks=1, scatter_layers=1,
                      filter_order=0, hidden=2, dct_coeffs=2, partition=None)
    # in_proj 2*2+2, A 6*6, alpha 1, W 2*2, W_sp 2*2, f1 4*2+2, f2 2+1, MLP 2*(2*2+2), out_proj 2*2+2
    assert param_count(cfg) == 6 + 36 + 1 + 4 + 4 + 10 + 3 + 12 + 6 == 82


def test_param_count_linear_in_blocks():
    counts = [param_count(toy(blocks=b)) for b in (1, 2, 3)]
    assert counts[2] - counts[1] == counts[1] - counts[0] > 0


def test_param_count_superlinear_in_width():
    assert param_count(toy(hidden=8)) > 2 * param_count(toy(hidden=4))


def test_blocks_do_not_share_parameters():
    params = SPGSNParams.init(toy(blocks=2))
    ids = [{id(p) for p in b.parameters()} for b in params.blocks]
    assert not ids[0] & ids[1]


@pytest.mark.parametrize(
    "kw",
    [dict(blocks=0), dict(hidden=0), dict(aggregator="max"), dict(dct_coeffs=20),
     dict(bones=[[0, 9]]), dict(partition={"name": "x", "upper_joints": [0], "lower_joints": [1]})],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        toy(**kw)


def test_checkpoint_roundtrip(tmp_path):
    cfg = toy(share_branch_weights=False)
    params = SPGSNParams.init(cfg, seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params, cfg, extra={"note": "x"})
    loaded, cfg2, meta = load_checkpoint(path)
    assert cfg2 == cfg
    assert meta["note"] == "x"
    for a, b in zip(params.parameters(), loaded.parameters()):
        assert a.name == b.name
        assert a.data.tobytes() == b.data.tobytes()
    assert path.read_bytes().startswith(b"SPGSN1")


def test_checkpoint_errors(tmp_path):
    cfg = toy()
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, SPGSNParams.init(cfg), cfg)
    raw = path.read_bytes()
    bad = tmp_path / "bad.ckpt"
    for blob in (b"NOPE" + raw[4:], raw[:-8], raw + b"\0", raw[:12]):
        bad.write_bytes(blob)
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)
