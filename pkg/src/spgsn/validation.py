import numpy as np


def check_motion(X, name: str = "X", n_frames: int | None = None, n_joints: int | None = None) -> np.ndarray:
    """Validate a ``(n_samples, frames, joints, 3)`` motion array and return it as float64."""
    try:
        X = np.asarray(X, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{name} cannot be converted to a float array: {exc}") from None
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ValueError(f"{name} must have shape (n_samples, frames, joints, 3), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} has no samples")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains NaN or Inf")
    if n_frames is not None and X.shape[1] != n_frames:
        raise ValueError(f"{name} has {X.shape[1]} frames, expected {n_frames}")
    if n_joints is not None and X.shape[2] != n_joints:
        raise ValueError(f"{name} has {X.shape[2]} joints, expected {n_joints}")
    return X


def check_pair(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = check_motion(X, "X")
    y = check_motion(y, "y", n_joints=X.shape[2])
    if len(X) != len(y):
        raise ValueError(f"X and y hold {len(X)} and {len(y)} samples")
    return X, y
