"""Shared test utilities: finite-difference gradient oracle and RNG plumbing."""

import numpy as np

from anchormae import numerics as nm


def finite_diff_grad(fn, leaves: dict[str, nm.Tensor], name: str, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``fn(leaves)`` w.r.t. ``leaves[name]``.

    ``fn`` must rebuild the graph from the leaf data on every call; it is
    evaluated without any active tape.
    """
    base = leaves[name].data
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fn(leaves)
        flat[i] = keep - h
        down = fn(leaves)
        flat[i] = keep
        gflat[i] = (up - down) / (2 * h)
    return grad


def grad_matches(analytic: np.ndarray, numeric: np.ndarray,
                 rtol: float = 1e-4, atol: float = 1e-7) -> bool:
    """Per-entry agreement: relative where the gradient is sizable, absolute otherwise."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(a), np.abs(b))
    close = np.abs(a - b) <= atol + rtol * denom
    return bool(np.all(close))
