import numpy as np
import pytest

from trajvid import tensor as T


def rel_err(a, b, floor=1e-3):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def finite_diff(build_loss, param, h=1e-4):
    """Central-difference gradient of a scalar loss w.r.t. one parameter.

    ``build_loss`` re-runs the forward pass from the parameter's current
    data, so it stays independent of the autograd path under test.
    """
    grad = np.zeros_like(param.data)
    flat = param.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = build_loss().item()
        flat[i] = orig - h
        down = build_loss().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def finite_diff_probe(build_loss, param, index, h=1e-4):
    """Central difference at a single flat index of one parameter."""
    flat = param.data.ravel()
    orig = flat[index]
    flat[index] = orig + h
    up = build_loss().item()
    flat[index] = orig - h
    down = build_loss().item()
    flat[index] = orig
    return (up - down) / (2.0 * h)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
