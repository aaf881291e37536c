import numpy as np
import pytest

from covit.model import ModelConfig


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    """The smallest config exercised throughout: 1 layer, 2 heads."""
    return ModelConfig(
        num_classes=3, L=1, d_model=8, h=2, d_k=4, d_v=4, d_ff=16,
        n_fragments=4, f=8, dropout_rate=0.0,
    )


def numeric_grad(f, array: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar-valued f w.r.t. every element."""
    g = np.zeros_like(array, dtype=np.float64)
    for i in range(array.size):
        orig = array.flat[i]
        array.flat[i] = orig + step
        fp = f()
        array.flat[i] = orig - step
        fm = f()
        array.flat[i] = orig
        g.flat[i] = (fp - fm) / (2.0 * step)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-7) -> float:
    """Worst relative error, ignoring entries that agree absolutely."""
    a = np.atleast_1d(np.asarray(analytic, dtype=np.float64)).ravel()
    n = np.atleast_1d(np.asarray(numeric, dtype=np.float64)).ravel()
    diff = np.abs(a - n)
    rel = diff / np.maximum(np.abs(a), np.abs(n)).clip(min=1e-300)
    rel[diff <= atol] = 0.0
    return float(rel.max()) if rel.size else 0.0
