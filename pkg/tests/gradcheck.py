"""Central finite-difference gradient oracle."""

import numpy as np

from sanas.tensor import Tensor, parameter

H = 1e-5


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max abs difference over the larger of the two max magnitudes."""
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def check(fn, arrays, rng, wrt=None, max_entries: int = 40) -> float:
    """Compare autograd and central differences of ``sum(fn(*inputs) * R)``.

    ``fn`` maps Tensors to a Tensor.  At most ``max_entries`` randomly chosen
    coordinates per input are probed.  Returns the worst relative error.
    """
    wrt = range(len(arrays)) if wrt is None else wrt
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    params = [parameter(a.copy()) for a in arrays]
    out = fn(*params)
    proj = rng.standard_normal(out.shape)
    (out * Tensor(proj)).sum().backward()

    def value(arrs):
        return float(np.sum(fn(*[Tensor(a) for a in arrs]).data * proj))

    worst = 0.0
    for k in wrt:
        flat = arrays[k].reshape(-1)
        idx = rng.choice(flat.size, size=min(max_entries, flat.size), replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[k].reshape(-1)[i] += H
            minus[k].reshape(-1)[i] -= H
            num[j] = (value(plus) - value(minus)) / (2 * H)
        ana = params[k].grad.reshape(-1)[idx]
        worst = max(worst, rel_error(ana, num))
    return worst
