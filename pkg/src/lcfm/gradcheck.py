"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(1e-8, abs(a) + abs(n))


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
               n_probe: int = 32, seed: int = 0, wrt: Sequence[int] | None = None,
               exclude: Callable[[int, tuple], bool] | None = None) -> float:
    """Largest relative error between backprop and central differences.

    ``fn`` receives one Tensor per input and may return any shape; the output
    is contracted with a fixed random tensor so every output element matters.
    Up to ``n_probe`` coordinates are probed per checked input (all of them
    when the input is smaller).  ``exclude(i, idx)`` may veto coordinates
    sitting on a non-smooth point.
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(x, dtype=np.float64, copy=True) for x in inputs]
    wrt = range(len(arrays)) if wrt is None else wrt

    probe_out = fn(*[Tensor(a) for a in arrays])
    weights = rng.standard_normal(probe_out.shape)

    def scalar(arrs) -> float:
        return float(np.sum(fn(*[Tensor(a) for a in arrs]).data * weights))

    leaves = [Tensor(a.copy(), requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
    out = fn(*leaves)
    (out * weights).sum().backward()

    worst = 0.0
    for i in wrt:
        analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(arrays[i])
        flat = [np.unravel_index(j, arrays[i].shape) for j in range(arrays[i].size)]
        if len(flat) > n_probe:
            picks = rng.choice(len(flat), size=n_probe, replace=False)
            flat = [flat[j] for j in picks]
        for idx in flat:
            if exclude is not None and exclude(i, idx):
                continue
            orig = arrays[i][idx]
            arrays[i][idx] = orig + h
            up = scalar(arrays)
            arrays[i][idx] = orig - h
            down = scalar(arrays)
            arrays[i][idx] = orig
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, relative_error(float(analytic[idx]), numeric))
    return worst
