"""Central finite-difference gradient checking.

The checker is the independent oracle for every analytic backward pass in the
package: it re-evaluates the forward function with elementwise +/- step
perturbations and compares the quotient against the taped gradient.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor

DEFAULT_STEP = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |n|), elementwise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.abs(n))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_gradient(
    forward: Callable[[], float],
    leaf: Tensor,
    step: float = DEFAULT_STEP,
    indices: Sequence[tuple] | None = None,
) -> np.ndarray:
    """Central finite differences of ``forward()`` w.r.t. ``leaf.data``.

    Perturbs the leaf in place and restores it. When ``indices`` is given only
    those elements are probed (the rest stay zero); both evaluations per
    element run without any tape.
    """
    flat = leaf.data.reshape(-1)
    grad = np.zeros_like(flat)
    if indices is None:
        probe = range(flat.size)
    else:
        probe = [int(np.ravel_multi_index(ix, leaf.data.shape)) for ix in indices]
    for i in probe:
        orig = flat[i]
        flat[i] = orig + step
        hi = forward()
        flat[i] = orig - step
        lo = forward()
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(leaf.data.shape)


def check_gradients(
    build: Callable[[], Tensor],
    leaves: Sequence[Tensor],
    step: float = DEFAULT_STEP,
    max_probe: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare taped gradients of the scalar ``build()`` against finite differences.

    Returns the worst relative error over all probed elements of all leaves.
    ``max_probe`` caps the number of elements probed per leaf (random subset),
    keeping large-parameter checks affordable; the analytic side is always the
    full backward pass.
    """
    with Tape() as tape:
        root = build()
    for leaf in leaves:
        leaf.grad = None
    tape.backward(root)
    analytic = [
        np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad.copy() for leaf in leaves
    ]

    def forward() -> float:
        return float(build().data)

    worst = 0.0
    for leaf, ana in zip(leaves, analytic):
        if max_probe is not None and leaf.size > max_probe:
            r = rng if rng is not None else np.random.default_rng(0)
            chosen = r.choice(leaf.size, size=max_probe, replace=False)
            indices = [np.unravel_index(int(i), leaf.data.shape) for i in chosen]
            num = numeric_gradient(forward, leaf, step, indices)
            sel = tuple(np.array([ix[d] for ix in indices]) for d in range(leaf.data.ndim))
            err = relative_error(ana[sel], num[sel])
        else:
            num = numeric_gradient(forward, leaf, step)
            err = relative_error(ana, num)
        worst = max(worst, err)
    return worst
