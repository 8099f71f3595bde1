"""Central finite-difference gradient checking.

Used by the test suite and the `selftest` CLI command. The numerical side
never touches the tape: it re-runs the forward function on perturbed copies
of the raw buffers.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_gradient(f: Callable[[], Tensor], t: Tensor, h: float = 1e-5,
                       elements: Sequence[int] | None = None) -> np.ndarray:
    """Central differences of scalar f with respect to t.

    elements restricts the check to a subset of flat indices (the full loop
    is quadratic in practice); returns a flat array aligned with elements.
    """
    flat = t.data.reshape(-1)
    idxs = list(range(flat.size)) if elements is None else list(elements)
    out = np.zeros(len(idxs))
    for k, i in enumerate(idxs):
        orig = flat[i]
        flat[i] = orig + h
        fp = f().item()
        flat[i] = orig - h
        fm = f().item()
        flat[i] = orig
        out[k] = (fp - fm) / (2.0 * h)
    return out


def check_gradient(f: Callable[[], Tensor], inputs: Sequence[Tensor],
                   h: float = 1e-5, rtol: float = 1e-6, atol: float = 1e-9,
                   max_elements: int | None = None, seed: int = 0) -> float:
    """Compare analytic grads of scalar f against central differences.

    Returns the worst relative error observed; raises AssertionError with
    the offending tensor/element when |a - n| > atol + rtol * |n|.
    """
    for t in inputs:
        t.zero_grad()
    loss = f()
    loss.backward(free_graph=False)
    rng = np.random.default_rng(seed)
    max_err = 0.0
    scale = 1e-12
    for ti, t in enumerate(inputs):
        assert t.grad is not None, f"input {ti} got no gradient"
        n = t.data.size
        if max_elements is not None and n > max_elements:
            elements = sorted(rng.choice(n, size=max_elements, replace=False).tolist())
        else:
            elements = list(range(n))
        num = numerical_gradient(f, t, h=h, elements=elements)
        ana = t.grad.reshape(-1)[elements]
        err = np.abs(ana - num)
        bound = atol + rtol * np.abs(num)
        if np.any(err > bound):
            j = int(np.argmax(err - bound))
            raise AssertionError(
                f"gradient mismatch on input {ti} element {elements[j]}: "
                f"analytic {ana[j]:.12g} vs numeric {num[j]:.12g} (|diff| {err[j]:.3g})")
        max_err = max(max_err, float(err.max(initial=0.0)))
        scale = max(scale, float(np.abs(num).max(initial=0.0)),
                    float(np.abs(ana).max(initial=0.0)))
    # relative error of the full gradient vector: absolute FD noise on
    # near-zero components must not masquerade as relative error
    return max_err / scale
