"""Quick self-contained checks behind the `selftest` CLI command.

A trimmed version of the test suite's oracle and gradient checks, for
sanity-checking an installation without pytest.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .gradcheck import check_gradient
from .hierarchy import HierarchyMap, build_sort_plan
from .losses import LossWeights, edge_loss, l1_loss, ssim, total_loss
from .ssm import init_ssm_params, selective_scan, selective_scan_oracle
from .tensor import Tensor


def _scan_oracle_check(trials: int = 20) -> float:
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(trials):
        b = int(rng.integers(1, 3))
        l = int(rng.integers(1, 65))
        c = int(rng.integers(1, 5))
        p = init_ssm_params(c, int(rng.integers(1, 9)), rng)
        x = Tensor(rng.standard_normal((b, l, c)))
        y = selective_scan(x, p)
        dt = T.softplus(T.matmul(x, p.w_dt) + p.b_dt).data
        yo = selective_scan_oracle(x.data, dt, -np.exp(p.log_a.data),
                                   x.data @ p.w_b.data, x.data @ p.w_c.data, p.skip.data)
        worst = max(worst, float(np.abs(y.data - yo).max()))
    return worst


def _fft_check() -> tuple[float, float]:
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((8, 8)))
    f = T.fft2_real(x)
    rt = float(np.abs(T.ifft2_real(f).data - x.data).max())
    w = x.shape[-1]
    k = w // 2 + 1
    weights = np.full(k, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    spec = (f.re.data ** 2 + f.im.data ** 2) @ weights
    parseval = abs(spec.sum() / x.size - (x.data ** 2).sum()) / (x.data ** 2).sum()
    return rt, float(parseval)


def _perm_check(trials: int = 200) -> bool:
    rng = np.random.default_rng(2)
    for _ in range(trials):
        h, w = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        plan = build_sort_plan(HierarchyMap(rng.uniform(0, 1, (h, w)), "brightness", "t"))
        if not np.array_equal(plan.inverse_index[plan.forward_index],
                              np.arange(h * w)):
            return False
        if np.any(np.diff(plan.key_snapshot) < 0):
            return False
    return True


def _grad_check() -> float:
    rng = np.random.default_rng(3)
    worst = 0.0
    x = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    worst = max(worst, check_gradient(lambda: (T.silu(x) * x).sum(), [x]))
    img = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
    k = Tensor(rng.standard_normal((2, 2, 3, 3)), requires_grad=True)
    worst = max(worst, check_gradient(
        lambda: (T.conv2d(img, k, padding=1) ** 2.0).sum(), [img, k]))
    return worst


def _loss_check() -> float:
    rng = np.random.default_rng(4)
    a = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)))
    b = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)))
    w = LossWeights()
    combined = total_loss(a, b, w).item()
    manual = (w.l1 * l1_loss(a, b).item()
              + w.ssim * (1.0 - ssim(a, b).item())
              + w.edge * edge_loss(a, b).item())
    return abs(combined - manual)


def run_selftest() -> bool:
    ok = True

    def report(name: str, passed: bool, detail: str = ""):
        nonlocal ok
        ok = ok and passed
        print(f"{'PASS' if passed else 'FAIL'} {name}{' ' + detail if detail else ''}")

    dev = _scan_oracle_check()
    report("scan-oracle", dev < 1e-10, f"max|dev|={dev:.2e}")
    rt, pv = _fft_check()
    report("fft-roundtrip", rt < 1e-10, f"err={rt:.2e}")
    report("fft-parseval", pv < 1e-9, f"err={pv:.2e}")
    report("sort-plans", _perm_check())
    g = _grad_check()
    report("gradients", g < 1e-6, f"worst rel={g:.2e}")
    lc = _loss_check()
    report("loss-identity", lc < 1e-12, f"|dev|={lc:.2e}")
    return ok
