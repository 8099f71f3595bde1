"""Acceptance criteria.

One test per criterion, each printing a PASS line with its measured
runtime. Run with `pytest tests/test_acceptance.py -v -s`.
"""

import os
import time

import numpy as np
import pytest

from bsmamba import tensor as T
from bsmamba import pipeline, synthetic
from bsmamba.backbone import backbone_forward
from bsmamba.denet import identity_spectral_weights, init_ffc_block, spectral_transform
from bsmamba.gradcheck import check_gradient
from bsmamba.hierarchy import HierarchyMap, build_sort_plan, grading_ranges
from bsmamba.losses import LossWeights, edge_loss, l1_loss, ssim, total_loss
from bsmamba.model import (ModelConfig, count_parameters, init_model,
                           model_forward, named_tensors)
from bsmamba.pipeline import TrainConfig, compute_score_maps
from bsmamba.ssm import init_ssm_params, scan_counter, selective_scan, selective_scan_oracle
from bsmamba.tensor import Tensor


def _report(name: str, t0: float, budget: float, detail: str = ""):
    elapsed = time.time() - t0
    print(f"PASS {name}: {detail}{' ' if detail else ''}({elapsed:.2f}s, budget {budget:.0f}s)")
    assert elapsed < budget, f"{name} exceeded its runtime budget"


@pytest.fixture(scope="module", autouse=True)
def _warm_kernels():
    # JIT compilation happens once, outside any timed region
    rng = np.random.default_rng(0)
    p = init_ssm_params(2, 2, rng)
    selective_scan(Tensor(rng.standard_normal((1, 4, 2))), p)
    T.gelu(Tensor(rng.standard_normal(4)))
    T.silu(Tensor(rng.standard_normal(4)))
    T.softplus(Tensor(rng.standard_normal(4)))
    T.layer_norm(Tensor(rng.standard_normal((2, 4))), Tensor(np.ones(4)), Tensor(np.zeros(4)))


def test_scan_count_claim(rng):
    """Default block: 2 hierarchy scans; vanilla ss2d ablation: 4."""
    img = rng.uniform(0.1, 0.9, (1, 3, 32, 32))
    maps = compute_score_maps(img, None, "luma")
    default = init_model(ModelConfig(), seed=0)
    vanilla = init_model(ModelConfig(composition="vanilla_ss2d"), seed=0)

    t0 = time.time()
    with T.no_grad():
        backbone_forward(Tensor(img), default, maps)
        per_block_default = scan_counter.count / len(default.blocks)
        backbone_forward(Tensor(img), vanilla, maps)
        per_block_vanilla = scan_counter.count / len(vanilla.blocks)
    assert per_block_default == 2
    assert per_block_vanilla == 4
    _report("scan-count-claim", t0, 1.0,
            f"2 scans/block default vs {int(per_block_vanilla)} vanilla")


def test_selective_scan_oracle_randomized(rng):
    """100 randomized cases match the scalar recurrence to 1e-10."""
    t0 = time.time()
    worst = 0.0
    for _ in range(100):
        b = int(rng.integers(1, 3))
        l = int(rng.integers(1, 257))
        c = int(rng.integers(1, 5))
        n = int(rng.integers(1, 9))
        p = init_ssm_params(c, n, rng)
        x = Tensor(rng.standard_normal((b, l, c)))
        y = selective_scan(x, p)
        dt = T.softplus(T.matmul(x, p.w_dt) + p.b_dt).data
        yo = selective_scan_oracle(x.data, dt, -np.exp(p.log_a.data),
                                   x.data @ p.w_b.data, x.data @ p.w_c.data,
                                   p.skip.data)
        worst = max(worst, float(np.abs(y.data - yo).max()))
    assert worst < 1e-10
    _report("selective-scan-oracle", t0, 30.0, f"100 cases, max|dev|={worst:.2e}")


def test_gradient_suite(rng):
    """Per-op FD checks at 1e-6; full model+loss composition at 1e-4."""
    t0 = time.time()

    def w(shape):
        return Tensor(rng.standard_normal(shape))

    per_op = {}

    x = Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
    y = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    wsum = w((3, 4))
    per_op["add"] = (lambda: ((x + y) * wsum).sum(), [x, y])
    per_op["sub"] = (lambda: ((x - y) * wsum).sum(), [x, y])
    per_op["mul"] = (lambda: ((x * y) * wsum).sum(), [x, y])
    per_op["div"] = (lambda: ((x / y) * wsum).sum(), [x, y])
    per_op["pow"] = (lambda: ((y ** 1.7) * wsum).sum(), [y])
    for name, fn in (("silu", T.silu), ("sigmoid", T.sigmoid), ("gelu", T.gelu),
                     ("softplus", T.softplus), ("exp", T.exp)):
        per_op[name] = (lambda fn=fn: (fn(x) * wsum).sum(), [x])
    per_op["log"] = (lambda: (T.log(y) * wsum).sum(), [y])
    per_op["clamp"] = (lambda: (T.clamp(x, -1.5, 1.5) * wsum).sum(), [x])
    per_op["mean"] = (lambda: T.reduce_mean(x * x), [x])
    wrow = w((3,))
    per_op["sum"] = (lambda: (T.reduce_sum(x, axis=1) * wrow).sum(), [x])
    per_op["max"] = (lambda: (T.reduce_max(x, axis=1) * wrow).sum(), [x])

    mm_a = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
    mm_b = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    wmm = w((2, 3, 5))
    per_op["matmul"] = (lambda: ((mm_a @ mm_b) * wmm).sum(), [mm_a, mm_b])

    cx = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
    ck = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
    wcv = w((1, 3, 3, 3))
    per_op["conv2d"] = (lambda: (T.conv2d(cx, ck, stride=2, padding=1) * wcv).sum(),
                        [cx, ck])

    lx = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    lg = Tensor(rng.uniform(0.5, 1.5, 6), requires_grad=True)
    lb = Tensor(rng.standard_normal(6), requires_grad=True)
    wln = w((4, 6))
    per_op["layer_norm"] = (lambda: (T.layer_norm(lx, lg, lb) * wln).sum(), [lx, lg, lb])

    gx = Tensor(rng.standard_normal((2, 6, 3)), requires_grad=True)
    perm = rng.permutation(6)
    wg = w((2, 6, 3))
    per_op["gather"] = (lambda: (T.gather_tokens(gx, perm) * wg).sum(), [gx])
    per_op["scatter"] = (lambda: (T.scatter_tokens(gx, T.invert_permutation(perm))
                                  * wg).sum(), [gx])

    ux = Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
    wu = w((1, 2, 6, 6))
    per_op["upsample2x"] = (lambda: (T.upsample2x(ux) * wu).sum(), [ux])

    fx = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
    fw_re, fw_im = w((4, 3)), w((4, 3))
    per_op["fft2_real"] = (lambda: ((lambda f: (f.re * fw_re).sum() + (f.im * fw_im).sum())
                                    (T.fft2_real(fx))), [fx])
    ir = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    ii = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    wif = w((4, 4))
    per_op["ifft2_real"] = (lambda: (T.ifft2_real(T.ComplexPair(ir, ii)) * wif).sum(),
                            [ir, ii])

    sx = Tensor(rng.standard_normal((1, 6, 2)), requires_grad=True)
    sp = init_ssm_params(2, 3, rng)
    wsc = w((1, 6, 2))
    per_op["selective_scan"] = (lambda: (selective_scan(sx, sp) * wsc).sum(),
                                [sx, sp.log_a, sp.w_dt, sp.b_dt, sp.w_b, sp.w_c, sp.skip])

    worst_per_op = 0.0
    for name, (fn, inputs) in per_op.items():
        rel = check_gradient(fn, inputs, rtol=1e-6, atol=1e-9)
        assert rel < 1e-6, f"{name}: per-op rel error {rel:.2e}"
        worst_per_op = max(worst_per_op, rel)

    # full composition: backbone + refinement + total loss on 1x3x16x16
    img_np = rng.uniform(0.1, 0.9, (1, 3, 16, 16))
    gt_np = rng.uniform(0.1, 0.9, (1, 3, 16, 16))
    maps = compute_score_maps(img_np, None, "luma")
    model = init_model(ModelConfig(), seed=1)
    for name, t in named_tensors(model).items():
        if not t.data.any():  # lift zero-initialized layers off the saddle
            t.data = rng.uniform(-0.05, 0.05, t.shape)
    img = Tensor(img_np, requires_grad=True)
    gt = Tensor(gt_np)

    def full_loss():
        out, _, _ = model_forward(img, model, maps)
        return total_loss(out, gt, LossWeights())

    params = named_tensors(model)
    sampled = [img] + [params[k] for k in sorted(params)]
    worst_e2e = check_gradient(full_loss, sampled, rtol=1e-4, atol=1e-8,
                               max_elements=3, seed=7)
    assert worst_e2e < 1e-4
    _report("gradient-suite", t0, 300.0,
            f"per-op worst {worst_per_op:.2e}, end-to-end worst {worst_e2e:.2e}")


def test_permutation_suite(rng):
    t0 = time.time()
    for _ in range(1000):
        h, wd = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        plan = build_sort_plan(HierarchyMap(rng.uniform(0, 1, (h, wd)), "brightness", "t"))
        l = h * wd
        assert np.array_equal(plan.inverse_index[plan.forward_index], np.arange(l))
        tokens = rng.standard_normal((1, l, 2))
        rt = T.scatter_tokens(T.gather_tokens(Tensor(tokens), plan.forward_index),
                              plan.inverse_index)
        assert np.array_equal(rt.data, tokens)
    const = build_sort_plan(HierarchyMap(np.full((5, 7), 0.25), "brightness", "t"))
    assert np.array_equal(const.forward_index, np.arange(35))
    for n in (0, 1, 2, 5):
        ranges = grading_ranges(n)
        assert ranges == [(i / (n + 1), (i + 1) / (n + 1)) for i in range(n + 1)]
    _report("permutation-suite", t0, 10.0, "1000 plans + grading ranges")


def test_fft_ffc_suite(rng):
    t0 = time.time()
    worst_rt = worst_pv = 0.0
    for n in (8, 16):
        x = rng.standard_normal((n, n))
        f = T.fft2_real(Tensor(x))
        back = T.ifft2_real(f)
        worst_rt = max(worst_rt, float(np.abs(back.data - x).max()))
        k = n // 2 + 1
        wts = np.full(k, 2.0)
        wts[0] = wts[-1] = 1.0
        spectral = float(((f.re.data ** 2 + f.im.data ** 2) * wts).sum()) / (n * n)
        worst_pv = max(worst_pv, abs(spectral - (x ** 2).sum()) / (x ** 2).sum())
    assert worst_rt < 1e-10
    assert worst_pv < 1e-9

    ffc = init_ffc_block(4, 0.5, rng)
    ffc.spectral_w.data = identity_spectral_weights(2)
    ffc.spectral_b.data = np.zeros_like(ffc.spectral_b.data)
    xs = Tensor(rng.standard_normal((1, 2, 8, 8)))
    dev = float(np.abs(spectral_transform(xs, ffc.spectral_w, ffc.spectral_b).data
                       - xs.data).max())
    assert dev < 1e-10
    _report("fft-ffc-suite", t0, 10.0,
            f"roundtrip {worst_rt:.1e}, parseval {worst_pv:.1e}, ffc identity {dev:.1e}")


def test_loss_defaults(rng):
    t0 = time.time()
    weights = LossWeights()
    assert weights.as_tuple() == (1.0, 0.5, 0.1)
    a = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)))
    b = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)))
    combined = total_loss(a, b, weights).item()
    manual = (1.0 * l1_loss(a, b).item()
              + 0.5 * (1.0 - ssim(a, b).item())
              + 0.1 * edge_loss(a, b).item())
    assert abs(combined - manual) < 1e-12
    _report("loss-defaults", t0, 5.0, f"|combined-manual|={abs(combined - manual):.1e}")


def test_overfit_experiment(tmp_path):
    """500 iterations on 2 synthetic 64x64 pairs: +5 dB over the identity
    baseline, decreasing windowed loss, bit-exact deterministic rerun."""
    root = str(tmp_path / "data")
    synthetic.write_dataset(root, size=64, count=2, seed=7)
    cfg = TrainConfig()  # desk defaults: 64x64 crops, batch 2, 500 iters, f64

    t0 = time.time()
    first = pipeline.train(cfg, root, str(tmp_path / "run1.ckpt"))
    elapsed = time.time() - t0
    assert first.final_psnr >= first.baseline_psnr + 5.0
    windows = [float(l.split("window_loss=")[1].split()[0])
               for l in first.log_lines if "window_loss=" in l]
    assert windows[-1] < windows[0]
    assert elapsed < 600.0, "overfit run exceeded its 10-minute budget"

    rerun = pipeline.train(cfg, root, str(tmp_path / "run2.ckpt"))
    assert rerun.log_lines == first.log_lines
    print(f"PASS overfit-experiment: baseline {first.baseline_psnr:.2f} dB -> "
          f"{first.final_psnr:.2f} dB, rerun log bit-exact "
          f"({elapsed:.0f}s train, budget 600s)")


def test_ablation_conformance(tmp_path):
    """All composition modes and both scorers run end to end; the two
    sequential orders are genuinely different configurations."""
    t0 = time.time()
    root = str(tmp_path / "data")
    synthetic.write_dataset(root, size=64, count=2, seed=7)
    for comp in ("sequential_bs", "sequential_sb", "parallel_sum",
                 "parallel_concat", "vanilla_ss2d"):
        for scorer in ("luma", "histogram"):
            cfg = TrainConfig(iterations=3, composition=comp, scorer=scorer,
                              log_every=3)
            res = pipeline.train(cfg, root, str(tmp_path / f"{comp}.{scorer}.ckpt"))
            assert os.path.exists(res.checkpoint_path), (comp, scorer)

    # order swap produces different outputs on random nonzero weights
    import copy

    rng = np.random.default_rng(5)
    model_bs = init_model(ModelConfig(), seed=2)
    for name, t in named_tensors(model_bs).items():
        if not t.data.any():
            t.data = rng.uniform(-0.1, 0.1, t.shape)
    model_sb = copy.deepcopy(model_bs)
    model_sb.config = ModelConfig(composition="sequential_sb")
    for blk in model_sb.blocks:
        blk.composition = "sequential_sb"
    img = rng.uniform(0.1, 0.9, (1, 3, 16, 16))
    maps = compute_score_maps(img, None, "luma")
    out_bs, _, _ = model_forward(Tensor(img), model_bs, maps)
    out_sb, _, _ = model_forward(Tensor(img), model_sb, maps)
    assert np.abs(out_bs.data - out_sb.data).max() > 1e-9
    _report("ablation-conformance", t0, 300.0, "5 modes x 2 scorers + order swap")


def test_parameter_budget():
    t0 = time.time()
    n = count_parameters(init_model(ModelConfig(), seed=0))
    assert n < 1_000_000
    _report("parameter-budget", t0, 5.0, f"{n} trainable scalars")
