"""Fast analytic self-checks runnable from the CLI.

Reduced-scale counterparts of the statistical acceptance suite; the full
suite lives in the test tree.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from .constants import SPEED_OF_LIGHT, TICK_SECONDS
from .locate import linear_init, nlls_solve
from .protocol import IDEAL_KNOBS, NoiseKnobs, Node, cfo_adjust, compensate_tx, sstwr
from .radio import ClockModel, quantize_ticks


def check_quantization(n: int = 200_000, seed: int = 7):
    rng = np.random.default_rng(seed)
    ts = rng.integers(0, 1 << 40, size=n)
    eps = quantize_ticks(ts) - ts
    ok = bool(np.all((eps > -512) & (eps <= 0)))
    counts = np.bincount((-eps).astype(int), minlength=512).reshape(32, 16).sum(axis=1)
    p = stats.chisquare(counts).pvalue
    ok = ok and p > 0.01 and float(np.abs(eps).max()) * TICK_SECONDS < 8.02e-9
    return "tx-quantization-uniform", ok, f"chi2 p={p:.3f}"


def check_compensation_micro():
    step, t_det = compensate_tx(-5e-9, 400e-6)
    ok = step == 8 and abs(t_det - 422.3e-6) < 0.05e-6
    ok = ok and cfo_adjust(3.0) == -2
    return "compensation-micro", ok, f"step={step}, t_det={t_det * 1e6:.1f}us"


def check_sstwr_drift(seed: int = 11):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for de in (-20.0, -5.0, 5.0, 20.0):
        init = Node([0.0, 0.0], ClockModel(de))
        resp = Node([4.0, 0.0], ClockModel(0.0))
        t_resp = 800e-6
        est = np.mean([sstwr(init, resp, t_resp, False, rng) for _ in range(40)])
        predicted = 0.5 * t_resp * de * 1e-6 * SPEED_OF_LIGHT
        worst = max(worst, abs((est - 4.0 - predicted) / predicted))
        comp = np.mean([sstwr(init, resp, t_resp, True, rng) for _ in range(40)])
        if abs(comp - 4.0) > 0.02:
            return "sstwr-drift-law", False, f"compensated bias {comp - 4.0:.3f} m"
    return "sstwr-drift-law", worst < 0.05, f"worst rel dev {worst:.3%}"


def check_nlls_oracle(seed: int = 3):
    rng = np.random.default_rng(seed)
    for _ in range(10):
        n = int(rng.integers(3, 7))
        anchors = rng.uniform(0.0, 8.0, size=(n, 2))
        truth = rng.uniform(1.0, 7.0, size=2)
        dists = np.linalg.norm(anchors - truth, axis=1) + rng.normal(0.0, 0.05, size=n)
        try:
            p0 = linear_init(anchors, dists)
        except Exception:
            continue
        est = nlls_solve(anchors, dists, p0)
        xs = np.arange(0.0, 8.0, 0.02)
        gx, gy = np.meshgrid(xs, xs)
        grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
        costs = ((np.linalg.norm(grid[:, None, :] - anchors[None], axis=2) - dists) ** 2).sum(axis=1)
        resid = np.linalg.norm(anchors - est.p, axis=1) - dists
        if float(resid @ resid) > float(costs.min()) + 1e-6:
            return "nlls-grid-oracle", False, "solver above grid minimum"
    return "nlls-grid-oracle", True, "10 instances"


ALL_CHECKS = (check_quantization, check_compensation_micro, check_sstwr_drift, check_nlls_oracle)


def run_selftest(out=print) -> bool:
    all_ok = True
    for fn in ALL_CHECKS:
        name, ok, detail = fn()
        out(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
        all_ok = all_ok and ok
    return all_ok
