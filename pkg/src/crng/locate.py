"""Position estimation from range circles: linear initialization plus damped
Gauss-Newton refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry

MAX_CONDITION = 1e8
ANCHOR_EPS_M = 1e-9  # perturbation when an iterate coincides with an anchor
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100


@dataclass(frozen=True)
class PositionEstimate:
    p: np.ndarray
    residual_rms: float
    n_used: int
    converged: bool


def linear_init(anchors, dists) -> np.ndarray:
    """Closed-form start: subtract the first circle equation from the others
    to get a linear system in (x, y), solved least-squares."""
    anchors = np.asarray(anchors, dtype=float)
    dists = np.asarray(dists, dtype=float)
    if anchors.shape[0] < 3:
        raise DegenerateGeometry("need at least 3 anchors")
    x1, y1 = anchors[0]
    d1 = dists[0]
    a_mat = 2.0 * (anchors[1:] - anchors[0])
    b = (
        anchors[1:, 0] ** 2 - x1**2
        + anchors[1:, 1] ** 2 - y1**2
        + d1**2 - dists[1:] ** 2
    )
    if np.linalg.cond(a_mat) > MAX_CONDITION:
        raise DegenerateGeometry("anchors are (near-)collinear")
    sol, *_ = np.linalg.lstsq(a_mat, b, rcond=None)
    return sol


def _residual_jacobian(p, anchors, dists):
    diff = p[None, :] - anchors
    norms = np.linalg.norm(diff, axis=1)
    hit = norms < ANCHOR_EPS_M
    if np.any(hit):
        # nudge off the singularity in a fixed direction
        diff[hit] += np.array([ANCHOR_EPS_M, 0.0])
        norms = np.linalg.norm(diff, axis=1)
    resid = norms - dists
    jac = diff / norms[:, None]
    return resid, jac


def nlls_solve(
    anchors,
    dists,
    p0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    collect_costs: list | None = None,
) -> PositionEstimate:
    """Minimize sum_i (d_i - |p - p_i|)^2 by damped Gauss-Newton.

    Steps are accepted only if the objective does not increase; the damping
    factor shrinks on success and grows on rejection. Stops when an accepted
    step's norm falls below tol or after max_iter iterations.
    """
    anchors = np.asarray(anchors, dtype=float)
    dists = np.asarray(dists, dtype=float)
    p = np.asarray(p0, dtype=float).copy()
    resid, jac = _residual_jacobian(p, anchors, dists)
    cost = float(resid @ resid)
    if collect_costs is not None:
        collect_costs.append(cost)
    lam = 1e-3
    converged = False
    for _ in range(max_iter):
        jtj = jac.T @ jac
        step = np.linalg.solve(jtj + lam * np.eye(2), -(jac.T @ resid))
        resid_new, jac_new = _residual_jacobian(p + step, anchors, dists)
        cost_new = float(resid_new @ resid_new)
        if cost_new <= cost:
            p = p + step
            resid, jac, cost = resid_new, jac_new, cost_new
            lam = max(lam / 3.0, 1e-12)
            if collect_costs is not None:
                collect_costs.append(cost)
            if float(np.linalg.norm(step)) < tol:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e14:
                break
    rms = float(np.sqrt(cost / len(dists)))
    return PositionEstimate(p=p, residual_rms=rms, n_used=len(dists), converged=converged)
