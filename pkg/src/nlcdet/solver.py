"""Recovery of a 7-DOF box from (global point, NLC) correspondences.

Each correspondence contributes three scalar residuals, so three generic
points already give nine equations for the seven unknowns; use
:func:`dof_analysis` to audit observability of a particular configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Underdetermined
from .geometry import Box3D, normalize_angle, rot_z
from .nlc import lidar_to_nlc

__all__ = ["SolveOptions", "SolveReport", "solve_box", "dof_analysis"]


@dataclass(frozen=True)
class SolveOptions:
    max_iterations: int = 100
    tol: float = 1e-10
    lm_damping_init: float = 1e-3


@dataclass
class SolveReport:
    box: Box3D
    rms_residual: float
    iterations: int
    condition_estimate: float
    converged: bool
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "box": {
                "center": self.box.center.tolist(),
                "l": self.box.l,
                "w": self.box.w,
                "h": self.box.h,
                "yaw": self.box.yaw,
            },
            "rms_residual": self.rms_residual,
            "iterations": self.iterations,
            "condition_estimate": self.condition_estimate,
            "converged": self.converged,
            "degenerate": self.degenerate,
        }


def _params_from_box(b: Box3D) -> np.ndarray:
    return np.concatenate(
        [b.center, np.log([b.l, b.w, b.h]), [b.yaw]]
    )


def _box_from_params(q: np.ndarray) -> Box3D:
    return Box3D(
        center=q[:3],
        l=float(np.exp(q[3])),
        w=float(np.exp(q[4])),
        h=float(np.exp(q[5])),
        yaw=float(q[6]),
    )


def _residuals_and_jacobian(q: np.ndarray, pts: np.ndarray, nlcs: np.ndarray):
    """Stacked residuals r = nlc(p; box) - n and the analytic (3N, 7) Jacobian.

    Parameters are (cx, cy, cz, log l, log w, log h, yaw).
    """
    c = q[:3]
    dims = np.exp(q[3:6])
    theta = q[6]
    rot = rot_z(theta)
    d = pts - c  # (N, 3)
    local = d @ rot  # R^T d
    n = local / dims + 0.5
    res = (n - nlcs).ravel()

    npts = len(pts)
    jac = np.zeros((npts, 3, 7))
    # d n / d c = -(1/dims) * R^T
    jac[:, :, :3] = -(rot.T / dims[:, None])[None, :, :]
    # d n_k / d log(dim_k) = -(n_k - 0.5)
    for k in range(3):
        jac[:, k, 3 + k] = -(n[:, k] - 0.5)
    # d local / d theta = (dR/dtheta)^T d
    ct, st = np.cos(theta), np.sin(theta)
    jac[:, 0, 6] = (-st * d[:, 0] + ct * d[:, 1]) / dims[0]
    jac[:, 1, 6] = (-ct * d[:, 0] - st * d[:, 1]) / dims[1]
    return res, jac.reshape(3 * npts, 7)


def _default_init(pts: np.ndarray, nlcs: np.ndarray | None = None) -> Box3D:
    """Heuristic start: centroid, PCA-aligned extents, principal BEV axis.

    The PCA axis is only defined up to sign; when NLC targets are available
    the sign is chosen so the axis points toward increasing x_nlc.
    """
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    xy = centered[:, :2]
    cov = xy.T @ xy / max(len(pts), 1)
    evals, evecs = np.linalg.eigh(cov)
    axis = evecs[:, np.argmax(evals)]
    if nlcs is not None:
        alignment = float((xy @ axis) @ (nlcs[:, 0] - 0.5))
        if alignment < 0:
            axis = -axis
    theta = float(np.arctan2(axis[1], axis[0]))
    rot = rot_z(theta)
    aligned = centered @ rot
    extents = aligned.max(axis=0) - aligned.min(axis=0)
    extents = np.maximum(extents, 0.1)
    return Box3D(center=centroid, l=extents[0], w=extents[1], h=extents[2], yaw=theta)


def solve_box(
    correspondences: np.ndarray,
    init: Box3D | None = None,
    opts: SolveOptions = SolveOptions(),
) -> SolveReport:
    """Least-squares fit of a 7-DOF box to (point, NLC) correspondences.

    ``correspondences`` is (N, 6): LiDAR xyz followed by the NLC triple.
    Minimizes the summed squared NLC residual by Levenberg-Marquardt with an
    analytic Jacobian; dimensions stay positive through a log
    parameterization.  Accepted steps never increase the residual.
    """
    corrs = np.asarray(correspondences, dtype=float).reshape(-1, 6)
    if len(corrs) < 3:
        raise Underdetermined(f"need at least 3 correspondences, got {len(corrs)}")
    # canonical input order: the result is invariant to relabeling
    order = np.lexsort(tuple(corrs[:, k] for k in range(5, -1, -1)))
    corrs = corrs[order]
    pts, nlcs = corrs[:, :3], corrs[:, 3:]

    q = _params_from_box(init if init is not None else _default_init(pts, nlcs))
    res, jac = _residuals_and_jacobian(q, pts, nlcs)
    cost = float(res @ res)
    lam = opts.lm_damping_init
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iterations + 1):
        jtj = jac.T @ jac
        jtr = jac.T @ res
        # Marquardt scaling, floored so unobservable parameters stay damped
        scale = np.diag(jtj) + 1e-12 * max(np.diag(jtj).max(), 1.0)
        try:
            step = np.linalg.solve(jtj + lam * np.diag(scale), -jtr)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        q_new = q + step
        # keep dimensions representable; beyond this range the fit is hopeless
        q_new[3:6] = np.clip(q_new[3:6], -30.0, 30.0)
        res_new, jac_new = _residuals_and_jacobian(q_new, pts, nlcs)
        cost_new = float(res_new @ res_new)
        if cost_new <= cost:
            rms_old = np.sqrt(cost / len(res))
            rms_new = np.sqrt(cost_new / len(res))
            q, res, jac, cost = q_new, res_new, jac_new, cost_new
            lam *= 0.5
            if rms_old - rms_new < opts.tol:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e12:
                break

    sv = np.linalg.svd(jac, compute_uv=False)
    condition = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    degenerate = condition > 1e8
    if degenerate:
        converged = False
    q[6] = normalize_angle(q[6])
    return SolveReport(
        box=_box_from_params(q),
        rms_residual=float(np.sqrt(cost / len(res))),
        iterations=iterations,
        condition_estimate=condition,
        converged=converged,
        degenerate=degenerate,
    )


def dof_analysis(
    correspondences: np.ndarray, at: Box3D | None = None
) -> dict:
    """Observability audit: equation count and numeric Jacobian rank.

    The Jacobian is evaluated at ``at`` when given, otherwise at a
    least-squares estimate (falling back to the default initializer when a
    solve is not possible).  Rank counts singular values above
    1e-10 x sigma_max.
    """
    corrs = np.asarray(correspondences, dtype=float).reshape(-1, 6)
    if len(corrs) < 1:
        raise Underdetermined("need at least 1 correspondence")
    pts, nlcs = corrs[:, :3], corrs[:, 3:]
    if at is None:
        if len(corrs) >= 3:
            try:
                at = solve_box(corrs).box
            except np.linalg.LinAlgError:
                at = _default_init(pts, nlcs)
        else:
            at = _default_init(pts, nlcs)
    _, jac = _residuals_and_jacobian(_params_from_box(at), pts, nlcs)
    sv = np.linalg.svd(jac, compute_uv=False)
    rank = int(np.sum(sv > 1e-10 * sv[0])) if sv[0] > 0 else 0
    return {"equations": 3 * len(corrs), "unknowns": 7, "jacobian_rank": rank}
