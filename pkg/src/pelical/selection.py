"""Streaming pair selection: rotation gating and translation voting.

Every matched pair constrains the rotation linearly (FULL3D pairs map the
source direction onto the target direction, PNL pairs confine it to the
back-projection plane of the observed image line).  The gate accumulates
those rows, solves for the best linear map, and measures how far it sits
from SO(3): a pair is only kept when it does not push the estimate away
from the rotation manifold.

Independently, each accepted pair pins the translation to a 3D line.  When
enough of those candidate lines pass near a common point, the translation
is considered observable and the estimate has converged: the lines "vote"
for the true camera offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import CaseKind, Correspondence
from .errors import InsufficientLines, ParallelLines, ParallelPlanes, RankDeficient
from .geometry import (
    CameraIntrinsics,
    line_projection_matrix,
    project_so3,
    skew,
    so3_distance,
)

#: Rows needed before the rotation least-squares problem is determined.
_FULL_ROWS = 9


@dataclass(frozen=True)
class RotationGateState:
    """Accumulated direction constraints and the current rotation estimate.

    ``matrix`` is the unconstrained least-squares solution reshaped 3x3
    (row-major), ``rotation`` its SO(3) projection (None while the system is
    too degenerate to project), and ``distance`` the spectrum distance of
    ``matrix`` to SO(3) -- infinity until enough rows exist to make it
    meaningful.
    """

    C: np.ndarray
    b: np.ndarray
    matrix: np.ndarray | None = None
    rotation: np.ndarray | None = None
    distance: float = np.inf
    underdetermined: bool = True

    @classmethod
    def empty(cls) -> "RotationGateState":
        return cls(C=np.zeros((0, 9)), b=np.zeros(0))

    @property
    def row_count(self) -> int:
        return self.C.shape[0]


def rotation_rows(
    c: Correspondence, K_t: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Linear constraints ``C vec(R) = b`` contributed by one pair.

    FULL3D: three rows encoding ``R d_s = d_t``.  PNL: one row demanding
    ``R d_s`` be orthogonal to the plane normal ``K^T l`` of the observed
    image line (normalized so mixed systems weight both kinds comparably).
    ``vec(R)`` is row-major.
    """
    d_s = c.source_line.d
    if c.kind is CaseKind.FULL3D:
        C = np.zeros((3, 9))
        for i in range(3):
            C[i, 3 * i : 3 * i + 3] = d_s
        return C, np.array(c.target_line_3d.d)
    normal = K_t.camera_matrix.T @ c.target_line_2d.coeffs
    normal = normal / np.linalg.norm(normal)
    return np.kron(normal, d_s)[None, :], np.zeros(1)


def _solve_state(C: np.ndarray, b: np.ndarray) -> RotationGateState:
    sol, *_ = np.linalg.lstsq(C, b, rcond=None)
    M = sol.reshape(3, 3)
    try:
        R, sigma, sigma_target = project_so3(M)
        dist = so3_distance(sigma, sigma_target)
    except RankDeficient:
        R, dist = None, np.inf
    return RotationGateState(
        C=C,
        b=b,
        matrix=M,
        rotation=R,
        distance=dist,
        underdetermined=C.shape[0] < _FULL_ROWS,
    )


def gate_rotation(
    state: RotationGateState,
    new_rows: tuple[np.ndarray, np.ndarray],
    slack: float = 1e-10,
    growth: float = 0.0,
) -> tuple[bool, RotationGateState]:
    """Tentatively add a pair's rows; keep them only if SO(3) distance improves.

    While the accumulated system has fewer than nine rows it cannot reject
    anything (the least-squares fit is underdetermined), so early pairs are
    accepted unconditionally.  Once active, the gate accepts a pair when the
    new distance stays below ``distance * (1 + growth) + slack``.  The
    absolute ``slack`` keeps noise-free streams alive (there the distance
    sits at float round-off and a strict comparison would randomly starve
    the pipeline); the relative ``growth`` budget does the same on noisy
    streams, where each honest pair adds its own fit error and the distance
    fluctuates around the noise floor instead of decreasing monotonically.
    A mismatched pair typically multiplies the distance tens of times over,
    so a growth budget of ~1 still rejects it cleanly.
    """
    C_row, b_row = new_rows
    C_new = np.vstack([state.C, C_row])
    b_new = np.concatenate([state.b, b_row])
    candidate = _solve_state(C_new, b_new)
    if state.row_count < _FULL_ROWS:
        return True, candidate
    if candidate.distance < state.distance * (1.0 + growth) + slack:
        return True, candidate
    return False, state


@dataclass(frozen=True)
class CandidateLine:
    """A 3D line known to contain the true translation."""

    p0: np.ndarray
    u: np.ndarray
    origin: tuple[int | None, CaseKind]

    def __post_init__(self) -> None:
        u = np.asarray(self.u, dtype=float).reshape(3)
        n = np.linalg.norm(u)
        if n < 1e-12:
            raise ValueError("candidate line direction is degenerate")
        object.__setattr__(self, "u", u / n)
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float).reshape(3))

    def distance_to_point(self, p: np.ndarray) -> float:
        diff = np.asarray(p, dtype=float) - self.p0
        return float(np.linalg.norm(diff - (diff @ self.u) * self.u))


def candidate_from_full3d(c: Correspondence, R: np.ndarray) -> CandidateLine:
    """Translation locus of a FULL3D pair given the rotation.

    The moment transport equation leaves ``t`` free only along the rotated
    source direction; the particular solution is
    ``p0 = (R m_s - m_t) x (R d_s)``.
    """
    if c.kind is not CaseKind.FULL3D:
        raise ParallelPlanes("candidate_from_full3d needs a FULL3D pair")
    Rd = R @ c.source_line.d
    p0 = np.cross(R @ c.source_line.m - c.target_line_3d.m, Rd)
    return CandidateLine(p0=p0, u=Rd, origin=(c.obs_id, c.kind))


def candidate_from_pnl(
    c: Correspondence, R: np.ndarray, K_t: CameraIntrinsics
) -> CandidateLine:
    """Translation locus of a PNL pair given the rotation.

    Given the rotation, the observed image line pins ``t`` through two kinds
    of linear constraints.  Each observed 2D endpoint ``x`` contributes a
    moment plane ``(R d_s x P^T x)^T t = -x^T P R m_s`` (P the line
    projection matrix).  Those planes collapse onto each other as the
    rotation nears the exact one (their separation scales with the residual
    of the direction constraint), so by themselves they never pin more than
    a plane: the anchor point along the line stays unobservable from line
    incidence alone.  The observed endpoints, however, are the images of the
    transferred source segment endpoints, so each endpoint/source-endpoint
    match adds the point-transfer rows ``[x]_x K t = -[x]_x K R X``.  The
    stacked system is solved by least squares.  Segment orientation is not
    shared across cameras, so both endpoint orderings are tried; orderings
    implying a segment behind the camera are discarded and the best
    remaining fit wins.  The candidate line runs through that anchor along
    ``R d_s``.

    Raises ParallelPlanes when the 2D endpoints coincide or the stacked
    constraints are rank deficient.
    """
    if c.kind is not CaseKind.PNL:
        raise ParallelPlanes("candidate_from_pnl needs a PNL pair")
    ep = c.target_line_2d.endpoints
    if np.linalg.norm(ep[0] - ep[1]) < 1e-9:
        raise ParallelPlanes("2D endpoints are coincident")
    P = line_projection_matrix(K_t)
    K = K_t.camera_matrix
    Rd = R @ c.source_line.d
    Rm = R @ c.source_line.m

    base_rows: list[np.ndarray] = []
    base_vals: list[float] = []

    def push(rows: list, vals: list, n: np.ndarray, r: float) -> None:
        scale = np.linalg.norm(n)
        if scale < 1e-12:
            return
        rows.append(n / scale)
        vals.append(r / scale)

    for uv in ep:
        x_h = np.array([uv[0], uv[1], 1.0])
        push(base_rows, base_vals, np.cross(Rd, P.T @ x_h), -float(x_h @ (P @ Rm)))

    best: tuple[float, np.ndarray] | None = None
    for order in ((0, 1), (1, 0)):
        rows = list(base_rows)
        vals = list(base_vals)
        picked = c.source_endpoints[list(order)]
        for uv, X in zip(ep, picked):
            x_h = np.array([uv[0], uv[1], 1.0])
            S = skew(x_h)
            lhs = S @ K
            rhs = -S @ (K @ (R @ X))
            for i in range(3):
                push(rows, vals, lhs[i], float(rhs[i]))
        A = np.stack(rows)
        b = np.asarray(vals)
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[2] < 1e-9 * max(1.0, sv[0]):
            continue
        sol, *_ = np.linalg.lstsq(A, b, rcond=None)
        # the swapped ordering is often algebraically consistent too (the
        # endpoint rays and the line direction are coplanar), but it places
        # the transferred segment behind the camera
        depths = [(R @ X + sol)[2] for X in picked]
        if min(depths) <= 0.0:
            continue
        misfit = float(np.linalg.norm(A @ sol - b))
        if best is None or misfit < best[0]:
            best = (misfit, sol)
    if best is None:
        raise ParallelPlanes("endpoint planes are degenerate")
    return CandidateLine(p0=best[1], u=Rd, origin=(c.obs_id, c.kind))


def equidistant_point(l1: CandidateLine, l2: CandidateLine) -> np.ndarray:
    """Midpoint of the common perpendicular of two candidate lines."""
    u1, u2 = l1.u, l2.u
    cross = np.cross(u1, u2)
    if np.linalg.norm(cross) < 1e-9:
        raise ParallelLines("candidate lines are parallel")
    w0 = l1.p0 - l2.p0
    b = float(u1 @ u2)
    d = float(u1 @ w0)
    e = float(u2 @ w0)
    denom = 1.0 - b * b
    s = (b * e - d) / denom
    t = (e - b * d) / denom
    q1 = l1.p0 + s * u1
    q2 = l2.p0 + t * u2
    return 0.5 * (q1 + q2)


@dataclass(frozen=True)
class VotingResult:
    """Outcome of convergence voting over candidate translation lines."""

    converged: bool
    inlier_indices: tuple[int, ...]
    convergence_point: np.ndarray | None
    epsilon_d: float
    vote_threshold: int


def convergence_voting(
    lines: list[CandidateLine],
    epsilon_d: float,
    vote_threshold: int,
) -> VotingResult:
    """Find the point supported by the most candidate lines.

    Every non-parallel pair of lines proposes the midpoint of its common
    perpendicular; the proposal whose ``epsilon_d``-neighborhood captures
    the most lines wins (ties by the smaller summed inlier distance).  The
    vote converges when the winning set reaches ``vote_threshold``.
    """
    n = len(lines)
    if n < 2:
        raise InsufficientLines("voting needs at least two candidate lines")
    p0 = np.stack([l.p0 for l in lines])  # (n, 3)
    u = np.stack([l.u for l in lines])  # (n, 3)

    # all-pairs common-perpendicular midpoints, batched (same formula as
    # equidistant_point); parallel pairs are dropped
    ii, jj = np.triu_indices(n, k=1)
    u1, u2 = u[ii], u[jj]
    ok = np.linalg.norm(np.cross(u1, u2), axis=1) >= 1e-9
    if not np.any(ok):
        raise InsufficientLines("no non-parallel candidate line pair")
    u1, u2 = u1[ok], u2[ok]
    w0 = p0[ii[ok]] - p0[jj[ok]]
    b = np.einsum("ij,ij->i", u1, u2)
    d = np.einsum("ij,ij->i", u1, w0)
    e = np.einsum("ij,ij->i", u2, w0)
    denom = 1.0 - b * b
    s = (b * e - d) / denom
    t = (e - b * d) / denom
    q1 = p0[ii[ok]] + s[:, None] * u1
    q2 = p0[jj[ok]] + t[:, None] * u2
    pts = 0.5 * (q1 + q2)  # (k, 3)
    diff = pts[:, None, :] - p0[None, :, :]  # (k, n, 3)
    along = np.einsum("knj,nj->kn", diff, u)
    perp = diff - along[..., None] * u[None, :, :]
    dist = np.linalg.norm(perp, axis=2)  # (k, n)
    member = dist < epsilon_d
    counts = member.sum(axis=1)
    sums = np.where(member, dist, 0.0).sum(axis=1)
    order = np.lexsort((sums, -counts))
    best = order[0]
    inliers = tuple(int(i) for i in np.flatnonzero(member[best]))
    return VotingResult(
        converged=len(inliers) >= vote_threshold,
        inlier_indices=inliers,
        convergence_point=pts[best],
        epsilon_d=epsilon_d,
        vote_threshold=vote_threshold,
    )
