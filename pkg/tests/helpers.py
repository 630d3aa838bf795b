"""Shared synthetic-data builders for the test suite.

Everything here constructs *algebraically exact* inputs from a known pose,
without going through the simulator, so solver/selection tests do not
depend on the modules they are meant to check.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from pelical import (
    CameraIntrinsics,
    Extrinsics,
    Line2D,
    LineObservation,
    assemble,
    plucker_from_points,
    transform_line,
)
from pelical.constraints import CaseKind, Correspondence

DEFAULT_K = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480)


def rand_rotation(rng: np.random.Generator, max_deg: float = 80.0) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, np.deg2rad(max_deg))
    return Rotation.from_rotvec(angle * axis).as_matrix()


def rand_truth(
    rng: np.random.Generator, max_deg: float = 80.0, max_t: float = 0.6
) -> Extrinsics:
    t = rng.normal(size=3)
    t = t / np.linalg.norm(t) * rng.uniform(0.0, max_t)
    return Extrinsics(rand_rotation(rng, max_deg), t)


def rand_segment(
    rng: np.random.Generator, depth: float = 2.5, spread: float = 1.5, half: float = 0.8
) -> tuple:
    """A random 3D segment in front of the source camera."""
    p = rng.normal(size=3) * spread + np.array([0.0, 0.0, depth])
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    a, b = p - half * d, p + half * d
    return plucker_from_points(a, b), np.stack([a, b])


def make_correspondence(
    rng: np.random.Generator,
    truth: Extrinsics,
    kind: CaseKind,
    K: CameraIntrinsics = DEFAULT_K,
    obs_id: int | None = None,
) -> Correspondence:
    """Exact correspondence consistent with ``truth`` (no noise).

    Segments are redrawn until the transferred endpoints sit safely in
    front of the target camera and project to sane pixel coordinates, so
    every 2D observation could have come from a real detector.
    """
    while True:
        src, ends = rand_segment(rng)
        t_ends = truth.transform_points(ends)
        if np.min(t_ends[:, 2]) < 0.2:
            continue
        uv = np.stack([K.project(p) for p in t_ends])
        if np.max(np.abs(uv)) > 4000.0 or np.linalg.norm(uv[0] - uv[1]) < 5.0:
            continue
        break
    line2d = Line2D.from_endpoints(uv[0], uv[1])
    if kind is CaseKind.FULL3D:
        return Correspondence(
            kind=kind,
            source_line=src,
            source_endpoints=ends,
            target_line_2d=line2d,
            source_inlier_ratio=1.0,
            target_inlier_ratio=1.0,
            target_line_3d=transform_line(src, truth),
            target_endpoints=t_ends,
            obs_id=obs_id,
        )
    return Correspondence(
        kind=kind,
        source_line=src,
        source_endpoints=ends,
        target_line_2d=line2d,
        source_inlier_ratio=1.0,
        target_inlier_ratio=0.0,
        obs_id=obs_id,
    )


def consistent_correspondences(
    rng: np.random.Generator,
    truth: Extrinsics,
    n_full3d: int,
    n_pnl: int,
    K: CameraIntrinsics = DEFAULT_K,
) -> list[Correspondence]:
    cs = [
        make_correspondence(rng, truth, CaseKind.FULL3D, K, obs_id=i)
        for i in range(n_full3d)
    ]
    cs += [
        make_correspondence(rng, truth, CaseKind.PNL, K, obs_id=n_full3d + i)
        for i in range(n_pnl)
    ]
    return cs


def consistent_system(
    rng: np.random.Generator,
    truth: Extrinsics,
    n_full3d: int = 4,
    n_pnl: int = 2,
    K: CameraIntrinsics = DEFAULT_K,
):
    cs = consistent_correspondences(rng, truth, n_full3d, n_pnl, K)
    return assemble(cs, K), cs


def make_observation(
    rng: np.random.Generator,
    truth: Extrinsics,
    kind: CaseKind,
    K: CameraIntrinsics = DEFAULT_K,
    obs_id: int = 0,
    n_samples: int = 40,
    noise_3d: float = 0.0,
) -> LineObservation:
    """Raw stream observation consistent with ``truth`` (both depths exact).

    ``kind`` controls whether target depth samples are present; classification
    itself is still up to the pipeline.
    """
    while True:
        _, ends = rand_segment(rng)
        t_ends = truth.transform_points(ends)
        if np.min(t_ends[:, 2]) < 0.2 or np.min(ends[:, 2]) < 0.2:
            continue
        t_uv = np.stack([K.project(p) for p in t_ends])
        s_uv = np.stack([K.project(p) for p in ends])
        if np.max(np.abs(t_uv)) > 4000.0 or np.linalg.norm(t_uv[0] - t_uv[1]) < 5.0:
            continue
        if np.max(np.abs(s_uv)) > 4000.0 or np.linalg.norm(s_uv[0] - s_uv[1]) < 5.0:
            continue
        break
    ts = np.linspace(0.0, 1.0, n_samples)[:, None]
    src_samples = ends[0] + ts * (ends[1] - ends[0])
    if noise_3d > 0.0:
        src_samples = src_samples + rng.normal(size=src_samples.shape) * noise_3d
    tgt_samples = None
    if kind is CaseKind.FULL3D:
        tgt_samples = truth.transform_points(ends[0] + ts * (ends[1] - ends[0]))
        if noise_3d > 0.0:
            tgt_samples = tgt_samples + rng.normal(size=tgt_samples.shape) * noise_3d
    return LineObservation(
        obs_id=obs_id,
        source_samples=src_samples,
        target_samples=tgt_samples,
        source_2d=Line2D.from_endpoints(s_uv[0], s_uv[1]),
        target_2d=Line2D.from_endpoints(t_uv[0], t_uv[1]),
    )
