"""Implicit-keypoint motion transfer over a toy feature-volume world.

Keypoints live in canonical unit-cube coordinates ([-1, 1] per axis) and use
the row-vector convention throughout: a pose rotation acts on the right,
``x @ R``.  Mixing conventions silently transposes rotations, so every
rotation helper in this module produces row-convention matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, NumericError

DEFAULT_KEYPOINT_COUNT = 21

ROTATION_TOL = 1e-9


def _as_float_array(a, name: str) -> np.ndarray:
    # Own a copy so freezing the value never touches caller arrays.
    arr = np.array(a, dtype=np.float64, copy=True)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class Keypoints:
    """K x 3 array of 3D facial keypoints (canonical or posed)."""

    points: np.ndarray

    def __post_init__(self):
        pts = _as_float_array(self.points, "keypoints")
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DimensionError(f"keypoints must be Kx3, got {pts.shape}")
        object.__setattr__(self, "points", pts)
        self.points.setflags(write=False)

    @property
    def k(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class MotionParams:
    """Per-frame pose bundle: rotation R, scale s, deformation delta, translation t."""

    rotation: np.ndarray      # 3x3, orthonormal, det +1
    scale: float              # > 0
    deformation: np.ndarray   # Kx3
    translation: np.ndarray   # length 3

    def __post_init__(self):
        rot = _as_float_array(self.rotation, "rotation")
        if rot.shape != (3, 3):
            raise DimensionError(f"rotation must be 3x3, got {rot.shape}")
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > ROTATION_TOL:
            raise NumericError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(rot) - 1.0) > ROTATION_TOL:
            raise NumericError("rotation determinant is not +1 within 1e-9")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise NumericError(f"scale must be positive, got {self.scale}")
        deform = _as_float_array(self.deformation, "deformation")
        if deform.ndim != 2 or deform.shape[1] != 3:
            raise DimensionError(f"deformation must be Kx3, got {deform.shape}")
        trans = _as_float_array(self.translation, "translation")
        if trans.shape != (3,):
            raise DimensionError(f"translation must be length 3, got {trans.shape}")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "deformation", deform)
        object.__setattr__(self, "translation", trans)
        for arr in (self.rotation, self.deformation, self.translation):
            arr.setflags(write=False)

    @property
    def k(self) -> int:
        return self.deformation.shape[0]


@dataclass(frozen=True)
class FeatureVolume:
    """H x W x Ch grid of real feature values (appearance stand-in)."""

    grid: np.ndarray

    def __post_init__(self):
        grid = _as_float_array(self.grid, "feature volume")
        if grid.ndim == 2:
            grid = grid[:, :, np.newaxis]
        if grid.ndim != 3:
            raise DimensionError(f"feature volume must be HxWxCh, got {grid.shape}")
        if grid.shape[0] < 4 or grid.shape[1] < 4:
            raise DimensionError(f"feature volume needs h, w >= 4, got {grid.shape}")
        object.__setattr__(self, "grid", grid)
        self.grid.setflags(write=False)

    @property
    def h(self) -> int:
        return self.grid.shape[0]

    @property
    def w(self) -> int:
        return self.grid.shape[1]

    @property
    def ch(self) -> int:
        return self.grid.shape[2]


@dataclass(frozen=True)
class IntermediateRepr:
    """H x W grid in [0, 1]: the motion-transferred face image."""

    grid: np.ndarray
    frame_seq: int = 0

    def __post_init__(self):
        grid = _as_float_array(self.grid, "intermediate grid")
        if grid.ndim != 2:
            raise DimensionError(f"intermediate grid must be HxW, got {grid.shape}")
        if grid.size and (grid.min() < 0.0 or grid.max() > 1.0):
            raise NumericError("intermediate grid entries must lie in [0, 1]")
        object.__setattr__(self, "grid", grid)
        self.grid.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape  # type: ignore[return-value]


@dataclass
class SourceCache:
    """Warmup products of the source face, computed once and reused per frame."""

    canonical_keypoints: Keypoints
    source_params: MotionParams
    source_keypoints: Keypoints
    feature_volume: FeatureVolume
    compute_count: int = 1


# ---------------------------------------------------------------------------
# rotation helpers (row-vector convention)

def rotation_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Compose Z (yaw), then Y (pitch), then X (roll) in the row convention."""
    return rotation_z(yaw) @ rotation_y(pitch) @ rotation_x(roll)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation with det +1 via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# ---------------------------------------------------------------------------
# keypoint transforms

def transform_keypoints(x_c: Keypoints, p: MotionParams) -> Keypoints:
    """Absolute pose transform: s * (x_c @ R + delta) + t."""
    if p.deformation.shape != x_c.points.shape:
        raise DimensionError(
            f"deformation shape {p.deformation.shape} does not match "
            f"keypoints {x_c.points.shape}"
        )
    out = p.scale * (x_c.points @ p.rotation + p.deformation) + p.translation
    return Keypoints(out)


def relative_transform(
    drive_i: MotionParams,
    drive_0: MotionParams,
    src: MotionParams,
    x_cs: Keypoints,
) -> Keypoints:
    """Driving keypoints conditioned on the source pose and the first driving frame.

    Composes the relative pose
        s_bar = s_src * (s_i / s_0)
        R_bar = R_i @ R_0^-1 @ R_src
        d_bar = d_src + d_i - d_0
        t_bar = t_src + t_i - t_0
    and applies it to the source canonical keypoints.  The symbol order of
    R_bar is deliberate; rotations do not commute.  No translation component
    is zeroed out.
    """
    if drive_0.scale <= 0:
        raise NumericError("first-driving-frame scale must be positive")
    s_bar = src.scale * (drive_i.scale / drive_0.scale)
    # R_0 is orthonormal by the MotionParams invariant, so its inverse is its
    # transpose.
    r_bar = drive_i.rotation @ drive_0.rotation.T @ src.rotation
    d_bar = src.deformation + drive_i.deformation - drive_0.deformation
    t_bar = src.translation + drive_i.translation - drive_0.translation
    rel = MotionParams(rotation=r_bar, scale=s_bar, deformation=d_bar, translation=t_bar)
    return transform_keypoints(x_cs, rel)


# ---------------------------------------------------------------------------
# stitching

StitchPolicy = Callable[[np.ndarray, np.ndarray], np.ndarray]


def zero_stitch(x_s: np.ndarray, x_d: np.ndarray) -> np.ndarray:
    return np.zeros_like(x_d)


def constant_stitch(offset: np.ndarray) -> StitchPolicy:
    """Build a policy returning a fixed Kx3 offset (for plug-in tests)."""
    fixed = np.asarray(offset, dtype=np.float64)

    def policy(x_s: np.ndarray, x_d: np.ndarray) -> np.ndarray:
        if fixed.shape != x_d.shape:
            raise DimensionError(f"stitch offset {fixed.shape} vs keypoints {x_d.shape}")
        return fixed

    return policy


def stitch_offset(
    x_s: Keypoints, x_d: Keypoints, policy: Optional[StitchPolicy] = None
) -> np.ndarray:
    """Deformation offset added to the driving keypoints before warping.

    The default policy returns the zero offset; a learned estimator can be
    plugged in through ``policy``.
    """
    if x_s.points.shape != x_d.points.shape:
        raise DimensionError(
            f"source {x_s.points.shape} and driving {x_d.points.shape} differ"
        )
    fn = policy if policy is not None else zero_stitch
    delta = np.asarray(fn(x_s.points, x_d.points), dtype=np.float64)
    if delta.shape != x_d.points.shape:
        raise DimensionError(f"stitch policy returned shape {delta.shape}")
    return delta


def apply_stitch(x_d: Keypoints, delta: np.ndarray) -> Keypoints:
    """x_d' = x_d + delta."""
    if delta.shape != x_d.points.shape:
        raise DimensionError(f"offset shape {delta.shape} vs {x_d.points.shape}")
    return Keypoints(x_d.points + delta)


# ---------------------------------------------------------------------------
# warping and generation

RBF_BANDWIDTH_CELLS = 2.0


def project_to_grid(points: np.ndarray, h: int, w: int) -> np.ndarray:
    """Map keypoint (x, y) from [-1, 1] to clamped (col, row) grid coordinates.

    z is dropped.  Output columns lie in [0, w-1], rows in [0, h-1].
    """
    pts = np.asarray(points, dtype=np.float64)
    col = (pts[:, 0] + 1.0) * 0.5 * (w - 1)
    row = (pts[:, 1] + 1.0) * 0.5 * (h - 1)
    col = np.clip(col, 0.0, w - 1.0)
    row = np.clip(row, 0.0, h - 1.0)
    return np.stack([col, row], axis=1)


def _bilinear_sample(plane: np.ndarray, col: np.ndarray, row: np.ndarray) -> np.ndarray:
    """Sample a 2D plane at fractional coordinates, clamping to the border."""
    h, w = plane.shape
    col = np.clip(col, 0.0, w - 1.0)
    row = np.clip(row, 0.0, h - 1.0)
    c0 = np.floor(col).astype(np.intp)
    r0 = np.floor(row).astype(np.intp)
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    wc = col - c0
    wr = row - r0
    top = plane[r0, c0] * (1.0 - wc) + plane[r0, c1] * wc
    bot = plane[r1, c0] * (1.0 - wc) + plane[r1, c1] * wc
    return top * (1.0 - wr) + bot * wr


def warp_features(
    f_s: FeatureVolume, x_s: Keypoints, x_d_prime: Keypoints
) -> FeatureVolume:
    """Warp the source feature volume by keypoint displacements.

    Per-keypoint displacements (x_d' - x_s, first two coordinates, projected
    into grid cells) are interpolated into a dense field with a normalized
    Gaussian RBF (bandwidth 2 cells), then f_s is backward-resampled with
    bilinear interpolation.  Zero displacement reproduces f_s exactly.
    """
    if x_s.points.shape != x_d_prime.points.shape:
        raise DimensionError(
            f"keypoint shapes differ: {x_s.points.shape} vs {x_d_prime.points.shape}"
        )
    h, w = f_s.h, f_s.w
    anchors = project_to_grid(x_s.points, h, w)       # (K, 2) as (col, row)
    targets = project_to_grid(x_d_prime.points, h, w)
    disp = targets - anchors                           # grid-cell units
    if not np.all(np.isfinite(disp)):
        raise NumericError("keypoint displacement is non-finite")

    cols = np.arange(w, dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)
    # (H, W, K) squared distance from every cell to every anchor
    dc = cols[np.newaxis, :, np.newaxis] - anchors[:, 0][np.newaxis, np.newaxis, :]
    dr = rows[:, np.newaxis, np.newaxis] - anchors[:, 1][np.newaxis, np.newaxis, :]
    weight = np.exp(-(dc * dc + dr * dr) / (2.0 * RBF_BANDWIDTH_CELLS ** 2))
    total = weight.sum(axis=2)
    safe_total = np.where(total > 0.0, total, 1.0)
    field_c = (weight @ disp[:, 0]) / safe_total
    field_r = (weight @ disp[:, 1]) / safe_total

    # backward warp: content displaced by d is fetched from p - d
    sample_c = cols[np.newaxis, :] - field_c
    sample_r = rows[:, np.newaxis] - field_r
    out = np.empty_like(f_s.grid)
    for c in range(f_s.ch):
        out[:, :, c] = _bilinear_sample(f_s.grid[:, :, c], sample_c, sample_r)
    return FeatureVolume(out)


def generate_intermediate(warped: FeatureVolume, frame_seq: int = 0) -> IntermediateRepr:
    """Collapse channels by mean and clamp into [0, 1]."""
    grid = np.clip(warped.grid.mean(axis=2), 0.0, 1.0)
    return IntermediateRepr(grid=grid, frame_seq=frame_seq)
