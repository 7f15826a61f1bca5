"""Deterministic synthetic-face world: expression parameters in, toy images,
motion parameters and ground-truth control values out.

The linear bases (keypoint layout, deformation basis, control map) are fixed
seeded arrays shipped as package data; ``scripts/make_expression_basis.py``
regenerates them.  Everything downstream is a pure function of its inputs, so
identical seeds give bit-identical samples.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DimensionError, NumericError, ValidationError
from .mapping import ControlVector, CONTROL_DIM
from .motion import (
    Keypoints,
    MotionParams,
    euler_zyx,
    project_to_grid,
    transform_keypoints,
)

EXPRESSION_DIM = 8
ANGLE_LIMIT = np.pi / 6
BLOB_SIGMA_CELLS = 1.5
COUNTERPART_OFFSET = 0.05
BASIS_RESOURCE = "expression_basis.npz"

_GRID_HEADER = struct.Struct("<II")  # u32 height, u32 width, little-endian


@dataclass(frozen=True)
class ExpressionParams:
    """Abstract expression coordinates plus head angles."""

    e: np.ndarray           # length 8, entries in [-1, 1]
    yaw: float = 0.0        # radians, |angle| <= pi/6
    pitch: float = 0.0
    roll: float = 0.0
    seed: int = 0

    def __post_init__(self):
        e = np.array(self.e, dtype=np.float64, copy=True)
        if e.shape != (EXPRESSION_DIM,):
            raise DimensionError(f"expression vector must be length {EXPRESSION_DIM}")
        if not np.all(np.isfinite(e)):
            raise NumericError("expression vector contains non-finite entries")
        if np.any(np.abs(e) > 1.0):
            raise ValidationError("expression components must lie in [-1, 1]")
        for name in ("yaw", "pitch", "roll"):
            angle = getattr(self, name)
            if not np.isfinite(angle) or abs(angle) > ANGLE_LIMIT:
                raise ValidationError(f"{name}={angle} outside [-pi/6, pi/6]")
        object.__setattr__(self, "e", e)
        self.e.setflags(write=False)


@dataclass(frozen=True)
class SynthBasis:
    """Seeded linear bases behind the synthetic world."""

    canonical_keypoints: Keypoints      # K x 3
    deformation_basis: np.ndarray       # (3K) x 8, full rank
    control_matrix: np.ndarray          # 30 x 8
    control_bias: np.ndarray            # 30

    @property
    def k(self) -> int:
        return self.canonical_keypoints.k


_DEFAULT_BASIS: SynthBasis | None = None


def load_basis(path: str | Path | None = None) -> SynthBasis:
    """Load the shipped basis file (or an explicit .npz path)."""
    if path is None:
        with resources.files("faceshadow.data").joinpath(BASIS_RESOURCE).open("rb") as fh:
            data = np.load(fh)
            return _basis_from_npz(data)
    data = np.load(path)
    return _basis_from_npz(data)


def _basis_from_npz(data) -> SynthBasis:
    return SynthBasis(
        canonical_keypoints=Keypoints(data["canonical_keypoints"]),
        deformation_basis=np.array(data["deformation_basis"], dtype=np.float64),
        control_matrix=np.array(data["control_matrix"], dtype=np.float64),
        control_bias=np.array(data["control_bias"], dtype=np.float64),
    )


def default_basis() -> SynthBasis:
    global _DEFAULT_BASIS
    if _DEFAULT_BASIS is None:
        _DEFAULT_BASIS = load_basis()
    return _DEFAULT_BASIS


def synth_motion(e: ExpressionParams, basis: SynthBasis | None = None) -> MotionParams:
    """Expression coordinates to a pose bundle.

    deformation = reshape(B @ e), rotation from Z*Y*X Euler angles,
    scale = 1 + 0.1*e[0], translation = (0.05*e[1], 0.05*e[2], 0).
    """
    basis = basis if basis is not None else default_basis()
    delta = (basis.deformation_basis @ e.e).reshape(basis.k, 3)
    rotation = euler_zyx(e.yaw, e.pitch, e.roll)
    scale = 1.0 + 0.1 * e.e[0]
    translation = np.array([0.05 * e.e[1], 0.05 * e.e[2], 0.0])
    return MotionParams(
        rotation=rotation, scale=scale, deformation=delta, translation=translation
    )


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def synth_controls(e: ExpressionParams, basis: SynthBasis | None = None) -> np.ndarray:
    """Ground-truth actuator values: sigmoid(A @ e + b), strictly inside (0, 1)."""
    basis = basis if basis is not None else default_basis()
    return sigmoid(basis.control_matrix @ e.e + basis.control_bias)


def render_toy(x: Keypoints, res: tuple[int, int]) -> np.ndarray:
    """Sum of isotropic Gaussian blobs at projected keypoints, peak-normalized.

    Each blob (sigma 1.5 cells) is accumulated inside a 4-sigma window; the
    final image is divided by its maximum so the peak is exactly 1.  An empty
    keypoint set renders as all zeros.
    """
    h, w = int(res[0]), int(res[1])
    if h < 16 or w < 16:
        raise ValidationError(f"render resolution must be at least 16x16, got {h}x{w}")
    img = np.zeros((h, w), dtype=np.float64)
    if x.k == 0:
        return img
    proj = project_to_grid(x.points, h, w)
    radius = int(np.ceil(4 * BLOB_SIGMA_CELLS))
    inv_two_sigma_sq = 1.0 / (2.0 * BLOB_SIGMA_CELLS ** 2)
    for col, row in proj:
        r0 = max(0, int(np.floor(row)) - radius)
        r1 = min(h, int(np.floor(row)) + radius + 2)
        c0 = max(0, int(np.floor(col)) - radius)
        c1 = min(w, int(np.floor(col)) + radius + 2)
        rr = np.arange(r0, r1, dtype=np.float64) - row
        cc = np.arange(c0, c1, dtype=np.float64) - col
        gr = np.exp(-rr * rr * inv_two_sigma_sq)
        gc = np.exp(-cc * cc * inv_two_sigma_sq)
        img[r0:r1, c0:c1] += np.outer(gr, gc)
    peak = img.max()
    if peak > 0.0:
        img /= peak
    return img


def simulate_inference_counterpart(img: np.ndarray) -> np.ndarray:
    """Fixed domain shift standing in for a generator round trip.

    3x3 box blur (edge padding, so constants stay constant) followed by a
    +0.05 brightness offset, clamped to [0, 1].
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"image must be 2D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("image contains non-finite entries")
    padded = np.pad(arr, 1, mode="edge")
    acc = np.zeros_like(arr)
    for dr in range(3):
        for dc in range(3):
            acc += padded[dr : dr + arr.shape[0], dc : dc + arr.shape[1]]
    return np.clip(acc / 9.0 + COUNTERPART_OFFSET, 0.0, 1.0)


@dataclass(frozen=True)
class SyntheticSample:
    """One training record: toy image, its pose bundle, and true controls."""

    image: np.ndarray
    motion: MotionParams
    truth_controls: ControlVector
    expression: ExpressionParams


def make_sample(
    e: ExpressionParams,
    res: tuple[int, int],
    basis: SynthBasis | None = None,
    seq: int = 0,
) -> SyntheticSample:
    """Render the expression and pair it with its ground-truth controls."""
    basis = basis if basis is not None else default_basis()
    motion = synth_motion(e, basis)
    keypoints = transform_keypoints(basis.canonical_keypoints, motion)
    image = render_toy(keypoints, res)
    controls = ControlVector(values=synth_controls(e, basis), seq=seq)
    return SyntheticSample(image=image, motion=motion, truth_controls=controls, expression=e)


def random_expression(rng: np.random.Generator, seed: int = 0) -> ExpressionParams:
    return ExpressionParams(
        e=rng.uniform(-1.0, 1.0, size=EXPRESSION_DIM),
        yaw=rng.uniform(-ANGLE_LIMIT, ANGLE_LIMIT),
        pitch=rng.uniform(-ANGLE_LIMIT, ANGLE_LIMIT),
        roll=rng.uniform(-ANGLE_LIMIT, ANGLE_LIMIT),
        seed=seed,
    )


class ExpressionTrajectory:
    """Smooth seeded expression path for streaming sources.

    Each expression coordinate follows its own sinusoid; head angles sweep
    inside +-80% of the allowed range.
    """

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.amp = rng.uniform(0.3, 0.9, size=EXPRESSION_DIM)
        self.freq = rng.uniform(0.1, 0.5, size=EXPRESSION_DIM)   # Hz
        self.phase = rng.uniform(0.0, 2 * np.pi, size=EXPRESSION_DIM)
        self.angle_freq = rng.uniform(0.05, 0.3, size=3)
        self.angle_phase = rng.uniform(0.0, 2 * np.pi, size=3)

    def at(self, t: float) -> ExpressionParams:
        e = self.amp * np.sin(2 * np.pi * self.freq * t + self.phase)
        yaw, pitch, roll = 0.8 * ANGLE_LIMIT * np.sin(
            2 * np.pi * self.angle_freq * t + self.angle_phase
        )
        return ExpressionParams(e=e, yaw=yaw, pitch=pitch, roll=roll, seed=self.seed)


# ---------------------------------------------------------------------------
# dataset files: JSON index + per-sample binary grids

def write_grid(path: str | Path, grid: np.ndarray) -> None:
    """Write a grid as u32 height, u32 width, then row-major little-endian f32."""
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"grid must be 2D, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_GRID_HEADER.pack(arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_grid(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_GRID_HEADER.size)
        if len(header) != _GRID_HEADER.size:
            raise ValidationError(f"truncated grid header in {path}")
        h, w = _GRID_HEADER.unpack(header)
        body = fh.read(4 * h * w)
        if len(body) != 4 * h * w:
            raise ValidationError(f"truncated grid body in {path}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


def generate_dataset(
    out_dir: str | Path,
    count: int,
    seed: int,
    res: tuple[int, int] = (32, 32),
    basis: SynthBasis | None = None,
) -> dict:
    """Sample expressions, render them, and write an on-disk dataset.

    Layout: ``index.json`` plus one ``grids/NNNNNN.grid`` file per sample.
    Returns the index structure.
    """
    basis = basis if basis is not None else default_basis()
    out = Path(out_dir)
    grids = out / "grids"
    grids.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        e = random_expression(rng, seed=seed)
        sample = make_sample(e, res, basis, seq=i)
        rel = f"grids/{i:06d}.grid"
        write_grid(out / rel, sample.image)
        records.append(
            {
                "id": i,
                "seed": seed,
                "e": [float(v) for v in e.e],
                "yaw": float(e.yaw),
                "pitch": float(e.pitch),
                "roll": float(e.roll),
                "truth_controls": [float(v) for v in sample.truth_controls.values],
                "grid": rel,
            }
        )
    index = {"version": 1, "res": [int(res[0]), int(res[1])], "count": count, "samples": records}
    (out / "index.json").write_text(json.dumps(index, indent=1))
    return index


def load_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray, dict]:
    """Load a generated dataset directory.

    Returns (images (N, H, W), controls (N, 30), index dict).
    """
    root = Path(path)
    index = json.loads((root / "index.json").read_text())
    h, w = index["res"]
    n = index["count"]
    images = np.empty((n, h, w), dtype=np.float64)
    controls = np.empty((n, CONTROL_DIM), dtype=np.float64)
    for row, rec in enumerate(index["samples"]):
        images[row] = read_grid(root / rec["grid"])
        controls[row] = np.asarray(rec["truth_controls"], dtype=np.float64)
    return images, controls, index
