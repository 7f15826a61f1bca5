import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faceshadow.errors import DimensionError, NumericError
from faceshadow.motion import (
    FeatureVolume,
    Keypoints,
    MotionParams,
    apply_stitch,
    constant_stitch,
    generate_intermediate,
    random_rotation,
    relative_transform,
    rotation_z,
    stitch_offset,
    transform_keypoints,
    warp_features,
)

K = 21


def random_params(rng, k=K, scale_range=(0.5, 2.0)):
    return MotionParams(
        rotation=random_rotation(rng),
        scale=rng.uniform(*scale_range),
        deformation=rng.normal(0.0, 0.1, size=(k, 3)),
        translation=rng.normal(0.0, 0.2, size=3),
    )


def naive_relative(drive_i, drive_0, src, x):
    # independent straight-line re-implementation, row by row
    s = src.scale * drive_i.scale / drive_0.scale
    r = drive_i.rotation @ np.linalg.inv(drive_0.rotation) @ src.rotation
    d = src.deformation + drive_i.deformation - drive_0.deformation
    t = src.translation + drive_i.translation - drive_0.translation
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        out[i] = s * (x[i] @ r + d[i]) + t
    return out


# --- transform_keypoints ---------------------------------------------------

def test_transform_zero_keypoints_stay_zero():
    rng = np.random.default_rng(0)
    p = MotionParams(
        rotation=random_rotation(rng),
        scale=1.7,
        deformation=np.zeros((K, 3)),
        translation=np.zeros(3),
    )
    out = transform_keypoints(Keypoints(np.zeros((K, 3))), p)
    assert np.array_equal(out.points, np.zeros((K, 3)))


def test_transform_identity_params():
    rng = np.random.default_rng(1)
    x = Keypoints(rng.uniform(-1, 1, size=(K, 3)))
    p = MotionParams(
        rotation=np.eye(3), scale=1.0, deformation=np.zeros((K, 3)), translation=np.zeros(3)
    )
    assert np.array_equal(transform_keypoints(x, p).points, x.points)


def test_transform_rotation_scale_translation():
    # hand matrix multiplication: (1,0,0) rotated +90deg about z, doubled,
    # lifted by one in z -> (0,2,1)
    x = Keypoints(np.array([[1.0, 0.0, 0.0]]))
    p = MotionParams(
        rotation=rotation_z(np.pi / 2),
        scale=2.0,
        deformation=np.zeros((1, 3)),
        translation=np.array([0.0, 0.0, 1.0]),
    )
    out = transform_keypoints(x, p).points
    assert np.allclose(out, [[0.0, 2.0, 1.0]], atol=1e-12)


def test_transform_shape_mismatch():
    x = Keypoints(np.zeros((5, 3)))
    p = MotionParams(
        rotation=np.eye(3), scale=1.0, deformation=np.zeros((4, 3)), translation=np.zeros(3)
    )
    with pytest.raises(DimensionError):
        transform_keypoints(x, p)


def test_non_finite_keypoints_rejected():
    with pytest.raises(NumericError):
        Keypoints(np.full((K, 3), np.nan))


def test_bad_rotation_rejected():
    with pytest.raises(NumericError):
        MotionParams(
            rotation=np.eye(3) * 1.1, scale=1.0,
            deformation=np.zeros((K, 3)), translation=np.zeros(3),
        )


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_transform_affine_in_keypoints(seed, alpha):
    rng = np.random.default_rng(seed)
    p = random_params(rng)
    a = rng.uniform(-1, 1, size=(K, 3))
    b = rng.uniform(-1, 1, size=(K, 3))
    mixed = transform_keypoints(Keypoints(alpha * a + (1 - alpha) * b), p).points
    combo = alpha * transform_keypoints(Keypoints(a), p).points + (
        1 - alpha
    ) * transform_keypoints(Keypoints(b), p).points
    assert np.max(np.abs(mixed - combo)) < 1e-12


# --- relative_transform ----------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relative_collapses_to_source_at_frame_zero(seed):
    rng = np.random.default_rng(seed)
    src = random_params(rng)
    drive_0 = random_params(rng)
    x = Keypoints(rng.uniform(-1, 1, size=(K, 3)))
    rel = relative_transform(drive_0, drive_0, src, x)
    direct = transform_keypoints(x, src)
    assert np.max(np.abs(rel.points - direct.points)) < 1e-9


def test_relative_translation_only_delta():
    rng = np.random.default_rng(7)
    src = random_params(rng)
    drive_0 = random_params(rng)
    dt = np.array([0.1, -0.2, 0.05])
    drive_i = MotionParams(
        rotation=drive_0.rotation,
        scale=drive_0.scale,
        deformation=drive_0.deformation,
        translation=drive_0.translation + dt,
    )
    x = Keypoints(rng.uniform(-1, 1, size=(K, 3)))
    rel = relative_transform(drive_i, drive_0, src, x)
    x_s = transform_keypoints(x, src)
    assert np.max(np.abs(rel.points - (x_s.points + dt))) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relative_matches_naive_reimplementation(seed):
    rng = np.random.default_rng(seed)
    src, drive_0, drive_i = (random_params(rng) for _ in range(3))
    x = Keypoints(rng.uniform(-1, 1, size=(K, 3)))
    rel = relative_transform(drive_i, drive_0, src, x)
    oracle = naive_relative(drive_i, drive_0, src, x.points)
    assert np.max(np.abs(rel.points - oracle)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relative_rotation_stays_orthonormal(seed):
    rng = np.random.default_rng(seed)
    src, drive_0, drive_i = (random_params(rng) for _ in range(3))
    r_bar = drive_i.rotation @ drive_0.rotation.T @ src.rotation
    assert np.max(np.abs(r_bar @ r_bar.T - np.eye(3))) < 1e-9
    assert abs(np.linalg.det(r_bar) - 1.0) < 1e-9


# --- stitching ---------------------------------------------------------------

def test_stitch_default_is_zero():
    rng = np.random.default_rng(3)
    x_s = Keypoints(rng.uniform(-1, 1, size=(K, 3)))
    x_d = Keypoints(rng.uniform(-1, 1, size=(K, 3)))
    delta = stitch_offset(x_s, x_d)
    assert np.array_equal(delta, np.zeros((K, 3)))
    assert np.array_equal(apply_stitch(x_d, delta).points, x_d.points)


def test_stitch_constant_plugin():
    rng = np.random.default_rng(4)
    x_s = Keypoints(rng.uniform(-1, 1, size=(K, 3)))
    x_d = Keypoints(rng.uniform(-1, 1, size=(K, 3)))
    c = rng.normal(0, 0.01, size=(K, 3))
    delta = stitch_offset(x_s, x_d, policy=constant_stitch(c))
    assert np.array_equal(delta, c)
    assert np.allclose(apply_stitch(x_d, delta).points, x_d.points + c, atol=0)


def test_stitch_shape_mismatch():
    with pytest.raises(DimensionError):
        stitch_offset(Keypoints(np.zeros((3, 3))), Keypoints(np.zeros((4, 3))))


# --- warping ---------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_warp_zero_displacement_is_bit_exact_identity(seed):
    rng = np.random.default_rng(seed)
    vol = FeatureVolume(rng.uniform(0, 1, size=(9, 11, 2)))
    x = Keypoints(rng.uniform(-1, 1, size=(K, 3)))
    out = warp_features(vol, x, x)
    assert np.array_equal(out.grid, vol.grid)


def test_warp_uniform_shift_moves_cell():
    # one hot cell on 8x8x1; +1 grid cell in x for every keypoint
    vol = np.zeros((8, 8, 1))
    vol[3, 3, 0] = 1.0
    rng = np.random.default_rng(5)
    pts = rng.uniform(-0.5, 0.5, size=(K, 3))
    x_s = Keypoints(pts)
    shift = np.zeros(3)
    shift[0] = 2.0 / 7.0  # one cell on an 8-wide grid
    x_d = Keypoints(pts + shift)
    out = warp_features(FeatureVolume(vol), x_s, x_d).grid[:, :, 0]
    # manual shift oracle with border clamp
    expect = np.zeros((8, 8))
    expect[:, 1:] = vol[:, :-1, 0]
    expect[:, 0] = vol[:, 0, 0]
    assert np.max(np.abs(out - expect)) < 1e-9
    assert np.unravel_index(np.argmax(out), out.shape) == (3, 4)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_warp_output_bounded_by_input(seed):
    rng = np.random.default_rng(seed)
    vol = FeatureVolume(rng.uniform(-2, 3, size=(8, 8, 2)))
    x_s = Keypoints(rng.uniform(-1, 1, size=(K, 3)))
    x_d = Keypoints(rng.uniform(-1, 1, size=(K, 3)))
    out = warp_features(vol, x_s, x_d).grid
    assert np.all(np.isfinite(out))
    assert out.min() >= vol.grid.min() - 1e-12
    assert out.max() <= vol.grid.max() + 1e-12


def test_warp_shape_mismatch():
    vol = FeatureVolume(np.zeros((8, 8, 1)))
    with pytest.raises(DimensionError):
        warp_features(vol, Keypoints(np.zeros((3, 3))), Keypoints(np.zeros((4, 3))))


# --- intermediate generation -------------------------------------------------

def test_generate_intermediate_zero():
    out = generate_intermediate(FeatureVolume(np.zeros((8, 8, 3))))
    assert np.array_equal(out.grid, np.zeros((8, 8)))


def test_generate_intermediate_single_channel_identity():
    rng = np.random.default_rng(6)
    grid = rng.uniform(0, 1, size=(8, 8, 1))
    out = generate_intermediate(FeatureVolume(grid))
    assert np.array_equal(out.grid, grid[:, :, 0])


def test_generate_intermediate_channel_mean():
    vol = np.zeros((8, 8, 2))
    vol[:, :, 0] = 0.2
    vol[:, :, 1] = 0.6
    out = generate_intermediate(FeatureVolume(vol))
    assert np.allclose(out.grid, 0.4, atol=1e-15)


def test_generate_intermediate_clamps():
    vol = np.full((8, 8, 1), 3.5)
    out = generate_intermediate(FeatureVolume(vol))
    assert np.array_equal(out.grid, np.ones((8, 8)))
