import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faceshadow.errors import ValidationError
from faceshadow.motion import Keypoints
from faceshadow.synth import (
    ExpressionParams,
    ExpressionTrajectory,
    SynthBasis,
    default_basis,
    generate_dataset,
    load_dataset,
    make_sample,
    random_expression,
    read_grid,
    render_toy,
    simulate_inference_counterpart,
    synth_controls,
    synth_motion,
    write_grid,
)


def test_expression_range_validation():
    with pytest.raises(ValidationError):
        ExpressionParams(e=np.full(8, 1.5))
    with pytest.raises(ValidationError):
        ExpressionParams(e=np.zeros(8), yaw=1.0)


def test_neutral_expression_gives_identity_pose():
    p = synth_motion(ExpressionParams(e=np.zeros(8)))
    assert np.array_equal(p.rotation, np.eye(3))
    assert p.scale == 1.0
    assert np.array_equal(p.deformation, np.zeros((21, 3)))
    assert np.array_equal(p.translation, np.zeros(3))


def test_first_axis_expression_gives_basis_column():
    basis = default_basis()
    e = np.zeros(8)
    e[0] = 1.0
    p = synth_motion(ExpressionParams(e=e), basis)
    assert p.scale == pytest.approx(1.1)
    assert np.allclose(p.deformation.ravel(), basis.deformation_basis[:, 0], atol=0)


def test_deformation_is_odd_in_expression():
    rng = np.random.default_rng(0)
    e = rng.uniform(-1, 1, size=8)
    plus = synth_motion(ExpressionParams(e=e))
    minus = synth_motion(ExpressionParams(e=-e))
    assert np.allclose(plus.deformation, -minus.deformation, atol=1e-15)


def test_controls_sigmoid_midpoint_with_zero_bias():
    basis = default_basis()
    zeroed = SynthBasis(
        canonical_keypoints=basis.canonical_keypoints,
        deformation_basis=basis.deformation_basis,
        control_matrix=basis.control_matrix,
        control_bias=np.zeros(30),
    )
    y = synth_controls(ExpressionParams(e=np.zeros(8)), zeroed)
    assert np.array_equal(y, np.full(30, 0.5))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_controls_strictly_inside_unit_interval(seed):
    rng = np.random.default_rng(seed)
    y = synth_controls(random_expression(rng))
    assert np.all(y > 0.0) and np.all(y < 1.0)


def test_controls_match_scripted_sigmoid():
    # independent re-evaluation with math.exp, seed-42 unit vector
    basis = default_basis()
    rng = np.random.default_rng(42)
    e = np.zeros(8)
    e[int(rng.integers(8))] = 1.0
    y = synth_controls(ExpressionParams(e=e), basis)
    for i in range(30):
        z = sum(basis.control_matrix[i, j] * e[j] for j in range(8)) + basis.control_bias[i]
        assert abs(y[i] - 1.0 / (1.0 + math.exp(-z))) < 1e-12


# --- rendering ---------------------------------------------------------------

def test_render_empty_scene_is_black():
    img = render_toy(Keypoints(np.zeros((0, 3))), (16, 16))
    assert np.array_equal(img, np.zeros((16, 16)))


def test_render_single_centered_keypoint_peaks_at_center():
    img = render_toy(Keypoints(np.array([[0.0, 0.0, 0.3]])), (17, 17))
    assert img[8, 8] == 1.0
    assert img.max() == 1.0


def test_render_rejects_tiny_resolution():
    with pytest.raises(ValidationError):
        render_toy(Keypoints(np.zeros((1, 3))), (8, 8))


def test_render_shift_moves_argmax():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.4, 0.4, size=(5, 3))
    res = (33, 33)
    base = render_toy(Keypoints(pts), res)
    cells = 3
    delta = np.array([cells * 2.0 / (res[1] - 1), 0.0, 0.0])
    shifted = render_toy(Keypoints(pts + delta), res)
    r0, c0 = np.unravel_index(np.argmax(base), base.shape)
    r1, c1 = np.unravel_index(np.argmax(shifted), shifted.shape)
    assert (r1, c1) == (r0, c0 + cells)


# --- counterpart transform ----------------------------------------------------

def test_counterpart_of_zeros_is_offset():
    out = simulate_inference_counterpart(np.zeros((10, 10)))
    assert np.allclose(out, 0.05, atol=1e-15)


def test_counterpart_of_ones_clamps():
    out = simulate_inference_counterpart(np.ones((10, 10)))
    assert np.array_equal(out, np.ones((10, 10)))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.95))
def test_counterpart_constant_shift(c):
    out = simulate_inference_counterpart(np.full((12, 9), c))
    assert np.max(np.abs(out - (c + 0.05))) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_counterpart_is_linf_contraction(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, size=(12, 12))
    b = rng.uniform(0, 1, size=(12, 12))
    gap = np.max(np.abs(simulate_inference_counterpart(a) - simulate_inference_counterpart(b)))
    assert gap <= np.max(np.abs(a - b)) + 1e-12


# --- samples and datasets -----------------------------------------------------

def test_sample_determinism():
    rng1 = np.random.default_rng(9)
    rng2 = np.random.default_rng(9)
    e1 = random_expression(rng1, seed=9)
    e2 = random_expression(rng2, seed=9)
    s1 = make_sample(e1, (32, 32))
    s2 = make_sample(e2, (32, 32))
    assert np.array_equal(s1.image, s2.image)
    assert np.array_equal(s1.truth_controls.values, s2.truth_controls.values)
    assert np.array_equal(s1.motion.deformation, s2.motion.deformation)


def test_control_map_injective_on_lattice():
    rng = np.random.default_rng(123)
    basis = default_basis()
    controls = np.stack(
        [synth_controls(random_expression(rng), basis) for _ in range(1000)]
    )
    diffs = np.abs(controls[:, None, :] - controls[None, :, :]).max(axis=2)
    np.fill_diagonal(diffs, np.inf)
    assert diffs.min() > 0.0


def test_trajectory_is_deterministic_and_valid():
    t1 = ExpressionTrajectory(seed=4)
    t2 = ExpressionTrajectory(seed=4)
    for t in (0.0, 0.37, 2.5):
        a, b = t1.at(t), t2.at(t)
        assert np.array_equal(a.e, b.e)
        assert abs(a.yaw) <= np.pi / 6 and abs(a.pitch) <= np.pi / 6


def test_grid_file_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    grid = rng.uniform(0, 1, size=(7, 13)).astype(np.float32).astype(np.float64)
    path = tmp_path / "g.grid"
    write_grid(path, grid)
    back = read_grid(path)
    assert np.array_equal(back, grid)
    raw = path.read_bytes()
    assert raw[:8] == (7).to_bytes(4, "little") + (13).to_bytes(4, "little")


def test_dataset_roundtrip(tmp_path):
    index = generate_dataset(tmp_path / "ds", count=5, seed=3, res=(16, 16))
    assert index["count"] == 5
    images, controls, loaded = load_dataset(tmp_path / "ds")
    assert images.shape == (5, 16, 16)
    assert controls.shape == (5, 30)
    assert loaded["samples"][2]["id"] == 2
    assert np.all((controls > 0) & (controls < 1))
