import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynfeat.detection import box_contains
from dynfeat.dynamic_filter import DYNAMIC
from dynfeat.synth import SceneSpec, TrajSpec, generate_scene, generate_trajectory, random_cloud, rng_for


def test_rng_streams_independent_and_reproducible():
    a = rng_for(1, "scene", 0).random(4)
    assert np.array_equal(a, rng_for(1, "scene", 0).random(4))
    assert not np.array_equal(a, rng_for(1, "traj", 0).random(4))
    assert not np.array_equal(a, rng_for(1, "scene", 1).random(4))


def test_scene_bit_reproducible():
    a = generate_scene(SceneSpec(seed=3))
    b = generate_scene(SceneSpec(seed=3))
    assert np.array_equal(a.depth.values, b.depth.values)
    assert np.array_equal(a.keypoints, b.keypoints) and np.array_equal(a.cloud, b.cloud)
    assert np.array_equal(a.truth, b.truth)
    assert not np.array_equal(a.keypoints, generate_scene(SceneSpec(seed=4)).keypoints)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.8, 2.5), st.floats(0.5, 3.0), st.floats(0.0, 1 / 3))
def test_scene_truth_consistent_with_geometry(seed, fg, gap, ratio):
    spread = gap * ratio
    spec = SceneSpec(person_depth=fg, background_depth=fg + gap, person_spread=spread,
                     background_spread=spread, seed=seed)
    sc = generate_scene(spec)
    K = sc.intrinsics
    pts = K.unproject(sc.keypoints[:, 0], sc.keypoints[:, 1], sc.keypoints[:, 2])
    dyn = sc.truth == DYNAMIC
    assert dyn.sum() == spec.n_foreground
    assert box_contains(sc.detections[0].box, pts[dyn]).all()
    # depths stay within the configured spread (plus depth quantization)
    q = 1 / K.depth_scale
    assert np.all(np.abs(sc.keypoints[dyn, 2] - fg) <= spread + q)
    ring = slice(spec.n_foreground, spec.n_foreground + spec.n_background_in_box)
    assert np.all(sc.keypoints[ring, 2] >= fg + gap - spread - q)


def test_zero_spread_scene_has_exact_depths():
    sc = generate_scene(SceneSpec(person_spread=0, background_spread=0, seed=1))
    assert set(np.round(sc.keypoints[sc.truth == DYNAMIC, 2], 6)) == {1.5}


@pytest.mark.parametrize("kw", [
    {"person_depth": 4.0, "background_depth": 3.0},
    {"person_rect": (100, 100, 500, 400)},
    {"n_foreground": 0},
    {"person_spread": -1},
])
def test_scene_spec_validation(kw):
    with pytest.raises(ValueError):
        SceneSpec(**kw)


@pytest.mark.parametrize("shape", ["line", "circle", "helix"])
def test_noise_free_estimate_equals_gt(shape):
    gt, est = generate_trajectory(TrajSpec(shape=shape))
    assert np.array_equal(gt.positions, est.positions)
    assert np.array_equal(gt.quaternions, est.quaternions)


def test_trajectory_reproducible():
    spec = TrajSpec(sigma_t=0.01, sigma_r=1.0, seed=9)
    a, b = generate_trajectory(spec)[1], generate_trajectory(spec)[1]
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.quaternions, b.quaternions)


@pytest.mark.parametrize("kw", [{"duration": 0}, {"sigma_t": -1}, {"shape": "spiral"}])
def test_traj_spec_validation(kw):
    with pytest.raises(ValueError):
        TrajSpec(**kw)


def test_random_cloud_bounds():
    c = random_cloud(100, 2, low=-3, high=3)
    assert c.shape == (100, 3) and c.min() >= -3 and c.max() < 3
