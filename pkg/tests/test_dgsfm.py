import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenmine import dgsfm


def egg(**kwargs):
    return dgsfm.EggPotentialParams(**kwargs)


def test_v_egg_identity_at_origin():
    for a in (1.0, 2.5):
        assert dgsfm.v_egg((0, 0), (0, 0), (20, 0), egg(amplitude=a)) == a


def test_v_egg_hand_computed_values():
    params = egg(amplitude=1, sigma=10, forward_stretch=2, rear_compress=0.5, lateral_scale=1)
    ahead = dgsfm.v_egg((20, 0), (0, 0), (20, 0), params)
    behind = dgsfm.v_egg((-20, 0), (0, 0), (20, 0), params)
    assert abs(ahead - math.exp(-1)) < 1e-12  # rho = 20 / (2 * 10)
    assert abs(behind - math.exp(-4)) < 1e-12  # rho = 20 / (0.5 * 10)


def test_v_egg_forward_exceeds_rear_on_grid():
    params = egg()
    for d in np.linspace(0.5, 60, 40):
        fwd = dgsfm.v_egg((d, 0), (0, 0), (25, 0), params)
        rear = dgsfm.v_egg((-d, 0), (0, 0), (25, 0), params)
        assert fwd > rear


def test_v_egg_decreasing_along_ray():
    params = egg()
    for angle in np.linspace(0, 2 * np.pi, 9):
        ray = np.array([np.cos(angle), np.sin(angle)])
        vals = [dgsfm.v_egg(d * ray, (0, 0), (25, 0), params) for d in np.linspace(1, 80, 30)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


def test_v_egg_heading_rotation():
    # A neighbor ahead along a +y heading scores like one ahead along +x.
    params = egg()
    along_x = dgsfm.v_egg((15, 0), (0, 0), (20, 0), params)
    along_y = dgsfm.v_egg((0, 15), (0, 0), (0, 20), params)
    assert abs(along_x - along_y) < 1e-12


def test_v_egg_slow_vehicle_falls_back_to_road_heading():
    params = egg()
    stopped = dgsfm.v_egg((15, 0), (0, 0), (0.0, 0.0), params)
    moving = dgsfm.v_egg((15, 0), (0, 0), (20.0, 0.0), params)
    assert abs(stopped - moving) < 1e-12


def test_beta_b_zero_for_equal_velocities():
    cfg = dgsfm.DgsfmConfig()
    _, beta_b = dgsfm.beta_components(
        np.array([0.0, 0.0]), np.array([22.0, 0.3]),
        np.array([30.0, 3.0]), np.array([22.0, 0.3]), cfg,
    )
    assert abs(beta_b) < 1e-12


def test_beta_a_identity_at_zero_separation():
    cfg = dgsfm.DgsfmConfig()
    beta_a, _ = dgsfm.beta_components(
        np.array([5.0, 1.0]), np.array([20.0, 0.0]),
        np.array([5.0, 1.0]), np.array([15.0, 0.0]), cfg,
    )
    assert beta_a == cfg.egg.amplitude


def test_beta_components_closing_gap_arithmetic():
    # r_i=(0,0) v_i=(20,0); r_j=(30,0) v_j=(15,0); N_DG=25, dt=0.04:
    # r_i*=(20,0), r_j*=(45,0); beta_b = V(r_i*; r_j*, v_j) - V(r_i; r_j, v_j).
    cfg = dgsfm.DgsfmConfig()
    beta_a, beta_b = dgsfm.beta_components(
        np.array([0.0, 0.0]), np.array([20.0, 0.0]),
        np.array([30.0, 0.0]), np.array([15.0, 0.0]), cfg,
    )
    expected_a = dgsfm.v_egg((30, 0), (0, 0), (20, 0), cfg.egg)
    expected_b = dgsfm.v_egg((20, 0), (45, 0), (15, 0), cfg.egg) - dgsfm.v_egg(
        (0, 0), (30, 0), (15, 0), cfg.egg
    )
    assert abs(beta_a - expected_a) < 1e-12
    assert abs(beta_b - expected_b) < 1e-12
    assert beta_b > 0  # ego closes in: intrusion into j's rear field grows


def scores(presence, positions=None, seed=0):
    rng = np.random.default_rng(seed)
    n, t = presence.shape
    ego_pos = np.cumsum(rng.normal(1.0, 0.01, size=(100, 2)), axis=0)
    ego_vel = rng.normal(20.0, 0.1, size=(100, 2))
    nb_pos = positions if positions is not None else rng.normal(30.0, 5.0, size=(n, 100, 2))
    nb_vel = rng.normal(20.0, 1.0, size=(n, 100, 2))
    return dgsfm.interaction_scores(
        ego_pos, ego_vel, nb_pos, nb_vel, presence, dgsfm.DgsfmConfig()
    )


def test_single_neighbor_row_is_one():
    presence = np.zeros((8, 100), dtype=bool)
    presence[2, :] = True
    mat = scores(presence)
    assert np.allclose(mat.values[3, :], 1.0)  # slot offset: row 0 is ego


def test_absent_frames_are_zero():
    presence = np.zeros((8, 100), dtype=bool)
    mat = scores(presence)
    assert np.all(mat.values[1:, :] == 0.0)
    assert np.all(mat.values[0, :] == 1.0)


def test_equal_beta_neighbors_split_evenly():
    presence = np.zeros((8, 100), dtype=bool)
    presence[0, :] = presence[1, :] = True
    positions = np.zeros((8, 100, 2))
    positions[0, :, :] = [30.0, 0.0]
    positions[1, :, :] = [30.0, 0.0]
    rng = np.random.default_rng(1)
    ego_pos = np.zeros((100, 2))
    ego_vel = np.tile([20.0, 0.0], (100, 1))
    nb_vel = np.tile([20.0, 0.0], (8, 100, 1)).reshape(8, 100, 2)
    mat = dgsfm.interaction_scores(
        ego_pos, ego_vel, positions, nb_vel, presence, dgsfm.DgsfmConfig()
    )
    assert np.allclose(mat.values[1, :], 0.5)
    assert np.allclose(mat.values[2, :], 0.5)


@given(seed=st.integers(0, 50))
@settings(max_examples=25, deadline=None)
def test_framewise_normalization(seed):
    rng = np.random.default_rng(seed)
    presence = rng.random((8, 100)) < 0.6
    mat = scores(presence, seed=seed)
    for t in range(100):
        present = presence[:, t]
        if present.any():
            assert abs(mat.values[1:, t][present].sum() - 1.0) < 1e-9
        assert np.all(mat.values[1:, t][~present] == 0.0)


@given(offset=st.floats(min_value=-1e4, max_value=1e4), seed=st.integers(0, 10))
@settings(max_examples=20, deadline=None)
def test_translation_invariance(offset, seed):
    rng = np.random.default_rng(seed)
    presence = rng.random((8, 100)) < 0.6
    ego_pos = np.cumsum(rng.normal(1.0, 0.01, size=(100, 2)), axis=0)
    ego_vel = rng.normal(20.0, 0.1, size=(100, 2))
    nb_pos = rng.normal(30.0, 5.0, size=(8, 100, 2))
    nb_vel = rng.normal(20.0, 1.0, size=(8, 100, 2))
    cfgd = dgsfm.DgsfmConfig()
    base = dgsfm.interaction_scores(ego_pos, ego_vel, nb_pos, nb_vel, presence, cfgd)
    shifted = dgsfm.interaction_scores(
        ego_pos + offset, ego_vel, nb_pos + offset, nb_vel, presence, cfgd
    )
    assert np.allclose(base.values, shifted.values, atol=1e-12)


def test_softmax_monotonicity():
    """Raising one neighbor's beta strictly raises its share and lowers all
    others'. Verified by moving one neighbor closer to the ego."""
    presence = np.ones((8, 100), dtype=bool)
    rng = np.random.default_rng(3)
    ego_pos = np.zeros((100, 2))
    ego_vel = np.tile([20.0, 0.0], (100, 1))
    nb_pos = rng.uniform(20, 60, size=(8, 100, 2))
    nb_vel = np.tile([20.0, 0.0], (8, 100, 1)).reshape(8, 100, 2)
    cfgd = dgsfm.DgsfmConfig()
    base = dgsfm.interaction_scores(ego_pos, ego_vel, nb_pos, nb_vel, presence, cfgd)
    closer = nb_pos.copy()
    closer[4] *= 0.5  # strictly higher beta for neighbor 4 at every frame
    bumped = dgsfm.interaction_scores(ego_pos, ego_vel, closer, nb_vel, presence, cfgd)
    assert np.all(bumped.values[5, :] > base.values[5, :])
    others = [i for i in range(1, 9) if i != 5]
    assert np.all(bumped.values[others, :] < base.values[others, :])


def test_param_validation():
    with pytest.raises(ValueError):
        egg(sigma=-1.0)
    with pytest.raises(ValueError):
        egg(forward_stretch=0.5, rear_compress=0.9)
    with pytest.raises(ValueError):
        dgsfm.DgsfmConfig(tau_sum=1.5)
