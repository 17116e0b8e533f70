import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from actlab.actuation import (CE_MIN, DEFAULT_MUSCLE, ActuationModel, MtuUnit,
                              actuation_from_dict, actuation_to_dict, compute_torques,
                              contractile_force, load_actuation, mtu_forces, mtu_lengths,
                              muscle_curves, pack_params, passive_lengths, unpack_params)
from actlab.rigid2d import CharacterFormatError

DT = 1.0 / 600.0


@pytest.fixture(scope="module", params=["tor", "vel", "pd", "mtu"])
def model(request, biped):
    return load_actuation(f"biped7_{request.param}.json", biped)


@pytest.fixture(scope="module")
def mtu(biped):
    return load_actuation("biped7_mtu.json", biped)


def random_pose(biped, rng):
    q = np.zeros(9)
    q[3:] = rng.uniform(biped.joint_limits[:, 0], biped.joint_limits[:, 1])
    return q


# -- muscle curves ----------------------------------------------------------


def test_force_length_peaks_at_optimal_length():
    fl, _ = muscle_curves(1.0, 0.0)
    assert fl == 1.0


@given(st.floats(0.2, 2.0).filter(lambda x: abs(x - 1.0) > 1e-6))
def test_force_length_below_peak_elsewhere(x):
    fl, _ = muscle_curves(x, 0.0)
    assert 0.0 < fl < 1.0


def test_force_velocity_isometric_is_one():
    _, fv = muscle_curves(1.0, 0.0)
    assert fv == 1.0


@given(st.floats(-1.0, 0.0), st.floats(-1.0, 0.0))
def test_force_velocity_decreases_with_shortening_speed(a, b):
    slow, fast = max(a, b), min(a, b)
    _, fv = muscle_curves([1.0, 1.0], [slow, fast])
    assert fv[0] >= fv[1]
    if slow - fast > 1e-9:
        assert fv[0] > fv[1]


@pytest.mark.parametrize("v, expected", [(-1.0, 0.0), (-2.0, 0.0), (0.0, 1.0)])
def test_force_velocity_anchor_points(v, expected):
    assert muscle_curves(1.0, v)[1] == pytest.approx(expected)


def test_force_velocity_eccentric_plateau():
    _, fv = muscle_curves(1.0, 1e6)
    assert fv == pytest.approx(DEFAULT_MUSCLE.fv_cap, rel=1e-4)


def test_contractile_force_scales_with_activation(mtu):
    unit = mtu.units[0]
    f1 = contractile_force(unit, 1.0, unit.l_opt, 0.0)
    assert f1 == pytest.approx(unit.f_max)
    assert contractile_force(unit, 0.25, unit.l_opt, 0.0) == pytest.approx(0.25 * unit.f_max)


# -- MTU state update ---------------------------------------------------------


def independent_residual(model, q, action, l_prev, l_new):
    """F_SE - F_CE - F_PE rebuilt from the curve definitions, per unit."""
    c = model.muscle
    out = []
    for u, unit in enumerate(model.units):
        cos_p = math.cos(unit.pennation)
        l_mtu = mtu_lengths(model, q)[u]
        d_se = l_mtu - l_new[u] * cos_p - unit.l_se_rest
        f_se = unit.f_max * (d_se / (unit.l_se_rest * c.se_strain)) ** 2 if d_se > 0 else 0.0
        d_pe = l_new[u] - unit.l_opt
        f_pe = unit.f_max * (d_pe / (unit.l_opt * c.pe_strain)) ** 2 if d_pe > 0 else 0.0
        f_ce = contractile_force(unit, action[u], l_new[u], (l_new[u] - l_prev[u]) / DT, c)
        out.append(f_se - cos_p * (f_ce + f_pe))
    return np.array(out)


def test_equilibrium_residual_over_random_substeps(biped, mtu):
    rng = np.random.default_rng(7)
    f0 = np.array([u.f_max for u in mtu.units])
    worst = 0.0
    for _ in range(10_000):
        q = random_pose(biped, rng)
        a = rng.uniform(0.0, 1.0, mtu.n_units)
        l_prev = passive_lengths(mtu, q) * rng.uniform(0.7, 1.3, mtu.n_units)
        out = mtu_forces(mtu, a, q, l_prev, DT)
        worst = max(worst, np.max(np.abs(out[:, 1] - out[:, 2] - out[:, 3]) / f0))
    assert worst < 1e-6


def test_equilibrium_against_independent_curves(biped, mtu):
    rng = np.random.default_rng(3)
    f0 = np.array([u.f_max for u in mtu.units])
    for _ in range(200):
        q = random_pose(biped, rng)
        a = rng.uniform(0.0, 1.0, mtu.n_units)
        l_prev = passive_lengths(mtu, q) * rng.uniform(0.8, 1.2, mtu.n_units)
        l_new = mtu_forces(mtu, a, q, l_prev, DT)[:, 0]
        assert np.all(l_new >= CE_MIN * np.array([u.l_opt for u in mtu.units]))
        res = independent_residual(mtu, q, a, l_prev, l_new)
        assert np.max(np.abs(res) / f0) < 1e-6


def test_passive_lengths_are_static_equilibria(biped, mtu):
    rng = np.random.default_rng(11)
    for _ in range(20):
        q = random_pose(biped, rng)
        l = passive_lengths(mtu, q)
        res = independent_residual(mtu, q, np.zeros(mtu.n_units), l, l)
        assert np.max(np.abs(res)) < 1e-6 * min(u.f_max for u in mtu.units)


def test_mtu_torque_matches_virtual_work(biped, mtu):
    """tau_j = -dl_MTU/dq_j * F_MTU for each unit; checked by finite differences."""
    rng = np.random.default_rng(5)
    q = random_pose(biped, rng)
    q[3:] *= 0.3
    a = np.full(mtu.n_units, 0.05)
    l = passive_lengths(mtu, q)
    tau, _ = compute_torques(mtu, a, q, np.zeros(9), l, DT)
    f_se = mtu_forces(mtu, a, q, l, DT)[:, 1]
    dl = np.zeros((mtu.n_units, 6))
    for j in range(6):
        e = np.zeros(9)
        e[3 + j] = 1e-6
        dl[:, j] = (mtu_lengths(mtu, q + e) - mtu_lengths(mtu, q - e)) / 2e-6
    expected = np.clip(-(dl.T @ f_se), -biped.torque_limits, biped.torque_limits)
    np.testing.assert_allclose(tau, expected, rtol=1e-6, atol=1e-6)


# -- simple actuators -------------------------------------------------------


@given(st.lists(st.floats(-500, 500), min_size=6, max_size=6))
def test_torque_actuation_is_clamped_identity(biped, values):
    model = load_actuation("biped7_tor.json", biped)
    tau, _ = compute_torques(model, values, np.zeros(9), np.zeros(9))
    np.testing.assert_array_equal(tau, np.clip(values, -biped.torque_limits, biped.torque_limits))


@given(st.lists(st.floats(-0.5, 0.5), min_size=6, max_size=6),
       st.lists(st.floats(-0.5, 0.5), min_size=6, max_size=6),
       st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_pd_law(biped, target, q_j, qd_j):
    model = load_actuation("biped7_pd.json", biped)
    q, qd = np.zeros(9), np.zeros(9)
    q[3:], qd[3:] = q_j, qd_j
    target = np.clip(target, model.lower, model.upper)
    tau, _ = compute_torques(model, target, q, qd)
    expected = model.kp * (target - q[3:]) - model.kd * qd[3:]
    np.testing.assert_allclose(tau, np.clip(expected, -biped.torque_limits, biped.torque_limits))


@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6),
       st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_velocity_law(biped, target, qd_j):
    model = load_actuation("biped7_vel.json", biped)
    qd = np.zeros(9)
    qd[3:] = qd_j
    tau, _ = compute_torques(model, target, np.zeros(9), qd)
    expected = model.kd * (np.asarray(target) - qd[3:])
    np.testing.assert_allclose(tau, np.clip(expected, -biped.torque_limits, biped.torque_limits))


def test_out_of_bound_actions_are_clamped(biped):
    model = load_actuation("biped7_pd.json", biped)
    q = np.zeros(9)
    tau_far, _ = compute_torques(model, model.upper + 10.0, q, q)
    tau_edge, _ = compute_torques(model, model.upper, q, q)
    np.testing.assert_array_equal(tau_far, tau_edge)


# -- parameter vector and file format ----------------------------------------


@pytest.mark.parametrize("kind, n_psi", [("tor", 0), ("vel", 6), ("pd", 12), ("mtu", 114)])
def test_parameter_vector_sizes(biped, kind, n_psi):
    assert len(pack_params(load_actuation(f"biped7_{kind}.json", biped))) == n_psi


def test_pack_unpack_round_trip(model):
    assert unpack_params(model, pack_params(model)) == model


def test_unpack_clamps_to_search_bounds(biped):
    model = load_actuation("biped7_pd.json", biped)
    psi = pack_params(model)
    out = unpack_params(model, psi.upper + 1e3)
    np.testing.assert_array_equal(pack_params(out).values, psi.upper)
    with pytest.raises(ValueError):
        unpack_params(model, np.zeros(3))


def test_file_round_trip(model, biped):
    again = actuation_from_dict(actuation_to_dict(model, biped), biped)
    assert again == model


def test_mtu_activation_bounds_enforced(biped):
    unit = MtuUnit("u", (0,), (0.05,), (0.0,), (0.0,), 0.1, 0.1, 500.0)
    with pytest.raises(ValueError, match="activation"):
        ActuationModel("mtu", [0.0], [2.0], biped.torque_limits, units=(unit,))


@pytest.mark.parametrize("doc, match", [
    ({"kind": "spring"}, "kind"),
    ({"kind": "pd", "kp": 1.0}, "kd"),
    ({"kind": "pd", "kp": [1.0, 2.0], "kd": 1.0}, "kp"),
    ({"kind": "mtu", "units": []}, "units"),
])
def test_malformed_actuation_files(biped, doc, match):
    with pytest.raises(CharacterFormatError, match=match):
        actuation_from_dict(doc, biped)


def test_unit_validation():
    with pytest.raises(ValueError):
        MtuUnit("u", (0,), (0.0,), (0.0,), (0.0,), 0.1, 0.1, 500.0)
    with pytest.raises(ValueError):
        MtuUnit("u", (0,), (0.05,), (0.0,), (0.0,), -0.1, 0.1, 500.0)
