import math
import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from fesrl.neurosim import (
    RPM, FesEnv, MuscleParams, MuscleState, NonFiniteStateError, arm_energy, effectiveness,
    fatigue_rate_bounds, half_capacity_time, initial_state, load_plants, muscle_force,
    reset_with_sampled_fatigue, reward, step_activation, step_arm, step_crank, step_fatigue,
    step_muscle,
)

PLANTS = load_plants()
BICEPS = replace(PLANTS["vertical_arm"].muscles[0], fatigue_rate=0.01)
FAT = PLANTS["vertical_arm"].fatigue


def compartment_rhs(a, p, C):
    """Independent statement of the compartment ODE for solve_ivp."""
    def rhs(t, y):
        mr, ma, mf = y
        gap = a - ma
        recruit = C * gap * mr if gap > 0 else C * gap
        return [p.recovery_rate * mf - recruit, recruit - p.fatigue_rate * ma,
                p.fatigue_rate * ma - p.recovery_rate * mf]
    return rhs


# ------------------------------------------------------------------ activation

def test_activation_rest_fixed_point():
    assert step_activation(MuscleState(), 0.0, 0.1, BICEPS).a == 0.0


def test_activation_full_fixed_point():
    assert step_activation(MuscleState(a=1.0), 1.0, 0.1, BICEPS).a == 1.0


def test_activation_matches_closed_form():
    p = replace(BICEPS, tau_act=0.05)
    a = step_activation(MuscleState(), 1.0, 0.1, p).a
    assert a == pytest.approx(1.0 - math.exp(-2.0), abs=1e-3)
    assert a == pytest.approx(0.8647, abs=1e-4)


def test_deactivation_uses_slow_constant():
    p = replace(BICEPS, tau_act=0.05, tau_deact=0.2)
    a = step_activation(MuscleState(a=1.0), 0.0, 0.1, p).a
    assert a == pytest.approx(math.exp(-0.5), abs=1e-9)


def test_marginal_command_is_clamped(caplog):
    a = step_activation(MuscleState(), 1.0 + 1e-6, 0.1, BICEPS).a
    assert a <= 1.0
    assert "clamped" in caplog.text


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0, 1), u=st.floats(0, 1), dt=st.floats(0.001, 1.0))
def test_activation_bounded(a, u, dt):
    out = step_activation(MuscleState(a=a), u, dt, BICEPS).a
    assert 0.0 <= out <= 1.0
    assert min(a, u) - 1e-12 <= out <= max(a, u) + 1e-12


# ------------------------------------------------------------------ fatigue

def test_no_fatigue_without_activation():
    m = MuscleState()
    for _ in range(100):
        m = step_fatigue(m, 1.0, BICEPS)
    assert m.fatigued == 0.0 and m.active == 0.0


def test_recovery_after_fatigue():
    m = MuscleState(a=0.0, rested=0.5, active=0.0, fatigued=0.5)
    prev = m.fatigued
    for _ in range(20):
        m = step_fatigue(m, 1.0, BICEPS)
        assert m.fatigued < prev
        prev = m.fatigued


@pytest.mark.parametrize("a, start", [(1.0, (1.0, 0.0, 0.0)), (0.4, (0.6, 0.1, 0.3)),
                                      (0.0, (0.3, 0.2, 0.5))])
def test_fatigue_matches_ode_solver(a, start):
    p = BICEPS
    m = MuscleState(a, *start)
    m = step_fatigue(m, 30.0, p, FAT.drive_gain)
    sol = solve_ivp(compartment_rhs(a, p, FAT.drive_gain), (0, 30.0), list(start),
                    method="LSODA", rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose([m.rested, m.active, m.fatigued], sol.y[:, -1], atol=2e-4)


def test_half_capacity_time_matches_ode_solver():
    # a saturates within ~0.3 s; treat it as 1 from t=0 in the oracle and allow for that lag
    p = BICEPS
    sol = solve_ivp(compartment_rhs(1.0, p, FAT.drive_gain), (0, 600), [1.0, 0.0, 0.0],
                    method="LSODA", rtol=1e-10, atol=1e-12,
                    events=lambda t, y: y[2] - 0.5)
    assert half_capacity_time(p, FAT.drive_gain) == pytest.approx(sol.t_events[0][0], abs=0.3)


def test_calibrated_rates_hit_one_and_two_minutes():
    slow, fast = fatigue_rate_bounds(BICEPS, FAT)
    assert slow < fast
    assert half_capacity_time(replace(BICEPS, fatigue_rate=fast)) == pytest.approx(60.0, abs=1e-6)
    assert half_capacity_time(replace(BICEPS, fatigue_rate=slow)) == pytest.approx(120.0, abs=1e-6)


def test_capacity_halves_between_one_and_two_minutes_at_full_stimulation():
    slow, fast = fatigue_rate_bounds(BICEPS, FAT)
    p = replace(BICEPS, fatigue_rate=0.5 * (slow + fast))
    m, t = MuscleState(), 0.0
    while m.capacity > 0.5:
        m = step_muscle(m, 1.0, 0.1, p, FAT.drive_gain)
        t += 0.1
    assert 60.0 <= t <= 120.0


@settings(max_examples=40, deadline=None)
@given(mf=st.floats(0, 0.3), u=st.floats(0, 1), F=st.floats(0.005, 0.02),
       steps=st.integers(1, 30))
def test_partition_preserved(mf, u, F, steps):
    p = replace(BICEPS, fatigue_rate=F)
    m = MuscleState(0.0, 1.0 - mf, 0.0, mf)
    for _ in range(steps):
        m = step_muscle(m, u, 0.1, p)
        assert m.partition_error < 1e-9
        assert min(m.rested, m.active, m.fatigued) >= 0.0
        assert 0.0 <= m.a <= 1.0


@pytest.mark.parametrize("u, sign", [(1.0, -1), (0.0, +1)])
def test_capacity_monotone_under_constant_command(u, sign):
    m = MuscleState(0.0, 0.8, 0.0, 0.2)
    prev = m.capacity
    for _ in range(600):
        m = step_muscle(m, u, 0.1, BICEPS)
        assert sign * (m.capacity - prev) >= 0.0
        prev = m.capacity


# ------------------------------------------------------------------ force

def test_force_full():
    assert muscle_force(MuscleState(a=1.0), BICEPS) == BICEPS.f_max


def test_force_thirty_percent_fatigue():
    m = MuscleState(a=1.0, rested=0.0, active=0.7, fatigued=0.3)
    assert muscle_force(m, BICEPS) == pytest.approx(0.7 * BICEPS.f_max)


def test_force_zero_activation():
    assert muscle_force(MuscleState(a=0.0, fatigued=0.1, rested=0.9), BICEPS) == 0.0


# ------------------------------------------------------------------ arm

def test_horizontal_equilibrium_without_stimulation():
    plant = replace(PLANTS["horizontal_arm"], damping=0.0)
    s = initial_state(plant)
    s.q = math.radians(75)
    new, obs = step_arm(plant, s, [0.0, 0.0])
    assert new.q == s.q and new.qd == 0.0
    np.testing.assert_array_equal(obs, [s.q, 0.0])


def test_vertical_arm_falls():
    plant = PLANTS["vertical_arm"]
    s = initial_state(plant)
    s.q = math.radians(60)
    new, obs = step_arm(plant, s, [0.0])
    assert obs[1] < 0.0 and new.q < s.q


def test_vertical_passive_energy_conserved():
    # joint stops widened so the 10 s swing never hits an inelastic limit
    plant = replace(PLANTS["vertical_arm"], damping=0.0, theta_min=-math.pi, theta_max=math.pi)
    s = initial_state(plant)
    s.q = math.radians(90)
    e0 = arm_energy(plant, s)
    drift = 0.0
    for _ in range(100):
        s, _ = step_arm(plant, s, [0.0])
        drift = max(drift, abs(arm_energy(plant, s) - e0) / e0)
    assert drift < 0.005


def test_joint_limit_is_inelastic():
    plant = PLANTS["vertical_arm"]
    s = initial_state(plant)
    s.q = math.radians(5)
    for _ in range(10):
        s, obs = step_arm(plant, s, [0.0])
    assert s.q == plant.theta_min and s.qd == 0.0


def test_arm_channel_count_checked():
    with pytest.raises(ValueError):
        step_arm(PLANTS["vertical_arm"], initial_state(PLANTS["vertical_arm"]), [0.1, 0.2])


def test_non_finite_state_names_quantity():
    plant = PLANTS["vertical_arm"]
    s = initial_state(plant)
    s.qd = math.inf
    with pytest.raises(NonFiniteStateError, match="theta"):
        step_arm(plant, s, [0.2])


def test_vertical_arm_holds_ninety_degrees():
    # static balance: sum of muscle torques at u equals the gravity torque
    plant = PLANTS["vertical_arm"]
    u = plant.gravity_coef / sum(m.f_max * m.moment_arm for m in plant.muscles)
    s = initial_state(plant)
    s.q = math.radians(90)
    s.a[:] = u
    s.active[:] = u
    s.rested[:] = 1 - u
    for _ in range(20):
        s, _ = step_arm(plant, s, [u], fatigue=False)
    assert math.degrees(s.q) == pytest.approx(90.0, abs=0.5)
    assert 0.1 < u < 0.5


# ------------------------------------------------------------------ crank

def test_crank_at_rest_stays():
    plant = PLANTS["cycling"]
    s = initial_state(plant)
    new, obs = step_crank(plant, s, np.zeros(6))
    assert new.q == s.q and new.qd == 0.0 and obs[0] == 0.0


def test_effectiveness_bounds_and_symmetry():
    plant = PLANTS["cycling"]
    for phi in np.linspace(0, 2 * math.pi, 721):
        e = effectiveness(plant, phi)
        assert np.all(np.abs(e) <= 1.0)
        np.testing.assert_allclose(e[3:], effectiveness(plant, phi + math.pi)[:3], atol=1e-12)


def test_stimulation_outside_lobe_gives_no_torque():
    plant = PLANTS["cycling"]
    phi = math.radians(90)
    assert effectiveness(plant, phi)[0] == 0.0
    s = initial_state(plant)
    s.q = phi
    new, _ = step_crank(plant, s, [1, 0, 0, 0, 0, 0])
    assert new.qd == 0.0 and new.q == phi
    assert new.a[0] > 0.5


def test_alternating_quadriceps_drive_crank_forward():
    plant = PLANTS["cycling"]
    s = initial_state(plant)
    cadence = []
    for _ in range(100):
        e = effectiveness(plant, s.q)
        cmd = np.zeros(6)
        cmd[0] = 0.6 if e[0] > 0 else 0.0
        cmd[3] = 0.6 if e[3] > 0 else 0.0
        s, obs = step_crank(plant, s, cmd)
        cadence.append(obs[0])
    assert np.mean(cadence) > 0.0


def test_crank_step_budget():
    plant = PLANTS["cycling"]
    s = initial_state(plant)
    step_crank(plant, s, np.full(6, 0.3))
    t0 = time.perf_counter()
    for _ in range(200):
        s, _ = step_crank(plant, s, np.full(6, 0.3))
    assert (time.perf_counter() - t0) / 200 < 1e-3


# ------------------------------------------------------------------ reward

def test_reward_zero_on_target():
    assert reward([0.5, 1.0], 0.5) == 0.0


def test_reward_substitution():
    assert reward([math.radians(20), 0.0], math.radians(70)) == pytest.approx(-0.8727, abs=1e-4)


@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_reward_symmetric(a, b):
    assert reward([a, 0.0], b) == reward([b, 0.0], a)


# ------------------------------------------------------------------ reset

def test_reset_deterministic():
    env = FesEnv(PLANTS["vertical_arm"])
    s1 = reset_with_sampled_fatigue(env, np.random.default_rng(3))
    s2 = reset_with_sampled_fatigue(env, np.random.default_rng(3))
    for name in ("fatigued", "rested", "active", "fatigue_rates"):
        assert np.array_equal(getattr(s1, name), getattr(s2, name))
    assert s1.q == PLANTS["vertical_arm"].rest and s1.qd == 0.0


def test_reset_fatigue_mean_monte_carlo():
    env = FesEnv(PLANTS["vertical_arm"])
    rng = np.random.default_rng(0)
    samples = np.concatenate([reset_with_sampled_fatigue(env, rng).fatigued
                              for _ in range(10_000 // 3 + 1)])[:10_000]
    assert 0.145 <= samples.mean() <= 0.155
    assert samples.min() >= 0.0 and samples.max() <= 0.3


def test_reset_compartments_valid():
    env = FesEnv(PLANTS["cycling"])
    s = reset_with_sampled_fatigue(env, np.random.default_rng(1))
    assert np.all(s.active == 0.0)
    np.testing.assert_allclose(s.rested + s.fatigued, 1.0, atol=1e-15)


def test_sampled_rates_replay_within_one_to_two_minutes():
    env = FesEnv(PLANTS["vertical_arm"])
    rng = np.random.default_rng(5)
    for _ in range(5):
        s = reset_with_sampled_fatigue(env, rng)
        for F in s.fatigue_rates:
            t = half_capacity_time(replace(BICEPS, fatigue_rate=float(F)), FAT.drive_gain)
            assert 60.0 <= t <= 120.0


def test_env_step_and_units():
    env = FesEnv(PLANTS["cycling"])
    env.reset_with_sampled_fatigue(np.random.default_rng(0))
    obs = env.step(np.full(6, 0.3))
    assert obs.shape == (3,) and env.obs_dim == 3 and env.action_dim == 6
    assert env.display_scale == pytest.approx(1 / RPM)
    arm = FesEnv(PLANTS["horizontal_arm"])
    assert arm.action_dim == 2 and arm.display_unit == "deg"


def test_frozen_fatigue_mode():
    env = FesEnv(PLANTS["vertical_arm"], fatigue=False)
    s0 = env.reset_with_sampled_fatigue(np.random.default_rng(0))
    for _ in range(50):
        env.step([1.0])
    np.testing.assert_array_equal(env.state.fatigued, s0.fatigued)


def test_plant_params_from_custom_file(tmp_path):
    from fesrl.neurosim import PlantConfigError
    bad = tmp_path / "p.yaml"
    bad.write_text("schema_version: 99\n")
    with pytest.raises(PlantConfigError):
        load_plants(bad)


def test_muscle_params_validated():
    from fesrl.neurosim import PlantConfigError
    with pytest.raises(PlantConfigError):
        MuscleParams("x", f_max=-1.0)
