import math
import time
from dataclasses import replace

import numpy as np
import pytest

from src.core.solver import (FlowSolver, ForceRecord, NoSheddingError, PoissonConvergenceError, SolverConfig,
                             run_simulation, strouhal, tandem_cylinders)


def channel_config(**overrides):
    values = dict(nx=24, ny=12, domain_width=0.06, domain_height=0.03, cylinders=[], dt=0.001,
                  n_steps=10, sample_interval=0.005)
    values.update(overrides)
    return SolverConfig(**values)


def taylor_green_config(**overrides):
    values = dict(nx=64, ny=64, domain_width=1.0, domain_height=1.0, inlet_velocity=0.1, density=1.0,
                  dynamic_viscosity=0.01, dt=0.001, n_steps=100, cylinders=[], boundary="periodic",
                  initial_condition="taylor_green", advection_blend=0.0)
    values.update(overrides)
    return SolverConfig(**values)


def test_default_reynolds_number():
    assert SolverConfig().reynolds_number == pytest.approx(200.0, rel=0.01)


def test_default_config_is_valid():
    cfg = SolverConfig().validate()
    assert cfg.cfl_number < 1.0
    assert cfg.steps_per_sample == 20


@pytest.mark.parametrize("overrides, message", [
    ({"dt": 0.01}, "CFL"),
    ({"sample_interval": 0.0215}, "integer multiple"),
    ({"cylinders": [(0.001, 0.08, 0.01)]}, "does not fit"),
    ({"boundary": "open"}, "boundary"),
])
def test_invalid_configs(overrides, message):
    with pytest.raises(ValueError, match=message):
        SolverConfig(**overrides).validate()


def test_tandem_cylinders():
    assert tandem_cylinders(3) == [(0.08, 0.08, 0.01), (0.11, 0.08, 0.01)]
    with pytest.raises(ValueError):
        tandem_cylinders(1.0)


def test_uniform_flow_is_steady():
    cfg = channel_config()
    solver = FlowSolver(cfg)
    state = solver.initial_state()
    start = state.copy()
    for _ in range(5):
        state = solver.step(state)
    assert np.allclose(state.u, start.u, atol=1e-10)
    assert np.allclose(state.v, start.v, atol=1e-10)


def test_taylor_green_energy_decay():
    cfg = taylor_green_config()
    solver = FlowSolver(cfg)
    state = solver.initial_state()
    e0 = solver.kinetic_energy(state)
    energies = [e0]
    for _ in range(cfg.n_steps):
        state = solver.step(state)
        energies.append(solver.kinetic_energy(state))

    k = 2.0 * math.pi / cfg.domain_width
    expected = math.exp(-4.0 * cfg.kinematic_viscosity * k * k * state.t)
    assert energies[-1] / e0 == pytest.approx(expected, rel=0.02)
    assert all(later <= earlier for earlier, later in zip(energies, energies[1:]))


def test_cylinder_mask_and_divergence():
    cfg = SolverConfig(nx=48, ny=24, domain_width=0.12, domain_height=0.06, cylinders=[(0.03, 0.03, 0.01)],
                       n_steps=15)
    solver = FlowSolver(cfg)
    state = solver.initial_state()
    for _ in range(cfg.n_steps):
        state = solver.step(state)
        assert solver.divergence_norm(state) <= 10 * cfg.poisson_tolerance
        assert np.all(state.u[solver.u_solid] == 0.0)
        assert np.all(state.v[solver.v_solid] == 0.0)
    assert solver.last_forces is not None
    assert solver.last_forces.drag[0] > 0.0
    snap = solver.snapshot(state)
    assert snap.u.shape == (24, 48)
    assert np.all(np.isfinite(snap.p))


def test_run_simulation_sampling_and_determinism():
    cfg = channel_config(n_steps=20)
    snapshots, records = run_simulation(cfg)
    assert len(snapshots) == 4
    assert [round(s.t, 9) for s in snapshots] == [0.005, 0.01, 0.015, 0.02]
    assert records == []
    again, _ = run_simulation(cfg)
    assert all(np.array_equal(a.u, b.u) and np.array_equal(a.p, b.p) for a, b in zip(snapshots, again))


def test_run_simulation_streams_to_sinks():
    cfg = SolverConfig(nx=48, ny=24, domain_width=0.12, domain_height=0.06, cylinders=[(0.03, 0.03, 0.01)],
                       n_steps=10, sample_interval=0.005)
    seen, forces = [], []
    snapshots, records = run_simulation(cfg, on_snapshot=seen.append, on_forces=forces.append)
    assert snapshots == [] and records == []
    assert len(seen) == 2
    assert len(forces) == 10


def test_zero_steps_gives_empty_streams():
    assert run_simulation(channel_config(n_steps=0)) == ([], [])


def test_poisson_iteration_cap():
    cfg = taylor_green_config(max_poisson_iterations=1, poisson_tolerance=1e-12)
    solver = FlowSolver(cfg)
    with pytest.raises(PoissonConvergenceError) as info:
        solver.step(solver.initial_state())
    assert info.value.step_index == 1
    assert info.value.residual > cfg.poisson_tolerance


def _lift_records(signal, dt=0.001):
    return [ForceRecord(t=(k + 1) * dt, drag=(1.0,), lift=(float(value),)) for k, value in enumerate(signal)]


def test_strouhal_of_synthetic_sine():
    cfg = SolverConfig()
    t = 0.001 * np.arange(1, 4001)
    st = strouhal(_lift_records(np.sin(2 * np.pi * 5 * t)), cfg)
    assert st == pytest.approx(5 * 0.01 / 0.3, abs=2e-3)


def test_strouhal_rejects_constant_signal():
    with pytest.raises(NoSheddingError, match="no shedding detected"):
        strouhal(_lift_records(np.full(4000, 0.3)), SolverConfig())



def test_time_stepping_error_halves_with_dt():
    final_time = 0.032

    def velocity_at_final_time(dt):
        cfg = taylor_green_config(nx=32, ny=32, dt=dt, n_steps=int(round(final_time / dt)),
                                  sample_interval=0.008, poisson_tolerance=1e-11)
        solver = FlowSolver(cfg)
        state = solver.initial_state()
        for _ in range(cfg.n_steps):
            state = solver.step(state)
        return state.u

    coarse, medium, fine = (velocity_at_final_time(dt) for dt in (0.008, 0.004, 0.002))
    e1 = np.max(np.abs(coarse - medium))
    e2 = np.max(np.abs(medium - fine))
    assert e2 > 0.0
    assert 1.6 < e1 / e2 < 2.6


def test_default_grid_projection_is_divergence_free():
    cfg = replace(SolverConfig(), n_steps=5)
    solver = FlowSolver(cfg)
    state = solver.initial_state()
    for _ in range(cfg.n_steps):
        state = solver.step(state)
        assert solver.divergence_norm(state) <= 1e-4


def _sign_changes(values, threshold):
    signs = np.sign(values[np.abs(values) >= threshold])
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


def test_sign_changes_ignore_small_values():
    assert _sign_changes(np.array([1.0, -1e-6, 2.0, -1.0, 1.0]), 1e-3) == 2


@pytest.mark.slow
def test_default_run_fits_time_budget():
    full_run = SolverConfig()
    cfg = replace(full_run, n_steps=300)
    started = time.perf_counter()
    run_simulation(cfg)
    elapsed = time.perf_counter() - started
    assert elapsed * full_run.n_steps / cfg.n_steps < 30 * 60


@pytest.mark.slow
def test_reference_wake_sheds_at_expected_strouhal():
    cfg = SolverConfig()
    solver = FlowSolver(cfg)
    state = solver.initial_state()
    records = []
    worst_divergence = 0.0
    for _ in range(cfg.n_steps):
        state = solver.step(state)
        records.append(solver.last_forces)
        worst_divergence = max(worst_divergence, solver.divergence_norm(state))
    assert worst_divergence <= 1e-4

    cx, cy, diameter = cfg.cylinders[0]
    snap = solver.snapshot(state)
    # first row of cell centers above the centerline
    row = int(np.searchsorted(solver.y_center[1:-1, 1], cy))
    x = solver.x_center[row + 1, 1:-1]
    wake_v = snap.v[row, x > cx + diameter]
    assert _sign_changes(wake_v, 1e-3 * cfg.inlet_velocity) >= 4

    assert 0.17 <= strouhal(records, cfg) <= 0.22
