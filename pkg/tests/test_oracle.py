"""Deterministic reference propagator checks.

The dissipative flow of the damped oscillator has closed-form moment
equations; the RK4 propagator must reproduce them to tight tolerance,
and its fixed points must agree with the thermal Gibbs state.
"""
import numpy as np
import pytest

from qsdsim import (
    LindbladPropagatorConfig,
    ModelParams,
    OUState,
    ParameterError,
    ConfigError,
    DimensionError,
    build_operators,
    coherent_state,
    lindblad_rhs,
    lindblad_step,
    ou_flow,
    propagate,
    propagate_matrices,
    stationary_lindblad_check,
    temperature_for_nbar,
    thermal_state,
    trace_expect,
)
from conftest import random_states


def _random_density(dim, seed):
    psis = random_states(6, dim, seed=seed)
    rho = sum(np.outer(p, p.conj()) for p in psis) / 6.0
    return rho / np.trace(rho).real


def test_rhs_trace_free(ops20):
    rho = _random_density(20, 3)
    rhs = lindblad_rhs(rho, ops20)
    assert abs(np.trace(rhs)) < 1e-13


def test_rhs_preserves_hermiticity(ops20):
    rho = _random_density(20, 4)
    rhs = lindblad_rhs(rho, ops20)
    assert np.allclose(rhs, rhs.conj().T, atol=1e-13)


def test_rhs_is_linear(ops20):
    a = _random_density(20, 5)
    b = _random_density(20, 6)
    lhs = lindblad_rhs(0.3 * a + 0.7 * b, ops20)
    rhs = 0.3 * lindblad_rhs(a, ops20) + 0.7 * lindblad_rhs(b, ops20)
    assert np.allclose(lhs, rhs, atol=1e-13)


def test_rhs_moment_equations(warm_params):
    # d<n>/dt = -gamma (<n> - nbar) and d<a>/dt = -(i omega + gamma/2) <a>
    # hold exactly for the boson master equation; check them on a state
    # with negligible truncation tail so the finite matrix is faithful.
    ops = build_operators(warm_params, 30)
    psi = coherent_state(ops, 0.8 + 0.4j)
    rho = np.outer(psi, psi.conj())
    rhs = lindblad_rhs(rho, ops)
    par = warm_params
    n_dot = np.trace(rhs @ ops.n_op)
    a_dot = np.trace(rhs @ ops.a)
    n_now = trace_expect(rho, ops.n_op)
    a_now = np.trace(rho @ ops.a)
    assert n_dot.real == pytest.approx(
        -par.gamma * (n_now - par.nbar), abs=1e-10)
    assert abs(n_dot.imag) < 1e-12
    assert a_dot == pytest.approx(
        -(1j * par.omega + par.gamma / 2.0) * a_now, abs=1e-10)


def test_occupation_relaxes_analytically(warm_params):
    # <n>(t) = |alpha|^2 e^{-gamma t} + nbar (1 - e^{-gamma t})
    ops = build_operators(warm_params, 30)
    psi = coherent_state(ops, 1.0)
    rho0 = np.outer(psi, psi.conj())
    cfg = LindbladPropagatorConfig(dt_oracle=1e-3, t_end=4.0)
    run = propagate(rho0, ops, cfg, sample_times=(0.0, 1.0, 2.5, 4.0))
    par = warm_params
    for t, rho in zip(run.times, run.rhos):
        decay = np.exp(-par.gamma * t)
        want = 1.0 * decay + par.nbar * (1.0 - decay)
        got = trace_expect(rho, ops.n_op)
        assert got == pytest.approx(want, abs=5e-8)


def test_flow_matches_first_moment_ode(warm_params):
    ops = build_operators(warm_params, 30)
    psi = coherent_state(ops, 0.9)
    rho0 = np.outer(psi, psi.conj())
    cfg = LindbladPropagatorConfig(dt_oracle=1e-3, t_end=3.0)
    run = propagate(rho0, ops, cfg, sample_times=(3.0,))
    flow = ou_flow(OUState(mean_alpha=0.9 + 0.0j, var_alpha=0.0),
                   warm_params, 3.0)
    got = np.trace(run.rhos[-1] @ ops.a)
    assert got == pytest.approx(flow.mean_alpha, abs=1e-8)


def test_propagation_preserves_positivity(warm_params):
    ops = build_operators(warm_params, 24)
    rho0 = _random_density(24, 9)
    cfg = LindbladPropagatorConfig(dt_oracle=2e-3, t_end=2.0)
    run = propagate(rho0, ops, cfg)
    final = run.rhos[-1]
    evals = np.linalg.eigvalsh(final)
    assert evals.min() > -1e-12
    assert np.trace(final).real == pytest.approx(1.0, abs=1e-10)


def test_trace_drift_rejected(warm_params):
    # the generator is exactly trace-free, so the drift guard is an
    # instability tripwire: a wildly unstable step loses trace through
    # rounding on huge intermediates
    ops = build_operators(warm_params, 20)
    rho0 = _random_density(20, 2)
    with pytest.raises(ParameterError):
        lindblad_step(rho0, ops, 50.0)


def test_oracle_step_guard(warm_params):
    ops = build_operators(warm_params, 20)
    psi = coherent_state(ops, 0.5)
    rho0 = np.outer(psi, psi.conj())
    cfg = LindbladPropagatorConfig(dt_oracle=0.2, t_end=1.0)
    with pytest.raises(ParameterError):
        propagate(rho0, ops, cfg)


def test_sample_times_must_hit_grid(warm_params):
    ops = build_operators(warm_params, 20)
    psi = coherent_state(ops, 0.5)
    rho0 = np.outer(psi, psi.conj())
    cfg = LindbladPropagatorConfig(dt_oracle=1e-3, t_end=1.0)
    with pytest.raises(ConfigError):
        propagate(rho0, ops, cfg, sample_times=(0.30007,))


def test_thermal_state_is_stationary(warm_params):
    assert stationary_lindblad_check(build_operators(warm_params, 40)) < 1e-9


def test_thermal_state_needs_headroom():
    hot = ModelParams(gamma=0.2, temperature=temperature_for_nbar(8.0))
    with pytest.raises(DimensionError):
        thermal_state(hot, 10)


def test_batched_propagation_matches_single(warm_params):
    ops = build_operators(warm_params, 16)
    rho0 = _random_density(16, 7)
    single = propagate(
        rho0, ops, LindbladPropagatorConfig(dt_oracle=1e-3, t_end=0.5))
    batched = propagate_matrices(rho0[None, :, :], ops, 0.5, 1e-3)
    assert np.allclose(batched[0], single.rhos[-1], atol=1e-12)
