import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

import oracles
from nvsim.errors import DimensionMismatch, InvalidInitialState
from nvsim.lindblad import (EXCITED, GROUND, METASTABLE, N_LEVELS, JumpOperator, Propagator,
                            build_model, depolarization_envelope, depolarization_rates,
                            evolve, liouvillian, nuclear_populations, observable_p_exc,
                            observable_p_signal, steady_state, unvec, vec)
from nvsim.params import FieldConfig, NvParams
from nvsim.photophysics import RateSet

P = NvParams()
AXIAL = P.replace(A_perp=0.0, A_perp_es=0.0)
SET1 = RateSet.preset("set1")
OP = FieldConfig.from_degrees(82.71, 10.2)


@lru_cache(maxsize=None)
def _op_model():
    m = build_model(P, OP, SET1)
    return m, Propagator(m.liouvillian())


def _pure(psi):
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def test_jump_operator_validation():
    J = JumpOperator(4.0, 3, 1)
    M = J.matrix()
    assert M.shape == (N_LEVELS, N_LEVELS)
    assert M[1, 3] == 2.0 and np.count_nonzero(M) == 1
    with pytest.raises(ValueError):
        JumpOperator(-1.0, 0, 1)
    with pytest.raises(ValueError):
        JumpOperator(1.0, 2, 2)


def test_jump_count_and_rate_sum():
    m, _ = _op_model()
    assert len(m.jumps) == 36
    r = SET1
    expect = 3 * (3 * r.k_Las + 3 * r.k_PL + r.k_47 + 2 * r.k_57 + r.k_71 + 2 * r.k_72)
    assert sum(j.rate for j in m.jumps) == pytest.approx(expect, rel=1e-14)


def test_jumps_preserve_nuclear_spin():
    m, _ = _op_model()
    def mi(k):
        return (k - 18) if k >= 18 else k % 3
    assert all(mi(j.src) == mi(j.dst) for j in m.jumps)


def test_hamiltonian_blocks():
    m, _ = _op_model()
    H = m.H
    assert np.max(np.abs(H - H.conj().T)) < 1e-12
    mask = np.ones_like(H, dtype=bool)
    for blk in (GROUND, EXCITED, METASTABLE):
        mask[blk, blk] = False
    assert np.all(H[mask] == 0)


def test_liouvillian_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        liouvillian(np.eye(3), [np.eye(2)])


def test_closed_system_phase():
    H = np.diag([0.0, 1.0])
    rho0 = _pure([1, 1])
    rho = evolve(liouvillian(H, []), rho0, [0.0, 0.25])[-1]
    assert np.allclose(np.diag(rho).real, [0.5, 0.5], atol=1e-14)
    # coherence rho_10 picks up exp(-i 2 pi (E1 - E0) t): a quarter turn at 1 MHz, 0.25 us
    assert np.angle(rho[1, 0]) == pytest.approx(-math.pi / 2, abs=1e-12)
    assert abs(rho[1, 0]) == pytest.approx(0.5, abs=1e-14)


def test_vectorization_round_trip():
    A = np.arange(9.0).reshape(3, 3) + 1j
    assert np.array_equal(unvec(vec(A), 3), A)
    B, C = np.random.default_rng(0).standard_normal((2, 3, 3))
    assert np.allclose(vec(B @ A @ C), np.kron(C.T, B) @ vec(A))


def test_expm_oracle_at_one_microsecond():
    m, prop = _op_model()
    rho0 = m.ground_state((0, 0))
    ref = oracles.lindblad_expm(m.H, m.jump_matrices(), rho0, 1.0)
    spectral = evolve(prop, rho0, [1.0])[0]
    assert np.max(np.abs(spectral - ref)) < 1e-7
    dense = evolve(m.liouvillian(), rho0, [1.0], method="expm")[0]
    assert np.max(np.abs(dense - ref)) < 1e-10


def test_ode_route_agrees():
    m, prop = _op_model()
    rho0 = m.ground_state((0, 1))
    t = [0.0, 0.05, 0.1]
    a = evolve(prop, rho0, t)
    b = evolve(m.liouvillian(), rho0, t, method="ode")
    assert np.max(np.abs(a - b)) < 1e-7


def test_evolve_rejects_bad_inputs():
    m, prop = _op_model()
    rho = m.ground_state((0, 0))
    with pytest.raises(InvalidInitialState):
        evolve(prop, 2 * rho, [0.0])
    with pytest.raises(InvalidInitialState):
        evolve(prop, rho[:9, :9], [0.0])
    bad = np.zeros((N_LEVELS, N_LEVELS))
    bad[0, 0], bad[1, 1] = 1.5, -0.5
    with pytest.raises(InvalidInitialState):
        evolve(prop, bad, [0.0])
    nonherm = rho.copy()
    nonherm[0, 1] += 0.1
    with pytest.raises(InvalidInitialState):
        evolve(prop, nonherm, [0.0])
    with pytest.raises(ValueError):
        evolve(prop, rho, [1.0, 0.5])
    with pytest.raises(ValueError):
        evolve(prop, rho, [0.0], method="euler")


@settings(max_examples=20)
@given(st.lists(st.floats(-1, 1), min_size=18, max_size=18))
def test_cptp_invariants(coef):
    c = np.array(coef[:9]) + 1j * np.array(coef[9:])
    if np.linalg.norm(c) < 1e-3:
        c[0] = 1.0
    psi = np.zeros(N_LEVELS, dtype=complex)
    psi[GROUND] = c
    _, prop = _op_model()
    for rho in evolve(prop, _pure(psi), np.linspace(0.0, 200.0, 9)):
        assert abs(np.trace(rho) - 1.0) < 1e-8
        assert np.max(np.abs(rho - rho.conj().T)) < 1e-10
        assert np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() > -1e-8


def test_p_exc_limits():
    m, _ = _op_model()
    assert observable_p_exc(m.ground_state((0, 0))) == 0.0
    assert observable_p_exc(np.eye(N_LEVELS) / N_LEVELS) == pytest.approx(9 / 21, abs=1e-15)


def test_p_exc_rises_then_plateaus():
    m, prop = _op_model()
    rho0 = m.ground_state((0, 0))
    # the rise is set by 1/k_PL (~15 ns)
    early = np.linspace(0.0, 0.05, 51)
    pe = np.array([observable_p_exc(r) for r in evolve(prop, rho0, early)])
    assert abs(pe[0]) < 1e-15
    assert np.all(np.diff(pe) > 0)
    t = np.linspace(40.0, 60.0, 21)
    late = np.array([observable_p_exc(r) for r in evolve(prop, rho0, t)])
    assert np.ptp(late) < 0.01 * late.mean()
    assert 0.0 < late.mean() < pe.max() * 1.01


def test_p_signal_bounds_and_nuclear_populations():
    m, prop = _op_model()
    for rho in evolve(prop, m.ground_state((0, 1)), np.linspace(0, 300, 7)):
        assert -1.0 <= observable_p_signal(rho, m.ground) <= 1.0
        pops = nuclear_populations(rho, m.ground)
        assert pops.sum() == pytest.approx(1.0, abs=1e-12) and pops.min() >= -1e-12
    assert observable_p_signal(m.ground_state((0, 0)), m.ground) == pytest.approx(1.0, abs=1e-12)


def test_rate_equation_limit_on_axis():
    field = FieldConfig(60.0, 0.0)
    m = build_model(AXIAL, field, SET1)
    rng = np.random.default_rng(3)
    p0 = rng.random(N_LEVELS)
    p0 /= p0.sum()
    t = np.linspace(0.0, 10.0, 11)
    rhos = evolve(m, np.diag(p0).astype(complex), t)
    K = np.kron(oracles.electron_rates(SET1.k_PL, SET1.k_47, SET1.k_57, SET1.k_71, SET1.k_72,
                                       SET1.k_Las), np.eye(3))
    G = oracles.rate_generator(K)
    for ti, rho in zip(t, rhos):
        assert np.max(np.abs(np.diag(rho).real - expm(G * ti) @ p0)) < 1e-8
        assert np.max(np.abs(rho - np.diag(np.diag(rho)))) < 1e-12


def test_no_depolarization_without_mixing():
    m = build_model(AXIAL, FieldConfig(82.71, 0.0), SET1)
    res = depolarization_rates(m)
    assert abs(res.gamma_0) < 1e-6 * SET1.k_Las
    assert abs(res.gamma_plus1) < 1e-6 * SET1.k_Las


def test_operating_point_ratio():
    m, prop = _op_model()
    res = depolarization_rates(m, prop=prop)
    assert res.ratio == pytest.approx(2.27, abs=0.10)
    assert res.gamma_0 > res.gamma_plus1 > 0
    d = res.to_dict()
    assert d["ratio"] == res.ratio and set(d["fits"]) == {"0,+0", "0,+1"}


def test_p_signal_relaxes_monotonically():
    m, prop = _op_model()
    res = depolarization_rates(m, prop=prop)
    for key, (t, sig) in res.traces.items():
        tail = sig[t >= 0.05 * res.horizon]
        amp = np.ptp(tail)
        # decays from the polarized value without dipping below where it settles
        assert tail.min() >= tail[-1] - 0.01 * amp
        assert np.all(np.diff(tail) <= 0.01 * amp)


def test_steady_state_is_null_vector():
    m, _ = _op_model()
    L = m.liouvillian()
    rho = steady_state(L)
    assert np.max(np.abs(L @ vec(rho))) < 1e-10
    assert np.trace(rho).real == pytest.approx(1.0)
    assert np.linalg.eigvalsh(rho).min() > -1e-10


def test_linear_in_pumping_rate():
    fracs = np.array([0.005, 0.01, 0.02, 0.05])
    rows = []
    for f in fracs:
        res = depolarization_rates(build_model(P, OP, SET1.with_k_las(f * SET1.k_PL)))
        rows.append((res.gamma_0, res.gamma_plus1))
    k = fracs * SET1.k_PL
    for y in np.array(rows).T:
        r2 = np.corrcoef(k, y)[0, 1] ** 2
        assert r2 > 0.99


def test_envelope_collapses_without_uncertainty():
    # preset sigmas are attached to SET1; a bare copy has none
    bare = RateSet(*SET1.intrinsic, k_Las=SET1.k_Las)
    env = depolarization_envelope(P, OP, bare, [0.1414], a_perp_es=(23.0, 23.0), n_samples=200)
    c = env["central"]
    for region in ("a_perp_es", "rate_set", "rate_errors"):
        band = env[region]
        assert np.allclose(band[:, 1], c[:, 1]) and np.allclose(band[:, 2], c[:, 1])
        assert np.allclose(band[:, 3], c[:, 2]) and np.allclose(band[:, 4], c[:, 2])


def test_envelope_a_perp_es_band():
    env = depolarization_envelope(P, OP, RateSet(*SET1.intrinsic, k_Las=SET1.k_Las),
                                  [0.1414], a_perp_es=(20.0, 26.0), n_samples=200)
    band = env["a_perp_es"][0]
    assert band[2] - band[1] > 0 and band[4] - band[3] > 0
    assert band[1] <= env["central"][0, 1] <= band[2]
