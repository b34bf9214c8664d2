import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointsro import (
    SpectrogramSet,
    SroVector,
    StftConfig,
    aux_state,
    build_kkt,
    compute_upsilon,
    cosine_bound_params,
    estimate_joint,
    solve_kkt,
    update_scm,
)
from jointsro.errors import InvalidInputError, NumericalError
from jointsro.likelihood import PPM, regularize
from jointsro.optimizer import (
    AuxState,
    _JointModel,
    difference_matrix,
    entrywise_objective,
    sinc,
    solve_kkt_bordered,
    solve_kkt_reduced,
    surrogate_value,
)

from conftest import random_spec

WIDE = StftConfig(window_length=16, shift=16, dft_size=16, window="rect")


def test_sinc_small_argument_continuous():
    x = np.array([0.0, 5e-5, 1e-4 - 1e-12, 1e-4, 0.3])
    assert np.allclose(sinc(x), [1.0] + list(np.sin(x[1:]) / x[1:]), rtol=1e-14)


class TestCosineBound:
    def test_unit_upsilon_at_zero(self):
        lam, mu = cosine_bound_params(1 + 0j, 1.0, 0.0)
        assert mu == pytest.approx(np.pi)
        assert lam == pytest.approx(0.0, abs=1e-16)

    def test_negative_unit_upsilon(self):
        lam, mu = cosine_bound_params(-1 + 0j, 1.0, 0.0)
        assert mu == pytest.approx(0.0, abs=1e-15)
        assert lam == pytest.approx(0.5)

    def test_negative_omega_rejected(self):
        with pytest.raises(InvalidInputError):
            cosine_bound_params(1j, -1.0, 0.0)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0, 10), st.floats(-np.pi, np.pi), st.floats(0.1, 500),
           st.floats(-0.01, 0.01), st.floats(-0.01, 0.01))
    def test_minorizes_negative_cosine(self, alpha, gamma, omega, tilde, theta):
        u = alpha * np.exp(1j * gamma)
        lam, mu = cosine_bound_params(u, omega, tilde)
        nu = -alpha * np.cos(omega * tilde + gamma) + lam * (omega * tilde - mu) ** 2
        bound = -lam * (omega * theta - mu) ** 2 + nu
        assert bound <= -alpha * np.cos(omega * theta + gamma) + 1e-9 * (1 + alpha)
        assert lam >= 0.0

    def test_tie_rule_puts_offset_in_half_open_interval(self):
        # (xi + gamma) / 2pi lands exactly on an integer
        for gamma, xi in [(0.0, 2 * np.pi), (np.pi, np.pi), (0.0, 0.0)]:
            lam, mu = cosine_bound_params(np.exp(1j * gamma), xi, 1.0)
            assert -np.pi <= xi - mu < np.pi
            assert lam >= 0.0


class TestAuxState:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_invariants(self, seed):
        rng = np.random.default_rng(seed)
        spec = random_spec(rng, M=3, T=4, config=WIDE)
        ups = compute_upsilon(spec, update_scm(spec, SroVector.zeros(3)))
        eps = np.concatenate([[0.0], rng.uniform(-5e-3, 5e-3, 2)])
        aux = aux_state(ups, spec.omega, eps)
        off = ~np.eye(3, dtype=bool)
        d = (aux.xi - aux.mu)[..., off]
        assert np.all(d >= -np.pi - 1e-9) and np.all(d < np.pi + 1e-9)
        assert np.all(aux.lam >= 0)
        assert np.allclose(aux.xi, -np.swapaxes(aux.xi, -1, -2))
        assert np.allclose(aux.lam, np.swapaxes(aux.lam, -1, -2))
        assert np.allclose(aux.mu, -np.swapaxes(aux.mu, -1, -2), atol=1e-9)


class TestDifferenceMatrix:
    @pytest.mark.parametrize("M", [2, 3, 5])
    def test_rows(self, M):
        D = difference_matrix(M)
        eps = np.random.default_rng(M).standard_normal(M)
        for m in range(M):
            assert np.all(D[m * M + m] == 0)
            for n in range(M):
                assert (D @ eps)[m * M + n] == pytest.approx(eps[n] - eps[m])


def _aux(lam, mu, omega):
    return AuxState(xi=np.zeros_like(lam), lam=lam, mu=mu, omega=omega)


class TestBuildKkt:
    def test_all_zero(self):
        M = 3
        lam = np.zeros((2, 2, M, M))
        k = build_kkt(_aux(lam, np.ones_like(lam), np.ones((2, 2))))
        assert np.all(k.a == 0) and np.all(k.b == 0)

    def test_single_term(self):
        M = 3
        lam = np.zeros((1, 1, M, M))
        mu = np.zeros_like(lam)
        lam[0, 0, 0, 1], mu[0, 0, 0, 1] = 0.7, 0.3
        k = build_kkt(_aux(lam, mu, np.full((1, 1), 2.0)))
        expected_a = np.zeros(M * M)
        expected_a[1] = 4.0 * 0.7
        assert np.allclose(k.a, expected_a)
        assert k.b[1] == pytest.approx(2.0 * 0.7 * 0.3)
        assert np.count_nonzero(k.b) == 1
        assert np.allclose(k.A, np.diag(expected_a))

    def test_loop_oracle(self, rng):
        M, T, F = 3, 2, 2
        lam = rng.uniform(0, 1, (T, F, M, M))
        mu = rng.standard_normal((T, F, M, M))
        om = rng.uniform(0, 3, (T, F))
        k = build_kkt(_aux(lam, mu, om))
        a = np.zeros(M * M)
        b = np.zeros(M * M)
        for t in range(T):
            for f in range(F):
                for m in range(M):
                    for n in range(M):
                        a[m * M + n] += om[t, f] ** 2 * lam[t, f, m, n]
                        b[m * M + n] += om[t, f] * lam[t, f, m, n] * mu[t, f, m, n]
        assert np.allclose(k.a, a) and np.allclose(k.b, b)
        assert np.all(k.a >= 0)


def _random_system(rng, M):
    lam = rng.uniform(0, 1, (3, 4, M, M))
    lam = 0.5 * (lam + np.swapaxes(lam, -1, -2))
    mu = rng.standard_normal((3, 4, M, M))
    mu = 0.5 * (mu - np.swapaxes(mu, -1, -2))
    return build_kkt(_aux(lam, mu, rng.uniform(0.5, 3, (3, 4))))


class TestSolveKkt:
    def test_zero_b_gives_origin(self, rng):
        k = _random_system(rng, 4)
        k.b[:] = 0.0
        assert np.allclose(solve_kkt(k).epsilons, 0.0, atol=1e-15)

    def test_two_channel_closed_form(self):
        lam = np.zeros((1, 1, 2, 2))
        mu = np.zeros_like(lam)
        lam[0, 0, 0, 1] = lam[0, 0, 1, 0] = 0.4
        mu[0, 0, 0, 1], mu[0, 0, 1, 0] = 0.006, -0.006
        omega = np.full((1, 1), 1.5)
        eps = solve_kkt(build_kkt(_aux(lam, mu, omega))).epsilons
        assert eps[0] == 0.0
        assert eps[1] == pytest.approx(0.006 / 1.5, rel=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 6))
    def test_stationarity_and_reduced_agreement(self, seed, M):
        k = _random_system(np.random.default_rng(seed), M)
        eps, rho = solve_kkt_bordered(k)
        H, g = k.hessian(), k.gradient()
        r = H @ eps + k.u * rho - g
        assert np.linalg.norm(r) <= 1e-8 * max(np.linalg.norm(g), np.linalg.norm(H @ eps), 1e-300)
        red = solve_kkt_reduced(k)
        assert np.max(np.abs(eps - red)) <= 1e-10 * max(1.0, np.max(np.abs(red)))
        assert eps[0] == 0.0

    def test_no_curvature_raises(self):
        k = build_kkt(_aux(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)), np.ones((1, 1))))
        with pytest.raises(NumericalError):
            solve_kkt(k)


class TestFastPath:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 4))
    def test_matches_reference_assembly(self, seed, M):
        rng = np.random.default_rng(seed)
        spec = random_spec(rng, M=M, T=6, config=WIDE)
        eps = np.concatenate([[0.0], rng.uniform(-3e-3, 3e-3, M - 1)])
        model = _JointModel(spec)
        scms = update_scm(spec, eps)
        assert np.allclose(model.scm(eps), scms.matrices, rtol=1e-12, atol=1e-12)
        reg = regularize(scms)
        fast = model.surrogate(reg.inverse).kkt(eps)
        ref = build_kkt(aux_state(compute_upsilon(spec, scms), spec.omega, eps), anchor=eps)
        scale = np.abs(ref.a).max()
        assert np.allclose(fast.a, ref.a, atol=1e-10 * scale)
        assert np.allclose(fast.b, ref.b, atol=1e-10 * np.abs(ref.b).max())


class TestInnerAscent:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_step_does_not_lower_surrogate(self, seed):
        rng = np.random.default_rng(seed)
        M = 3
        spec = random_spec(rng, M=M, T=5, config=WIDE)
        tilde = np.concatenate([[0.0], rng.uniform(-2e-3, 2e-3, M - 1)])
        ups = compute_upsilon(spec, update_scm(spec, tilde))
        aux = aux_state(ups, spec.omega, tilde)
        new = solve_kkt(build_kkt(aux, anchor=tilde)).epsilons
        q0 = surrogate_value(aux, tilde)
        assert surrogate_value(aux, new) >= q0 - 1e-10 * max(1.0, abs(q0))
        # and the true objective follows (MM)
        assert entrywise_objective(ups, spec.omega, new) >= entrywise_objective(
            ups, spec.omega, tilde) - 1e-9 * max(1.0, abs(q0))


class TestEstimateJoint:
    def test_recovers_pair(self, pair_spec):
        res = estimate_joint(pair_spec, SroVector.from_ppm([0, 60.0]), outer_iters=30)
        assert abs(res.sro.ppm[1] - 62.5) < 1.0
        assert len(res.trace) == res.iterations + 1
        assert res.sro.epsilons[0] == 0.0

    def test_fixed_point_neighbourhood(self, pair_spec):
        res = estimate_joint(pair_spec, SroVector.from_ppm([0, 62.5]), outer_iters=5, tol_ppm=0)
        assert res.iterations == 5
        assert np.max(np.abs(np.array(res.path) - [0, 62.5])) < 0.1

    def test_identical_channels_stay_synchronized(self, pair_signals):
        x = pair_signals[0]
        spec = SpectrogramSet.from_signals([x, x])
        res = estimate_joint(spec, None, outer_iters=5)
        assert np.max(np.abs(res.sro.epsilons)) < 1e-15

    def test_reference_invariance(self, quad_scene):
        sc, _, spec = quad_scene
        base = estimate_joint(spec, sc.sro).sro.epsilons
        order = [2, 0, 3, 1]
        eps_init = sc.sro.epsilons[order] - sc.sro.epsilons[order[0]]
        relabeled = estimate_joint(spec.select(order), SroVector(eps_init)).sro.epsilons
        for i, m in enumerate(order):
            for j, n in enumerate(order):
                diff_a = (base[n] - base[m]) / PPM
                diff_b = (relabeled[j] - relabeled[i]) / PPM
                assert abs(diff_a - diff_b) < 0.05

    def test_rejects_bad_iteration_counts(self, pair_spec):
        with pytest.raises(InvalidInputError):
            estimate_joint(pair_spec, None, outer_iters=0)
        with pytest.raises(InvalidInputError):
            estimate_joint(pair_spec.select([0]), None)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_bound_touches_on_rank_deficient_scms(seed):
    # T < M: loaded SCM inverses are ~1/loading, so compare relatively
    rng = np.random.default_rng(seed)
    M = 4
    spec = random_spec(rng, M=M, T=2, config=WIDE)
    scms = update_scm(spec, SroVector.zeros(M))
    ups = compute_upsilon(spec, scms)
    tilde = np.concatenate([[0.0], rng.uniform(-9e-3, 9e-3, M - 1)])
    eps = np.concatenate([[0.0], rng.uniform(-9e-3, 9e-3, M - 1)])
    aux = aux_state(ups, spec.omega, tilde)
    U = ups.matrices
    off = ~np.eye(M, dtype=bool)
    nu = float(np.sum((-np.abs(U) * np.cos(aux.xi + np.angle(U))
                       + aux.lam * (aux.xi - aux.mu) ** 2)[..., off]))
    nu -= float(np.real(np.diagonal(U, axis1=-2, axis2=-1)).sum())
    j_tilde = entrywise_objective(ups, spec.omega, tilde)
    scale = float(np.abs(U).sum())
    assert abs(surrogate_value(aux, tilde) + nu - j_tilde) <= 1e-12 * scale
    assert surrogate_value(aux, eps) + nu <= entrywise_objective(ups, spec.omega, eps) + 1e-12 * scale
