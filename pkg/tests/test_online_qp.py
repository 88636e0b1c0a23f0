import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scendecomp.convex import MinimizerSettings, QuadraticObjective, minimize
from scendecomp.online_qp import (
    OnlineQpAdapter,
    OnlineQpProblem,
    ProblemError,
    SingularSystemError,
    assemble_compact,
    augmented_optimum,
    check_psd,
    lq_dp_solve,
    project_psd,
    qp_gradient,
    qp_objective,
    scenario_optimum,
    scenario_optimum_fallback,
    simulate,
)
from scendecomp.pha import PhaConfig, pha_solve
from scendecomp.tree import StageDistribution

TIGHT = MinimizerSettings(gradient_tolerance=1e-12, max_steps=200)


def problem_from(rng, m, n, T, psd_R=False, noise_outcomes=2):
    stages = [StageDistribution.uniform(rng.normal(size=(noise_outcomes, m))) for _ in range(T)]
    Mq = rng.normal(size=(m * (T + 1),) * 2)
    Mr = rng.normal(size=(n * T,) * 2)
    R = Mr @ Mr.T + (0.0 if psd_R else 0.5) * np.eye(n * T)
    return OnlineQpProblem(
        [rng.normal(size=(m, m)) for _ in range(T)],
        [rng.normal(size=(m, n)) for _ in range(T)],
        Mq @ Mq.T, R, rng.normal(size=m * (T + 1)), rng.normal(size=n * T), rng.normal(size=m), stages,
    )


def one_step(Q, R, x0=0.0, noise=(0.0,), c=None, d=None):
    Q, R = np.atleast_2d(Q), np.atleast_2d(R)
    return OnlineQpProblem(
        [np.eye(1)], [np.eye(1)], Q, R,
        np.zeros(2) if c is None else c, np.zeros(1) if d is None else d,
        [x0], [StageDistribution.uniform(np.array(noise, dtype=float))],
    )


dims = st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5))


def test_compact_one_step_identity():
    p = OnlineQpProblem([np.eye(2)], [np.eye(2)], np.eye(4), np.eye(2), np.zeros(4), np.zeros(2),
                        [1.0, 2.0], [StageDistribution.uniform(np.zeros((1, 2)))])
    q = assemble_compact(p)
    np.testing.assert_array_equal(q.A, [1, 2, 1, 2])
    np.testing.assert_array_equal(q.B, np.vstack([np.zeros((2, 2)), np.eye(2)]))
    np.testing.assert_array_equal(q.C, np.vstack([np.zeros((2, 2)), np.eye(2)]))


def test_compact_binomial_structure(binomial_qp):
    q = assemble_compact(binomial_qp)
    expected = [[0] * 6, [1, 1, 0, 0, 0, 0], [1, 1, 1, 1, 0, 0], [1] * 6]
    np.testing.assert_array_equal(q.B, expected)


@given(dims, st.integers(0, 2**16))
def test_compact_matches_simulation(d, seed):
    m, n, T = d
    rng = np.random.default_rng(seed)
    p = problem_from(rng, m, n, T)
    q = assemble_compact(p)
    assert not q.B[:m].any() and not q.C[:m].any()
    for _ in range(3):
        u, xi = rng.normal(size=n * T), rng.normal(size=m * T)
        x = q.A + q.B @ u + q.C @ xi
        assert np.abs(x - simulate(p, u, xi)).max() <= 1e-12 * max(1.0, np.abs(x).max())


def test_compact_matches_simulation_100_trials():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        m, n, T = rng.integers(1, 5), rng.integers(1, 5), rng.integers(1, 6)
        p = problem_from(rng, m, n, T)
        q = assemble_compact(p)
        u, xi = rng.normal(size=n * T), rng.normal(size=m * T)
        x = q.A + q.B @ u + q.C @ xi
        worst = max(worst, np.abs(x - simulate(p, u, xi)).max() / max(1.0, np.abs(x).max()))
    assert worst <= 1e-12


def test_scenario_optimum_origin():
    p = one_step(np.diag([0.0, 1.0]), [[1.0]])
    q = assemble_compact(p)
    np.testing.assert_allclose(scenario_optimum(q, [0.0]), [0.0], atol=1e-15)


def test_scenario_optimum_scalar_hand_case():
    # (u + xi)^2 + u^2 with xi = 1: Q picks x_1 = u + xi with weight 2, R = 2
    p = one_step(np.diag([0.0, 2.0]), [[2.0]], noise=(1.0,))
    q = assemble_compact(p)
    np.testing.assert_allclose(scenario_optimum(q, [1.0]), [-0.5])


def test_scenario_optimum_singular_routes_to_fallback():
    p = one_step(np.zeros((2, 2)), [[0.0]])
    q = assemble_compact(p)
    with pytest.raises(SingularSystemError):
        scenario_optimum(q, [0.0])
    np.testing.assert_allclose(scenario_optimum_fallback(q, [0.0]), [0.0])


def test_adapter_handles_semidefinite_hessian():
    rng = np.random.default_rng(3)
    p = problem_from(rng, 1, 2, 2, psd_R=True)
    # make B'QB + R singular by zeroing Q and R
    p = OnlineQpProblem(p.A, p.B, np.zeros_like(p.Q), np.zeros_like(p.R), np.zeros_like(p.c),
                        np.zeros_like(p.d), p.x0, p.noise)
    adapter = OnlineQpAdapter(p)
    np.testing.assert_allclose(adapter.solve_scenarios(), 0.0)


@given(dims, st.integers(0, 2**16))
def test_closed_forms_match_convex_oracle(d, seed):
    m, n, T = d
    rng = np.random.default_rng(seed)
    p = problem_from(rng, m, n, T)
    q = assemble_compact(p)
    xi = rng.normal(size=m * T)
    u0 = scenario_optimum(q, xi)
    assert np.linalg.norm(qp_gradient(q, xi, u0)) <= 1e-8 * max(1.0, np.linalg.norm(q.linear_term(xi)))
    oracle = minimize(QuadraticObjective(q.hessian, q.linear_term(xi)), np.zeros(n * T), TIGHT)
    assert np.abs(u0 - oracle.x).max() <= 1e-8 * max(1.0, np.abs(u0).max())

    w, u_hat, alpha = rng.normal(size=n * T), rng.normal(size=n * T), rng.uniform(0.1, 10)
    ua = augmented_optimum(q, xi, w, u_hat, alpha)
    H = q.hessian + alpha * np.eye(n * T)
    g = q.linear_term(xi) + w - alpha * u_hat
    assert np.linalg.norm(H @ ua + g) <= 1e-8 * max(1.0, np.linalg.norm(g))
    oracle = minimize(QuadraticObjective(H, g), np.zeros(n * T), TIGHT)
    assert np.abs(ua - oracle.x).max() <= 1e-8 * max(1.0, np.abs(ua).max())


def test_binomial_scenario_optimum_beats_perturbations(binomial_qp):
    q = assemble_compact(binomial_qp)
    xi = np.ones(3)
    u = scenario_optimum(q, xi)
    oracle = minimize(QuadraticObjective(q.hessian, q.linear_term(xi)), np.zeros(6), TIGHT)
    np.testing.assert_allclose(u, oracle.x, atol=1e-8)
    rng = np.random.default_rng(0)
    best = qp_objective(q, xi, u)
    assert all(qp_objective(q, xi, u + 1e-3 * rng.normal(size=6)) > best for _ in range(20))


def test_binomial_first_augmented_step_matches_oracle(binomial_qp):
    adapter = OnlineQpAdapter(binomial_qp)
    tree = adapter.tree
    from scendecomp.tree import aggregate_all

    U0 = adapter.solve_scenarios()
    U_hat = aggregate_all(tree, U0, 2)
    q = adapter.compact
    for i, xi in enumerate(tree.stacked_noise()):
        u = augmented_optimum(q, xi, np.zeros(6), U_hat[i], 1.0)
        obj = QuadraticObjective(q.hessian + np.eye(6), q.linear_term(xi) - U_hat[i])
        np.testing.assert_allclose(u, minimize(obj, np.zeros(6), TIGHT).x, atol=1e-8)
        np.testing.assert_allclose(u, adapter.solve_augmented(i, np.zeros(6), U_hat[i], 1.0), atol=1e-12)


def test_augmented_limits():
    rng = np.random.default_rng(11)
    q = assemble_compact(problem_from(rng, 2, 2, 2))
    xi = rng.normal(size=4)
    u_hat = rng.normal(size=4)
    assert np.linalg.norm(augmented_optimum(q, xi, np.zeros(4), u_hat, 1e8) - u_hat) <= 1e-6
    u0 = scenario_optimum(q, xi)
    np.testing.assert_allclose(augmented_optimum(q, xi, np.zeros(4), u0, 1.0), u0, atol=1e-10)
    assert np.linalg.norm(augmented_optimum(q, xi, np.zeros(4), u_hat, 1e-6) - u0) <= 1e-4
    with pytest.raises(ValueError):
        augmented_optimum(q, xi, np.zeros(4), u_hat, 0.0)


@given(st.integers(0, 2**16))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    q = assemble_compact(problem_from(rng, 2, 2, 3))
    xi, u = rng.normal(size=6), rng.normal(size=6)
    g = qp_gradient(q, xi, u)
    h = 1e-5
    fd = np.array([(qp_objective(q, xi, u + h * e) - qp_objective(q, xi, u - h * e)) / (2 * h) for e in np.eye(6)])
    assert np.linalg.norm(fd - g) <= 1e-5 * max(1.0, np.linalg.norm(g))


def test_objective_special_cases():
    rng = np.random.default_rng(5)
    p = problem_from(rng, 2, 1, 2)
    q = assemble_compact(OnlineQpProblem(p.A, p.B, p.Q, p.R, np.zeros(6), np.zeros(2), p.x0, p.noise))
    xi = rng.normal(size=4)
    free = q.A + q.C @ xi
    assert qp_objective(q, xi, np.zeros(2)) == pytest.approx(0.5 * free @ q.Q @ free)
    lin = assemble_compact(OnlineQpProblem(p.A, p.B, np.zeros((6, 6)), np.zeros((2, 2)), p.c, p.d, p.x0, p.noise))
    u = rng.normal(size=2)
    assert qp_objective(lin, xi, u) == pytest.approx(p.c @ (lin.A + lin.B @ u + lin.C @ xi) + p.d @ u)


def test_binomial_expected_objective_below_zero_policy(binomial_qp):
    adapter = OnlineQpAdapter(binomial_qp)
    tree = adapter.tree
    res = pha_solve(tree, adapter, PhaConfig(epsilon=1e-14))
    rho = tree.probabilities
    best = rho @ adapter.objectives(res.u_hat.values)
    assert np.isfinite(best)
    assert best < rho @ adapter.objectives(np.zeros((8, 6)))


def test_dp_one_step_symmetric_noise():
    # E[(u + xi)^2] + u^2 with xi = +-1: the 1/2 factors are absorbed into Q = R = 2
    p = one_step(np.diag([0.0, 2.0]), [[2.0]], noise=(1.0, -1.0))
    pol = lq_dp_solve(p)
    np.testing.assert_allclose(pol.evaluate_on_tree(p, p.tree()), 0.0, atol=1e-15)
    assert pol.value(p.x0) == pytest.approx(1.0)


def test_dp_deterministic_matches_scenario_optimum():
    rng = np.random.default_rng(9)
    p = problem_from(rng, 2, 2, 3, noise_outcomes=1)
    blocks = [slice(t * 2, t * 2 + 2) for t in range(4)]
    Q = np.zeros_like(p.Q)
    for b in blocks:
        Q[b, b] = p.Q[b, b]
    R = np.zeros_like(p.R)
    for b in blocks[:3]:
        R[b, b] = p.R[b, b]
    p = OnlineQpProblem(p.A, p.B, Q, R, p.c, p.d, p.x0, p.noise)
    q = assemble_compact(p)
    tree = p.tree()
    pol = lq_dp_solve(p)
    u_dp = pol.evaluate_on_tree(p, tree)[0]
    np.testing.assert_allclose(u_dp, scenario_optimum(q, tree.stacked_noise()[0]), atol=1e-9)
    assert pol.value(p.x0) == pytest.approx(qp_objective(q, tree.stacked_noise()[0], u_dp), rel=1e-10)


def test_dp_value_equals_expected_objective(binomial_qp):
    from scendecomp.online_qp import diagonalize

    p = diagonalize(binomial_qp)
    tree = p.tree()
    pol = lq_dp_solve(p)
    U = pol.evaluate_on_tree(p, tree)
    q = assemble_compact(p)
    expected = sum(r * qp_objective(q, xi, u) for r, xi, u in zip(tree.probabilities, tree.stacked_noise(), U))
    assert pol.value(p.x0) == pytest.approx(expected, rel=1e-12)


def test_dp_rejects_coupled_costs(binomial_qp):
    with pytest.raises(ProblemError):
        lq_dp_solve(binomial_qp)


def test_psd_validation():
    with pytest.raises(ProblemError):
        check_psd([[1.0, 0.0], [1e-6, 1.0]], "Q")
    with pytest.raises(ProblemError):
        check_psd([[1.0, 0.0], [0.0, -1e-6]], "Q")
    with pytest.warns(UserWarning):
        M = check_psd([[1.0, 0.0], [1e-9, 1.0]], "Q")
    np.testing.assert_array_equal(M, M.T)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        check_psd(np.eye(2), "Q")


def test_project_psd():
    M = np.array([[1.0, 2.0], [2.0, 1.0]])
    P = project_psd(M)
    assert np.linalg.eigvalsh(P).min() >= -1e-15
    np.testing.assert_allclose(P, [[1.5, 1.5], [1.5, 1.5]])


def test_problem_validation():
    good = dict(A=[np.eye(1)], B=[np.eye(1)], Q=np.eye(2), R=np.eye(1), c=np.zeros(2), d=np.zeros(1),
                x0=[0.0], noise=[StageDistribution.uniform([0.0])])
    OnlineQpProblem(**good)
    for key, bad in [("Q", np.eye(3)), ("c", np.zeros(3)), ("B", [np.ones((1, 2))]), ("noise", [])]:
        with pytest.raises(ProblemError):
            OnlineQpProblem(**dict(good, **{key: bad}))
