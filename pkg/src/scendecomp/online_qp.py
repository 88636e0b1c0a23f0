"""Online quadratic programs with linear dynamics.

The problem is

    min E[ 0.5 x'Qx + x'c + 0.5 u'Ru + u'd ]
    s.t. x_{t+1} = A_t x_t + B_t u_t + xi_t,

with stacked states ``x = (x_0, ..., x_T)`` and controls ``u = (u_0, ...,
u_{T-1})``.  Substituting the dynamics gives ``x = A + B u + C xi``.
"""
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .convex import MinimizerSettings, QuadraticObjective, minimize
from .pha import AdapterError
from .tree import StageDistribution, build_tree

SYM_TOL = 1e-10
SYM_REPAIR_TOL = 1e-8
EIG_FLOOR = -1e-10


class ProblemError(ValueError):
    """Inconsistent or invalid problem data."""


class SingularSystemError(np.linalg.LinAlgError):
    """``B'QB + R`` is singular; use the convex_min fallback."""


def check_psd(M, name):
    """Return the symmetrized ``M`` after checking it is PSD.

    Asymmetry up to ``1e-8`` is repaired with a warning; larger asymmetry or
    an eigenvalue below ``-1e-10`` is rejected.
    """
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ProblemError(f"{name} must be square")
    asym = float(np.abs(M - M.T).max()) if M.size else 0.0
    if asym > SYM_REPAIR_TOL:
        raise ProblemError(f"{name} is not symmetric (max asymmetry {asym:.2e})")
    if asym > SYM_TOL:
        warnings.warn(f"{name} symmetrized (max asymmetry {asym:.2e})", stacklevel=3)
    M = 0.5 * (M + M.T)
    if M.size and np.linalg.eigvalsh(M).min() < EIG_FLOOR:
        raise ProblemError(f"{name} is not positive semidefinite")
    return M


def project_psd(M):
    """Nearest PSD matrix in Frobenius norm (eigenvalue clipping)."""
    M = 0.5 * (np.asarray(M, dtype=float) + np.asarray(M, dtype=float).T)
    vals, vecs = np.linalg.eigh(M)
    return (vecs * np.clip(vals, 0.0, None)) @ vecs.T


@dataclass(frozen=True)
class OnlineQpProblem:
    """Problem data; see the module docstring for the model."""

    A: tuple
    B: tuple
    Q: np.ndarray
    R: np.ndarray
    c: np.ndarray
    d: np.ndarray
    x0: np.ndarray
    noise: tuple

    def __post_init__(self):
        A = tuple(np.atleast_2d(np.asarray(a, dtype=float)) for a in self.A)
        B = tuple(np.atleast_2d(np.asarray(b, dtype=float)) for b in self.B)
        T = len(A)
        if T == 0 or len(B) != T or len(self.noise) != T:
            raise ProblemError("A, B and noise must all have length T >= 1")
        m, n = A[0].shape[0], B[0].shape[1]
        for t in range(T):
            if A[t].shape != (m, m) or B[t].shape != (m, n):
                raise ProblemError(f"stage {t}: expected A {(m, m)} and B {(m, n)}")
            if not isinstance(self.noise[t], StageDistribution) or self.noise[t].dim != m:
                raise ProblemError(f"stage {t}: noise must be a distribution over R^{m}")
        Q = check_psd(self.Q, "Q")
        R = check_psd(self.R, "R")
        if Q.shape != (m * (T + 1),) * 2 or R.shape != (n * T,) * 2:
            raise ProblemError(f"Q must be {m * (T + 1)}-square and R {n * T}-square")
        c = np.asarray(self.c, dtype=float).ravel()
        d = np.asarray(self.d, dtype=float).ravel()
        x0 = np.asarray(self.x0, dtype=float).ravel()
        if c.size != m * (T + 1) or d.size != n * T or x0.size != m:
            raise ProblemError("c, d or x0 has the wrong length")
        for k, v in dict(A=A, B=B, Q=Q, R=R, c=c, d=d, x0=x0, noise=tuple(self.noise)).items():
            object.__setattr__(self, k, v)

    @property
    def T(self):
        return len(self.A)

    @property
    def m(self):
        return self.A[0].shape[0]

    @property
    def n(self):
        return self.B[0].shape[1]

    def tree(self):
        return build_tree(self.noise)


@dataclass(frozen=True)
class CompactQp:
    """``x = A + B u + C xi`` with the cost matrices carried along."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    c: np.ndarray
    d: np.ndarray

    @property
    def hessian(self):
        return self.B.T @ self.Q @ self.B + self.R

    def linear_term(self, xi):
        """``B'Q(A + C xi) + B'c + d``; rows of ``xi`` give one term each."""
        xi = np.asarray(xi, dtype=float)
        free = self.A + xi @ self.C.T
        return free @ self.Q @ self.B + self.B.T @ self.c + self.d


def assemble_compact(p):
    """Stack the dynamics of ``p`` into a :class:`CompactQp`."""
    T, m, n = p.T, p.m, p.n
    A = np.zeros(m * (T + 1))
    B = np.zeros((m * (T + 1), n * T))
    C = np.zeros((m * (T + 1), m * T))
    A[:m] = p.x0
    for s in range(T):
        rows, prev = slice(m * (s + 1), m * (s + 2)), slice(m * s, m * (s + 1))
        A[rows] = p.A[s] @ A[prev]
        B[rows] = p.A[s] @ B[prev]
        C[rows] = p.A[s] @ C[prev]
        B[rows, n * s:n * (s + 1)] = p.B[s]
        C[rows, m * s:m * (s + 1)] = np.eye(m)
    return CompactQp(A, B, C, p.Q, p.R, p.c, p.d)


def simulate(p, u, xi):
    """Step the dynamics forward; returns stacked states ``(x_0, ..., x_T)``."""
    u = np.asarray(u, dtype=float).reshape(p.T, p.n)
    xi = np.asarray(xi, dtype=float).reshape(p.T, p.m)
    xs = [p.x0]
    for t in range(p.T):
        xs.append(p.A[t] @ xs[-1] + p.B[t] @ u[t] + xi[t])
    return np.concatenate(xs)


def qp_objective(q, xi, u):
    """Scenario objective with the dynamics substituted."""
    u = np.asarray(u, dtype=float)
    x = q.A + q.B @ u + q.C @ np.asarray(xi, dtype=float)
    return 0.5 * x @ q.Q @ x + x @ q.c + 0.5 * u @ q.R @ u + u @ q.d


def qp_gradient(q, xi, u):
    return q.hessian @ np.asarray(u, dtype=float) + q.linear_term(xi)


def _cholesky(H):
    try:
        return sla.cho_factor(H, check_finite=False)
    except sla.LinAlgError:
        return None


def scenario_optimum(q, xi):
    """Closed-form minimizer ``-(B'QB + R)^{-1} [B'Q(A + C xi) + B'c + d]``.

    Raises
    ------
    SingularSystemError
        When ``B'QB + R`` is not positive definite; minimize the quadratic
        with :func:`scendecomp.convex.minimize` instead.
    """
    H = q.hessian
    fac = _cholesky(H)
    if fac is None or np.linalg.cond(H) > 1e12:
        raise SingularSystemError(
            "B'QB + R is singular; route this scenario through convex.minimize"
        )
    return -sla.cho_solve(fac, q.linear_term(xi))


def scenario_optimum_fallback(q, xi, settings=None):
    """Minimum-norm scenario minimizer via Newton steps started at zero."""
    obj = QuadraticObjective(q.hessian, q.linear_term(xi))
    res = minimize(obj, np.zeros(q.B.shape[1]), settings or MinimizerSettings())
    if not res.converged:
        raise np.linalg.LinAlgError(f"fallback minimization failed: {res.message}")
    return res.x


def augmented_optimum(q, xi, w, u_hat, alpha):
    """Minimizer of the scenario objective plus ``u'w + alpha/2 |u - u_hat|^2``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    H = q.hessian + alpha * np.eye(q.B.shape[1])
    rhs = q.linear_term(xi) + np.asarray(w, dtype=float) - alpha * np.asarray(u_hat, dtype=float)
    return -sla.solve(H, rhs, assume_a="pos")


class OnlineQpAdapter:
    """Closed-form subproblem family for PHA, batched across scenarios."""

    def __init__(self, problem, tree=None, settings=None):
        self.problem = problem
        self.tree = tree if tree is not None else problem.tree()
        self.compact = assemble_compact(problem)
        self.n, self.T = problem.n, problem.T
        self.settings = settings
        self._H = self.compact.hessian
        self._G = self.compact.linear_term(self.tree.stacked_noise())
        self._fac = _cholesky(self._H)
        if self._fac is not None and np.linalg.cond(self._H) > 1e12:
            self._fac = None
        self._aug = {}

    def _aug_factor(self, alpha):
        if alpha not in self._aug:
            self._aug = {alpha: sla.cho_factor(self._H + alpha * np.eye(self._H.shape[0]))}
        return self._aug[alpha]

    def solve_scenario(self, i):
        if self._fac is not None:
            return -sla.cho_solve(self._fac, self._G[i])
        obj = QuadraticObjective(self._H, self._G[i])
        res = minimize(obj, np.zeros(self._H.shape[0]), self.settings)
        if not res.converged:
            raise AdapterError(i, f"scenario minimization failed: {res.message}")
        return res.x

    def solve_scenarios(self):
        if self._fac is not None:
            return -sla.cho_solve(self._fac, self._G.T).T
        return np.vstack([self.solve_scenario(i) for i in range(self.tree.n_scenarios)])

    def solve_augmented(self, i, w, u_hat, alpha):
        return -sla.cho_solve(self._aug_factor(alpha), self._G[i] + w - alpha * u_hat)

    def solve_augmented_batch(self, W, U_hat, alpha):
        return -sla.cho_solve(self._aug_factor(alpha), (self._G + W - alpha * U_hat).T).T

    def gradients(self, U):
        """Scenario-objective gradients at stacked controls ``U``."""
        return np.asarray(U) @ self._H + self._G

    def optimal_multipliers(self, U_star):
        """Multipliers that make ``U_star`` a PHA fixed point: ``-grad J_i``."""
        return -self.gradients(U_star)

    def objectives(self, U):
        U = np.asarray(U, dtype=float)
        return np.array([
            qp_objective(self.compact, xi, u) for xi, u in zip(self.tree.stacked_noise(), U)
        ])


def _stage_blocks(M, size, T, name):
    blocks = []
    for t in range(T):
        for s in range(T):
            blk = M[t * size:(t + 1) * size, s * size:(s + 1) * size]
            if s != t and np.any(blk != 0):
                raise ProblemError(f"{name} couples stages {t} and {s}; DP does not apply")
        blocks.append(M[t * size:(t + 1) * size, t * size:(t + 1) * size])
    return blocks


def diagonalize(p):
    """Separable variant of ``p``: cross-stage blocks of Q and R set to zero."""
    m, n, T = p.m, p.n, p.T
    Q = np.zeros_like(p.Q)
    R = np.zeros_like(p.R)
    for t in range(T + 1):
        Q[t * m:(t + 1) * m, t * m:(t + 1) * m] = p.Q[t * m:(t + 1) * m, t * m:(t + 1) * m]
    for t in range(T):
        R[t * n:(t + 1) * n, t * n:(t + 1) * n] = p.R[t * n:(t + 1) * n, t * n:(t + 1) * n]
    return OnlineQpProblem(p.A, p.B, Q, R, p.c, p.d, p.x0, p.noise)


@dataclass
class LqPolicy:
    """Affine feedback ``u_t = -K_t x_t + k_t`` with quadratic value functions.

    ``P[t], p[t], const[t]`` describe ``V_t(x) = 0.5 x'P x + p'x + const``.
    """

    K: list
    k: list
    P: list
    p: list
    const: list

    def value(self, x0):
        x0 = np.asarray(x0, dtype=float)
        return 0.5 * x0 @ self.P[0] @ x0 + self.p[0] @ x0 + self.const[0]

    def evaluate_on_tree(self, problem, tree):
        """Controls of every scenario, shape (S, n*T)."""
        noise = tree.noise()
        S = tree.n_scenarios
        x = np.tile(problem.x0, (S, 1))
        out = []
        for t in range(problem.T):
            u = -x @ self.K[t].T + self.k[t]
            out.append(u)
            x = x @ problem.A[t].T + u @ problem.B[t].T + noise[:, t]
        return np.hstack(out)


def lq_dp_solve(p):
    """Backward recursion for the stage-separable case.

    Raises
    ------
    ProblemError
        If Q or R couple different stages, or a stage block of ``R + B'PB``
        is not positive definite.
    """
    m, n, T = p.m, p.n, p.T
    Qb = _stage_blocks(p.Q, m, T + 1, "Q")
    Rb = _stage_blocks(p.R, n, T, "R")
    cb = p.c.reshape(T + 1, m)
    db = p.d.reshape(T, n)
    P, pv, const = Qb[T], cb[T].copy(), 0.0
    Ks, ks, Ps, ps, cs = [None] * T, [None] * T, [None] * (T + 1), [None] * (T + 1), [None] * (T + 1)
    Ps[T], ps[T], cs[T] = P, pv, const
    for t in range(T - 1, -1, -1):
        A, B, dist = p.A[t], p.B[t], p.noise[t]
        mu = dist.mean()
        lin = P @ mu + pv
        G = Rb[t] + B.T @ P @ B
        try:
            fac = sla.cho_factor(G)
        except sla.LinAlgError as exc:
            raise ProblemError(f"stage {t}: R_t + B'PB is not positive definite") from exc
        h = B.T @ lin + db[t]
        K = sla.cho_solve(fac, B.T @ P @ A)
        k = -sla.cho_solve(fac, h)
        PA = A.T @ P @ B
        const = (
            0.5 * np.sum(P * dist.second_moment()) + pv @ mu + const - 0.5 * h @ sla.cho_solve(fac, h)
        )
        P = Qb[t] + A.T @ P @ A - PA @ K
        P = 0.5 * (P + P.T)
        pv = cb[t] + A.T @ lin - PA @ sla.cho_solve(fac, h)
        Ks[t], ks[t], Ps[t], ps[t], cs[t] = K, k, P, pv, const
    return LqPolicy(Ks, ks, Ps, ps, cs)
