"""Independent reference solvers used only by the tests.

They parameterize implementable policies by one control per tree node and
solve the resulting problem directly, without progressive hedging.
"""
import itertools

import numpy as np


def node_index(sizes):
    """Map (t, outcome prefix) to a node number, plus the scenario list."""
    scen = list(itertools.product(*[range(k) for k in sizes]))
    nodes = {}
    for t in range(len(sizes)):
        for s in scen:
            nodes.setdefault((t, s[:t]), len(nodes))
    return scen, nodes


def selection(sizes, n):
    """Per-scenario matrices mapping node controls to stacked scenario controls."""
    scen, nodes = node_index(sizes)
    T = len(sizes)
    M = np.zeros((len(scen), n * T, n * len(nodes)))
    for i, s in enumerate(scen):
        for t in range(T):
            k = nodes[(t, s[:t])]
            M[i, t * n:(t + 1) * n, k * n:(k + 1) * n] = np.eye(n)
    return M


def tree_quadratic(sizes, rho, H, g, n):
    """Minimize ``sum_i rho_i (0.5 u_i'H_i u_i + g_i'u_i)`` over implementable ``u``.

    ``H`` is (S, d, d) or (d, d); ``g`` is (S, d).  Returns stacked
    scenario controls (S, d).  Uses a least-squares solve so semidefinite
    problems return the minimum-norm node solution.
    """
    M = selection(sizes, n)
    H = np.broadcast_to(H, (M.shape[0],) + (M.shape[1],) * 2)
    MtH = np.transpose(M, (0, 2, 1)) @ H
    HH = np.einsum("s,svw->vw", rho, MtH @ M)
    gg = np.einsum("s,sv->v", rho, (np.transpose(M, (0, 2, 1)) @ g[:, :, None])[:, :, 0])
    z = -np.linalg.lstsq(HH, gg, rcond=None)[0]
    return np.einsum("sav,v->sa", M, z)


def utility_tree_newton(P_outcomes, r, x0, gamma, stages, a=1.0, iters=200):
    """Exponential-utility-with-wealth-smoothing optimum by damped Newton on node controls."""
    P = np.asarray(P_outcomes, dtype=float)
    T = len(r)
    k, n = P.shape
    sizes = [k] * T
    scen, nodes = node_index(sizes)
    S = len(scen)
    nv = n * len(nodes)
    L = np.zeros((S, T + 1, nv))
    for i, s in enumerate(scen):
        for t in range(1, T + 1):
            for j in range(t):
                node = nodes[(j, s[:j])]
                L[i, t, n * node:n * node + n] = np.prod(r[j + 1:t]) * P[s[j]]
    base = x0 * np.concatenate([[1.0], np.cumprod(r)])
    idx = list(stages)
    Mc = np.eye(len(idx)) - 1.0 / len(idx)
    Ls = L[:, idx, :]
    Hs = 2 * gamma * np.einsum("stv,tk,skw->vw", Ls, Mc, Ls) / S

    def parts(z):
        X = base + L @ z
        e = np.exp(-X[:, T] / a)
        f = e.mean()  # E[exp(-x_T/a)]
        D = X[:, idx] @ Mc
        val = f + gamma * np.einsum("st,st->", D, X[:, idx]) / S
        grad = -(e[:, None] * L[:, T, :]).mean(0) / a + 2 * gamma * np.einsum("st,stv->v", D, Ls) / S
        hess = np.einsum("s,si,sj->ij", e, L[:, T, :], L[:, T, :]) / S / a**2 + Hs
        return val, grad, hess

    z = np.zeros(nv)
    for _ in range(iters):
        val, grad, hess = parts(z)
        if np.linalg.norm(grad) < 1e-13:
            break
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while parts(z - t * step)[0] > val - 1e-4 * t * grad @ step and t > 1e-12:
            t *= 0.5
        z = z - t * step
    M = selection(sizes, n)
    return np.einsum("sav,v->sa", M, z), base + L @ z
