"""Pure NumPy implementations of the hot PHA kernels.

These mirror ``_kernels_c.pyx`` one to one and serve as the fallback when the
compiled extension is unavailable.  Reductions over scenarios run in scenario
order so both backends agree to rounding.
"""
import numpy as np

EXPONENTIAL = 0
POWER = 1
LOGARITHMIC = 2


def aggregate(U, bundle_ids, n_bundles, rho, n):
    """Replace each stage block of ``U`` by its bundle-conditional mean.

    Parameters
    ----------
    U : (S, n*T) array
        Stacked per-scenario controls.
    bundle_ids : (T, S) int array
        Bundle id of every scenario at every stage.
    n_bundles : (T,) int array
        Number of bundles per stage.
    rho : (S,) array
        Scenario probabilities.
    n : int
        Control dimension per stage.
    """
    S, nT = U.shape
    T = nT // n
    out = np.empty_like(U)
    for t in range(T):
        ids = bundle_ids[t]
        block = U[:, t * n:(t + 1) * n]
        sums = np.zeros((n_bundles[t], n))
        np.add.at(sums, ids, rho[:, None] * block)
        mass = np.zeros(n_bundles[t])
        np.add.at(mass, ids, rho)
        out[:, t * n:(t + 1) * n] = sums[ids] / mass[ids, None]
    return out


def multiplier_step(W, U, U_hat, U_hat_old, rho, alpha):
    """Multiplier recursion fused with the stopping metric.

    Returns the new multipliers and
    ``sum_i rho_i (|U_hat_i - U_hat_old_i|^2 + |W_new_i - W_i|^2 / alpha^2)``.
    """
    gap = U - U_hat
    W_new = W + alpha * gap
    # |W_new - W|^2 / alpha^2 == |gap|^2 exactly in real arithmetic; keep the
    # literal form so both backends round identically.
    dW = W_new - W
    dU = U_hat - U_hat_old
    per = np.einsum("ij,ij->i", dU, dU) + np.einsum("ij,ij->i", dW, dW) / alpha**2
    metric = 0.0
    for value in rho * per:
        metric += value
    return W_new, float(metric)


def batched_matvec(M, x):
    """Return ``M[i] @ x[i]`` for every scenario ``i``."""
    return np.einsum("ijk,ik->ij", M, x)


def _marginal(y, kind, a, b):
    # U'(y) and U''(y) for the supported HARA members.
    if kind == EXPONENTIAL:
        d1 = np.exp(-y / a) / a
        return d1, -d1 / a
    base = a + b * y
    if kind == LOGARITHMIC:
        return 1.0 / base, -1.0 / base**2
    d1 = base ** (-1.0 / b)
    return d1, -d1 / base


def hara_root(beta0, kappa, kind, a, b, tol=1e-13, max_iter=200):
    """Solve ``y - beta0 - kappa * U'(y) = 0`` for every scenario.

    The left side is strictly increasing in ``y`` (``U'' < 0``, ``kappa >= 0``),
    so each root is unique.  Newton steps are safeguarded by a bracket that
    also keeps iterates inside the utility domain.

    Returns
    -------
    y : array
        Roots, one per scenario.
    iterations : int
        Iterations used by the slowest scenario.
    """
    beta0 = np.array(beta0, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    lo = np.full_like(beta0, -np.inf)
    hi = np.full_like(beta0, np.inf)
    y = beta0.copy()
    if kind != EXPONENTIAL:
        edge = -a / b
        if b > 0:
            outside = beta0 <= edge
            lo[:] = edge
            y[outside] = edge + 1.0
        else:
            if np.any(beta0 >= edge):
                raise ValueError("utility domain violated: no root below a + b*y = 0")
            hi[:] = edge
    active = kappa > 0.0
    it = 0
    while active.any() and it < max_iter:
        it += 1
        ya, ka = y[active], kappa[active]
        with np.errstate(over="ignore", invalid="ignore"):
            d1, d2 = _marginal(ya, kind, a, b)
            h = ya - beta0[active] - ka * d1
        la, ha = lo[active], hi[active]
        la = np.where(h < 0, ya, la)
        ha = np.where(h >= 0, ya, ha)
        with np.errstate(over="ignore", invalid="ignore"):
            y_new = ya - h / (1.0 - ka * d2)
        bad = ~np.isfinite(y_new) | (y_new <= la) | (y_new >= ha)
        fallback = np.where(np.isfinite(ha), 0.5 * (la + ha), la + 2.0 * np.abs(ya - la) + 1.0)
        y_new = np.where(bad, fallback, y_new)
        done = np.abs(y_new - ya) <= tol * np.maximum(1.0, np.abs(ya))
        lo[active], hi[active], y[active] = la, ha, y_new
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return y, it
