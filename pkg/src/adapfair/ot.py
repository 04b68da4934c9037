"""Entropic optimal transport between scalar score samples.

The regularized problem is solved through its semi-dual: for a fixed column
potential ``beta`` the row potential ``alpha`` has a closed form, so only
``n1 - 1`` variables remain (the last entry of ``beta`` is pinned to 0).
All plan evaluations go through log-sum-exp so large ``epsilon`` is safe.

Conventions: ``epsilon`` multiplies the cost, i.e. the plan is
``P = exp(epsilon * (alpha 1^T + 1 beta^T - M))``; larger ``epsilon`` means
weaker regularization.
"""

from __future__ import annotations

from dataclasses import dataclass

import warnings

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import (
    DualNotConverged,
    InstanceTooLarge,
    InvalidConfig,
    InvalidInput,
    MaxIterReached,
    NumericalFailure,
)

DEFAULT_EPSILON = 50.0
DEFAULT_DUAL_TOL = 1e-8
POLISH_TOL = 1e-13
DEFAULT_MAX_ITER = 500
LBFGS_HISTORY = 10
MARGINAL_TOL = 1e-4
MAX_CONDITION = 1e12
LP_MAX_ENTRIES = 4096


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted point cloud on the real line."""

    supports: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        supports = np.asarray(self.supports, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if supports.size == 0:
            raise InvalidInput("measure needs at least one support point")
        if weights.shape != supports.shape:
            raise InvalidInput(f"{weights.size} weights for {supports.size} supports")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidInput("weights must lie on the probability simplex")
        object.__setattr__(self, "supports", supports)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, supports) -> "EmpiricalMeasure":
        supports = np.asarray(supports, dtype=float).reshape(-1)
        if supports.size == 0:
            raise InvalidInput("measure needs at least one support point")
        return cls(supports, np.full(supports.size, 1.0 / supports.size))

    def __len__(self) -> int:
        return self.supports.size


@dataclass(frozen=True)
class DualSolution:
    alpha: np.ndarray
    beta: np.ndarray
    epsilon: float
    iterations: int
    grad_norm: float
    converged: bool = True


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _as_scores(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size == 0:
        raise InvalidInput(f"{name} is empty")
    if not np.all(np.isfinite(x)):
        raise InvalidInput(f"{name} contains non-finite values")
    return x


def _check_problem(M, a, b, epsilon=None):
    M = np.asarray(M, dtype=float)
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if M.ndim != 2 or M.shape != (a.size, b.size):
        raise InvalidInput(f"cost shape {M.shape} does not match weights ({a.size}, {b.size})")
    if epsilon is not None and not epsilon > 0:
        raise InvalidConfig(f"epsilon must be positive, got {epsilon}")
    return M, a, b


def build_cost_matrix(scores0, scores1) -> np.ndarray:
    """Squared differences ``(scores0[i] - scores1[j])**2`` as an n0 x n1 array."""
    r0 = _as_scores(scores0, "scores0")
    r1 = _as_scores(scores1, "scores1")
    return (r0[:, None] - r1[None, :]) ** 2


def _plan(beta, M, a, epsilon):
    """Return (P, alpha) for a full-length ``beta``; row-max shifted exponentials."""
    z = epsilon * (beta[None, :] - M)
    zmax = z.max(axis=1)
    E = np.exp(z - zmax[:, None])
    rows = E.sum(axis=1)
    alpha = (np.log(a) - zmax - np.log(rows)) / epsilon
    return E * (a / rows)[:, None], alpha


def dual_objective(beta_tilde, M, a, b, epsilon: float):
    """Semi-dual value, gradient in the free coordinates, and the matching alpha.

    ``beta_tilde`` holds the first ``n1 - 1`` entries of ``beta``; the last is 0.
    """
    M, a, b = _check_problem(M, a, b, epsilon)
    beta = np.append(np.asarray(beta_tilde, dtype=float).reshape(-1), 0.0)
    if beta.size != b.size:
        raise InvalidInput(f"beta_tilde must have length {b.size - 1}")
    P, alpha = _plan(beta, M, a, epsilon)
    value = -alpha @ a - beta @ b + 1.0 / epsilon
    col = P[:, :-1].sum(axis=0)
    return float(value), col - b[:-1], alpha


def _newton_polish(beta_tilde, M, a, b, epsilon, tol, max_steps):
    """Damped Newton on the semi-dual; its Hessian is epsilon * B."""
    value, grad, _ = dual_objective(beta_tilde, M, a, b, epsilon)
    steps = 0
    while np.max(np.abs(grad), initial=0.0) > tol and steps < max_steps:
        pt = _plan(np.append(beta_tilde, 0.0), M, a, epsilon)[0][:, :-1]
        hess = epsilon * (np.diag(pt.sum(axis=0)) - pt.T @ (pt / a[:, None]))
        try:
            with warnings.catch_warnings():
                # a singular Hessian (forced plan) is fine: the line search vets the step
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                direction = scipy.linalg.solve(hess, grad, assume_a="sym")
        except (np.linalg.LinAlgError, ValueError):
            break
        t = 1.0
        while t > 1e-10:
            candidate = beta_tilde - t * direction
            new_value, new_grad, _ = dual_objective(candidate, M, a, b, epsilon)
            if not np.isfinite(new_value):
                pass
            # near the optimum value changes drop below round-off; the gradient still resolves progress
            elif new_value <= value + 1e-4 * t * (grad @ -direction) or (
                    np.max(np.abs(new_grad)) < 0.5 * np.max(np.abs(grad))):
                break
            t *= 0.5
        else:
            break
        beta_tilde, value, grad = candidate, new_value, new_grad
        steps += 1
    return beta_tilde, grad, steps


def solve_dual(
    M,
    a,
    b,
    epsilon: float = DEFAULT_EPSILON,
    tol: float = DEFAULT_DUAL_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    beta_init=None,
    raise_on_maxiter: bool = True,
) -> DualSolution:
    """Minimize the semi-dual over the free column potentials with L-BFGS.

    A few damped Newton steps then polish the iterate to round-off, which also
    covers L-BFGS line-search breakdown close to machine precision. Convergence
    is still judged against ``tol``. ``beta_init`` (the
    free coordinates of a previous solution) warm-starts the search.
    """
    M, a, b = _check_problem(M, a, b, epsilon)
    if not tol > 0:
        raise InvalidConfig(f"tol must be positive, got {tol}")
    n1 = b.size
    x0 = np.zeros(n1 - 1)
    if beta_init is not None and np.size(beta_init) == n1 - 1:
        x0 = np.array(beta_init, dtype=float)
    iterations = 0
    if n1 > 1:
        def fun(x):
            value, grad, _ = dual_objective(x, M, a, b, epsilon)
            if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                raise NumericalFailure("non-finite dual objective")
            return value, grad

        res = scipy.optimize.minimize(
            fun,
            x0,
            jac=True,
            method="L-BFGS-B",
            options={"maxcor": LBFGS_HISTORY, "gtol": tol, "ftol": 0.0, "maxiter": max_iter},
        )
        x0 = res.x
        iterations = int(res.nit)
        # Newton converges quadratically here, so polish past tol; the value then
        # carries no solver error worth speaking of
        x0, _, polish = _newton_polish(x0, M, a, b, epsilon, min(tol, POLISH_TOL), max(max_iter - iterations, 20))
        iterations += polish

    value, grad, alpha = dual_objective(x0, M, a, b, epsilon)
    if not np.isfinite(value):
        raise NumericalFailure("non-finite dual objective")
    grad_norm = float(np.max(np.abs(grad), initial=0.0))
    sol = DualSolution(alpha, np.append(x0, 0.0), float(epsilon), iterations, grad_norm, grad_norm <= tol)
    if not sol.converged and raise_on_maxiter:
        raise MaxIterReached(f"dual gradient norm {grad_norm:.3e} > tol {tol:.1e}", sol)
    return sol


def recover_plan(sol: DualSolution, M, a, b) -> np.ndarray:
    M, a, b = _check_problem(M, a, b)
    log_p = sol.epsilon * (sol.alpha[:, None] + sol.beta[None, :] - M)
    plan = np.exp(log_p)
    violation = max(np.max(np.abs(plan.sum(axis=1) - a)), np.max(np.abs(plan.sum(axis=0) - b)))
    if violation > MARGINAL_TOL:
        raise DualNotConverged(f"plan marginals off by {violation:.3e}")
    return plan


def sharp_sinkhorn_value(P, M) -> float:
    """Transport cost ``<P, M>`` of a plan, without the entropy term."""
    P = np.asarray(P, dtype=float)
    M = np.asarray(M, dtype=float)
    if P.shape != M.shape:
        raise InvalidInput(f"plan shape {P.shape} != cost shape {M.shape}")
    return float(np.sum(P * M))


def grad_cost_matrix(P, M, a, b, epsilon: float) -> np.ndarray:
    """Gradient of ``<P*(M), M>`` with respect to the cost matrix.

    Implicit differentiation through the optimality conditions; the linear
    system in the free column multipliers is solved with a pivoted LU.
    """
    M, a, b = _check_problem(M, a, b, epsilon)
    P = np.asarray(P, dtype=float)
    mu_r = (M * P).sum(axis=1)
    if b.size > 1:
        pt = P[:, :-1]
        mu_c = (M[:, :-1] * pt).sum(axis=0)
        B = np.diag(b[:-1]) - pt.T @ (pt / a[:, None])
        lu, piv = scipy.linalg.lu_factor(B, check_finite=True)
        rcond, _ = scipy.linalg.lapack.dgecon(lu, np.linalg.norm(B, 1), norm="1")
        if not rcond > 1.0 / MAX_CONDITION:
            cond = np.inf if rcond == 0 else 1.0 / rcond
            raise NumericalFailure(f"B is ill-conditioned (cond ~ {cond:.3e})", condition=cond)
        sv_tilde = scipy.linalg.lu_solve((lu, piv), mu_c - pt.T @ (mu_r / a))
        s_u = (mu_r - pt @ sv_tilde) / a
        s_v = np.append(sv_tilde, 0.0)
    else:
        s_u = mu_r / a
        s_v = np.zeros(1)
    return P + epsilon * (s_u[:, None] + s_v[None, :] - M) * P


def sharp_sinkhorn(scores0, scores1, epsilon: float = DEFAULT_EPSILON, tol: float = DEFAULT_DUAL_TOL,
                   max_iter: int = DEFAULT_MAX_ITER, a=None, b=None):
    """Convenience pipeline: cost, dual solve, plan, value. Returns (value, plan, M, a, b)."""
    M = build_cost_matrix(scores0, scores1)
    a = uniform_weights(M.shape[0]) if a is None else np.asarray(a, dtype=float)
    b = uniform_weights(M.shape[1]) if b is None else np.asarray(b, dtype=float)
    sol = solve_dual(M, a, b, epsilon, tol, max_iter)
    plan = recover_plan(sol, M, a, b)
    return sharp_sinkhorn_value(plan, M), plan, M, a, b


def exact_wasserstein_1d(scores0, scores1) -> float:
    """Exact squared-cost OT between uniform samples via the monotone coupling."""
    r0 = np.sort(_as_scores(scores0, "scores0"))
    r1 = np.sort(_as_scores(scores1, "scores1"))
    n0, n1 = r0.size, r1.size
    # Integrate the squared quantile difference over merged breakpoints k/n0, l/n1
    # using integer arithmetic on the common grid 1/(n0*n1).
    cuts = np.union1d(np.arange(n0 + 1) * n1, np.arange(n1 + 1) * n0)
    lo, hi = cuts[:-1], cuts[1:]
    i = lo // n1
    j = lo // n0
    return float(np.sum((hi - lo) * (r0[i] - r1[j]) ** 2) / (n0 * n1))


def exact_wasserstein_lp(M, a, b):
    """Solve the unregularized transport LP exactly (small instances only)."""
    M, a, b = _check_problem(M, a, b)
    n0, n1 = M.shape
    if n0 * n1 > LP_MAX_ENTRIES:
        raise InstanceTooLarge(f"{n0}x{n1} exceeds {LP_MAX_ENTRIES} plan entries")
    rows = np.kron(np.eye(n0), np.ones((1, n1)))
    cols = np.kron(np.ones((1, n0)), np.eye(n1))
    res = scipy.optimize.linprog(
        M.reshape(-1),
        A_eq=np.vstack([rows, cols[:-1]]),
        b_eq=np.concatenate([a, b[:-1]]),
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise NumericalFailure(f"transport LP failed: {res.message}")
    plan = np.clip(res.x.reshape(n0, n1), 0.0, None)
    return float(np.sum(plan * M)), plan
