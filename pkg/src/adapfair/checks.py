"""Numerical self-checks: every analytic gradient against finite differences,
the entropic value against an exact LP, and flow invertibility.

``run_checks()`` returns a list of :class:`CheckResult`; the CLI prints them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import ot
from .classifier import LogisticModel, MLPModel
from .data import synth_biased_gaussians
from .flow import init_flow
from .trainer import FairnessSpec, TrainConfig, assemble_gradients, init_state, total_loss


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.value:.3e} (tol {self.tolerance:.0e}, {self.seconds:.1f}s)"


def _rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def _random_problem(rng, lo=2, hi=8):
    n0, n1 = rng.integers(lo, hi + 1, size=2)
    r0, r1 = rng.uniform(0, 1, n0), rng.uniform(0, 1, n1)
    return ot.build_cost_matrix(r0, r1), ot.uniform_weights(n0), ot.uniform_weights(n1)


def _sinkhorn_value(M, a, b, eps):
    sol = ot.solve_dual(M, a, b, eps)
    return ot.sharp_sinkhorn_value(ot.recover_plan(sol, M, a, b), M)


def check_dual_gradient(rng, n=10, h=1e-6):
    worst = 0.0
    for _ in range(n):
        M, a, b = _random_problem(rng)
        beta = rng.normal(0, 0.05, b.size - 1)
        _, grad, _ = ot.dual_objective(beta, M, a, b, 20.0)
        fd = np.array([(ot.dual_objective(beta + h * e, M, a, b, 20.0)[0]
                        - ot.dual_objective(beta - h * e, M, a, b, 20.0)[0]) / (2 * h)
                       for e in np.eye(beta.size)])
        worst = max(worst, _rel(grad, fd))
    return worst


def check_marginals(rng, n=10):
    worst = 0.0
    for _ in range(n):
        M, a, b = _random_problem(rng)
        P = ot.recover_plan(ot.solve_dual(M, a, b, 50.0), M, a, b)
        worst = max(worst, np.max(np.abs(P.sum(1) - a)), np.max(np.abs(P.sum(0) - b)))
    return float(worst)


def check_lp_sandwich(rng, n=20):
    """Most negative ``S_eps - W_lp``; must not go below -1e-9."""
    worst = np.inf
    for _ in range(n):
        M, a, b = _random_problem(rng, 2, 10)
        worst = min(worst, _sinkhorn_value(M, a, b, 100.0) - ot.exact_wasserstein_lp(M, a, b)[0])
    return -float(worst)


def check_cost_gradient(rng, n=5, eps=20.0, h=1e-6):
    worst = 0.0
    for _ in range(n):
        M, a, b = _random_problem(rng, 2, 6)
        P = ot.recover_plan(ot.solve_dual(M, a, b, eps), M, a, b)
        G = ot.grad_cost_matrix(P, M, a, b, eps)
        fd = np.zeros_like(M)
        for idx in np.ndindex(*M.shape):
            E = np.zeros_like(M)
            E[idx] = h
            fd[idx] = (_sinkhorn_value(M + E, a, b, eps) - _sinkhorn_value(M - E, a, b, eps)) / (2 * h)
        worst = max(worst, _rel(G, fd))
    return worst


def check_flow_inverse(rng, n=1000):
    T = init_flow(3, 2, 8, seed=int(rng.integers(1 << 30)))
    T = T.with_params(T.params + rng.normal(0, 0.3, T.param_count))
    x = rng.normal(size=(n, 3))
    return float(max(np.max(np.abs(T.inverse(T.forward(x)) - x)), np.max(np.abs(T.forward(T.inverse(x)) - x))))


def check_flow_vjp(rng, h=1e-6):
    T = init_flow(3, 2, 5, seed=int(rng.integers(1 << 30)))
    T = T.with_params(T.params + rng.normal(0, 0.3, T.param_count))
    x, u = rng.normal(size=3), rng.normal(size=3)
    fd = np.empty(T.param_count)
    for k in range(T.param_count):
        p, q = T.params.copy(), T.params.copy()
        p[k] += h
        q[k] -= h
        fd[k] = (u @ T.with_params(p).forward(x) - u @ T.with_params(q).forward(x)) / (2 * h)
    return _rel(T.vjp_params(x, u), fd)


def check_classifier_gradient(rng, h=1e-6):
    worst = 0.0
    for model in (LogisticModel.from_weights(rng.normal(size=4), 0.3), MLPModel.init(4, (20, 20), seed=1)):
        x = rng.normal(size=4)
        fd = np.array([(model.predict_score(x + h * e) - model.predict_score(x - h * e)) / (2 * h)
                       for e in np.eye(4)])
        worst = max(worst, _rel(model.input_gradient(x), fd))
    return worst


def check_full_gradient(rng, h=1e-5):
    data = synth_biased_gaussians(4, 3, 1.0, 0.0, seed=int(rng.integers(1 << 30)))
    handle = LogisticModel.from_weights([1.5, -0.5, 0.8], 0.1)
    worst = 0.0
    for lam in (0.0, 0.5, 1.0):
        config = TrainConfig(lam=lam, epsilon=20.0, n_blocks=2, hidden_width=4, seed=3)
        spec = FairnessSpec("dp", "aware")
        state = init_state(3, spec, config)
        state.T0 = state.T0.with_params(state.T0.params + rng.normal(0, 0.2, state.T0.param_count))
        state.T1 = state.T1.with_params(state.T1.params + rng.normal(0, 0.2, state.T1.param_count))
        g0, g1 = assemble_gradients(state, data, handle, spec, config)
        th0, th1 = state.theta0.copy(), state.theta1.copy()
        fd0, fd1 = np.zeros_like(th0), np.zeros_like(th1)
        for k in range(th0.size):
            e = np.zeros_like(th0)
            e[k] = h
            fd0[k] = (total_loss(th0 + e, th1, data, handle, spec, config, state.T0)[0]
                      - total_loss(th0 - e, th1, data, handle, spec, config, state.T0)[0]) / (2 * h)
            fd1[k] = (total_loss(th0, th1 + e, data, handle, spec, config, state.T0)[0]
                      - total_loss(th0, th1 - e, data, handle, spec, config, state.T0)[0]) / (2 * h)
        worst = max(worst, _rel(np.concatenate([g0, g1]), np.concatenate([fd0, fd1])))
    return worst


CHECKS = [
    ("dual gradient vs finite differences", check_dual_gradient, 1e-6),
    ("plan marginals", check_marginals, 1e-6),
    ("LP value <= sharp Sinkhorn value", check_lp_sandwich, 1e-9),
    ("cost-matrix gradient vs finite differences", check_cost_gradient, 1e-4),
    ("flow round trip", check_flow_inverse, 1e-8),
    ("flow parameter VJP vs finite differences", check_flow_vjp, 1e-5),
    ("classifier input gradient vs finite differences", check_classifier_gradient, 1e-6),
    ("total-loss gradient vs finite differences", check_full_gradient, 1e-3),
]


def run_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, tol in CHECKS:
        start = time.perf_counter()
        value = fn(rng)
        results.append(CheckResult(name, bool(value <= tol), value, tol, time.perf_counter() - start))
    return results
