"""Learning fair preprocessors in front of a frozen classifier.

Every epoch scores the transformed data with the black box, solves one
entropic transport problem per fairness pair, and backpropagates

    lambda * mean BCE + (1 - lambda) * sum of sharp Sinkhorn terms

into the preprocessor parameters. The transport part of the gradient reaches
each score through the closed-form cost-matrix gradient, the score reaches the
transformed input through the classifier's input gradient, and the transformed
input reaches the parameters through the preprocessor's VJP. The classifier
itself is only ever evaluated, never updated.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import ot
from .classifier import bce_and_residual, input_gradients, predict_scores
from .data import LabeledDataset
from .errors import (
    DegenerateGroup,
    InstanceTooLarge,
    InvalidConfig,
    MaxIterReached,
    NumericalFailure,
    TrainingFailure,
)
from .flow import FcnnPreprocessor, init_flow

log = logging.getLogger(__name__)

MAX_PLAN_ENTRIES = 10**7


class Notion(str, Enum):
    DP = "dp"
    EOPP = "eopp"
    EODDS = "eodds"


class Mode(str, Enum):
    AWARE = "aware"
    BLIND = "blind"


@dataclass(frozen=True)
class FairnessSpec:
    notion: Notion = Notion.DP
    mode: Mode = Mode.AWARE

    def __post_init__(self):
        object.__setattr__(self, "notion", Notion(self.notion))
        object.__setattr__(self, "mode", Mode(self.mode))


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.95
    epsilon: float = ot.DEFAULT_EPSILON
    eta: float = 0.03
    K: int = 500
    seed: int = 0
    dual_tol: float = ot.DEFAULT_DUAL_TOL
    dual_max_iter: int = ot.DEFAULT_MAX_ITER
    grad_tol: float = 1e-5
    patience: int = 10
    momentum: float = 0.9
    preprocessor: str = "flow"
    n_blocks: int = 10
    hidden_width: int = 20
    fcnn_depth: int = 10
    fcnn_width: int = 20
    validation_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidConfig(f"lam must be in [0, 1], got {self.lam}")
        for name in ("epsilon", "eta", "dual_tol", "grad_tol"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive")
        if self.K < 0 or self.patience < 1 or not 0.0 <= self.momentum < 1.0:
            raise InvalidConfig("K >= 0, patience >= 1 and momentum in [0, 1) required")
        if self.preprocessor not in ("flow", "fcnn"):
            raise InvalidConfig(f"unknown preprocessor {self.preprocessor!r}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise InvalidConfig("validation_fraction must be in [0, 1)")


@dataclass
class TrainState:
    T0: object
    T1: object
    spec: FairnessSpec
    epoch: int = 0
    history: list = field(default_factory=list)
    converged: bool = False
    best_epoch: int = 0
    counters: dict = field(default_factory=lambda: {"ot_solves": 0, "bce_gradients": 0})

    @property
    def theta0(self) -> np.ndarray:
        return self.T0.params

    @property
    def theta1(self) -> np.ndarray:
        return self.T1.params

    def transform(self, X, s=None) -> np.ndarray:
        """Apply the learned preprocessors; blind mode never looks at ``s``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.spec.mode is Mode.BLIND:
            return self.T0.forward(X)
        if s is None:
            raise InvalidConfig("attribute-aware preprocessing needs the sensitive attribute")
        s = np.asarray(s).reshape(-1)
        out = np.empty_like(X)
        for g, T in ((0, self.T0), (1, self.T1)):
            if np.any(s == g):
                out[s == g] = T.forward(X[s == g])
        return out

    def scores(self, handle, X, s=None) -> np.ndarray:
        return predict_scores(handle, self.transform(X, s))


def make_preprocessor(dim: int, config: TrainConfig):
    if config.preprocessor == "fcnn":
        return FcnnPreprocessor.init(dim, config.fcnn_depth, config.fcnn_width, config.seed)
    return init_flow(dim, config.n_blocks, config.hidden_width, config.seed)


def partition_groups(dataset: LabeledDataset, spec: FairnessSpec) -> list:
    """Index pairs whose score distributions must match, group S=0 first."""
    s, y = dataset.sensitive, dataset.labels
    if spec.notion is Notion.DP:
        strata = [None]
    elif spec.notion is Notion.EOPP:
        strata = [1]
    else:
        strata = [1, 0]
    pairs = []
    for label in strata:
        keep = np.ones(len(s), bool) if label is None else y == label
        ia, ib = np.flatnonzero(keep & (s == 0)), np.flatnonzero(keep & (s == 1))
        if ia.size == 0 or ib.size == 0:
            cond = "" if label is None else f", Y={label}"
            raise DegenerateGroup(f"empty group for {spec.notion.value}",
                                  {f"S=0{cond}": int(ia.size), f"S=1{cond}": int(ib.size)})
        pairs.append((ia, ib))
    return pairs


def fairness_weight_vectors(P, M, scores0, scores1, a, b, epsilon: float):
    """Derivatives of the sharp Sinkhorn value with respect to each score."""
    r0 = np.asarray(scores0, dtype=float)
    r1 = np.asarray(scores1, dtype=float)
    H = ot.grad_cost_matrix(P, M, a, b, epsilon)
    c0 = 2.0 * (r0 * H.sum(axis=1) - H @ r1)
    c1 = 2.0 * (r1 * H.sum(axis=0) - H.T @ r0)
    return c0, c1


def _routes(dataset, spec):
    if spec.mode is Mode.BLIND:
        return np.zeros(len(dataset), dtype=int)
    return dataset.sensitive


def _transform(T0, T1, X, route):
    out = np.empty_like(X)
    for g, T in ((0, T0), (1, T1)):
        if np.any(route == g):
            out[route == g] = T.forward(X[route == g])
    return out


def _sinkhorn_pair(ra, rb, config, counters, warm=None, key=None):
    if ra.size * rb.size > MAX_PLAN_ENTRIES:
        raise InstanceTooLarge(f"{ra.size}x{rb.size} plan exceeds {MAX_PLAN_ENTRIES} entries")
    M = ot.build_cost_matrix(ra, rb)
    a, b = ot.uniform_weights(ra.size), ot.uniform_weights(rb.size)
    counters["ot_solves"] += 1
    beta_init = None if warm is None else warm.get(key)
    try:
        sol = ot.solve_dual(M, a, b, config.epsilon, config.dual_tol, config.dual_max_iter, beta_init=beta_init)
    except MaxIterReached as exc:
        log.warning("dual solve stopped early: %s", exc)
        sol = exc.solution
    if warm is not None:
        warm[key] = sol.beta[:-1]
    P = ot.recover_plan(sol, M, a, b)
    return ot.sharp_sinkhorn_value(P, M), P, M, a, b


def _evaluate(T0, T1, dataset, handle, spec, config, counters, with_grad, warm=None, tag=""):
    route = _routes(dataset, spec)
    X = dataset.features
    Xt = _transform(T0, T1, X, route)
    r = predict_scores(handle, Xt)
    y = dataset.labels
    n = len(y)
    losses, residual = bce_and_residual(y, r)
    clf = float(np.mean(losses))

    lam = config.lam
    weight = np.zeros(n)
    fairness = 0.0
    if lam < 1.0:
        for k, (ia, ib) in enumerate(partition_groups(dataset, spec)):
            value, P, M, a, b = _sinkhorn_pair(r[ia], r[ib], config, counters, warm, (tag, k))
            fairness += value
            if with_grad:
                c0, c1 = fairness_weight_vectors(P, M, r[ia], r[ib], a, b, config.epsilon)
                weight[ia] += (1.0 - lam) * c0
                weight[ib] += (1.0 - lam) * c1
    else:
        # Not optimized at lam == 1; logged as the exact (unregularized) distance.
        for ia, ib in partition_groups(dataset, spec):
            fairness += ot.exact_wasserstein_1d(r[ia], r[ib])
    total = lam * clf + (1.0 - lam) * fairness
    if not with_grad:
        return total, clf, fairness, None, None

    if lam > 0.0:
        counters["bce_gradients"] += 1
        weight += lam * residual / n
    upstream = weight[:, None] * input_gradients(handle, Xt)
    if not np.all(np.isfinite(upstream)):
        raise NumericalFailure("non-finite upstream gradient", component="classifier/transport")
    if spec.mode is Mode.BLIND:
        g0 = T0.vjp_params(X, upstream)
        g1 = g0
    else:
        g0, g1 = (T.vjp_params(X[route == g], upstream[route == g]) if np.any(route == g)
                  else np.zeros(T.param_count) for g, T in ((0, T0), (1, T1)))
    for name, g in (("theta0", g0), ("theta1", g1)):
        if not np.all(np.isfinite(g)):
            raise NumericalFailure(f"non-finite gradient for {name}", component=name)
    return total, clf, fairness, g0, g1


def total_loss(theta0, theta1, dataset, handle, spec: FairnessSpec, config: TrainConfig, template=None):
    """``(total, clf, fairness)`` for parameter vectors interpreted through ``template``."""
    template = template or make_preprocessor(dataset.dim, config)
    T0 = template.with_params(theta0)
    T1 = T0 if spec.mode is Mode.BLIND else template.with_params(theta1)
    counters = {"ot_solves": 0, "bce_gradients": 0}
    total, clf, fairness, _, _ = _evaluate(T0, T1, dataset, handle, spec, config, counters, False)
    return total, clf, fairness


def assemble_gradients(state: TrainState, dataset, handle, spec: FairnessSpec, config: TrainConfig):
    """Gradients of the total loss in ``theta0`` and ``theta1`` (the same array in blind mode)."""
    _, _, _, g0, g1 = _evaluate(state.T0, state.T1, dataset, handle, spec, config, state.counters, True)
    return g0, g1


def init_state(dim: int, spec: FairnessSpec, config: TrainConfig) -> TrainState:
    T0 = make_preprocessor(dim, config)
    T1 = T0 if spec.mode is Mode.BLIND else make_preprocessor(dim, config)
    return TrainState(T0, T1, spec)


def adapfair_train(dataset: LabeledDataset, handle, spec: FairnessSpec, config: TrainConfig,
                   validation: LabeledDataset | None = None, callback=None) -> TrainState:
    """Full-batch gradient descent on the preprocessor parameters.

    Without an explicit ``validation`` set, ``config.validation_fraction`` of the
    data is held out (seeded). The returned state carries the parameters of the
    epoch with the lowest validation total loss.
    """
    spec = FairnessSpec(spec.notion, spec.mode)
    if validation is None and config.validation_fraction > 0:
        perm = np.random.default_rng(config.seed).permutation(len(dataset))
        n_val = int(round(config.validation_fraction * len(dataset)))
        validation = dataset.subset(np.sort(perm[:n_val]))
        dataset = dataset.subset(np.sort(perm[n_val:]))
    partition_groups(dataset, spec)

    state = init_state(dataset.dim, spec, config)
    blind = spec.mode is Mode.BLIND
    theta0 = state.T0.params.copy()
    theta1 = theta0 if blind else state.T1.params.copy()
    vel0, vel1 = np.zeros_like(theta0), np.zeros_like(theta1)
    best = (np.inf, theta0.copy(), theta1.copy(), 0)
    failures = stall = 0
    prev_total = None
    warm = {}

    for epoch in range(config.K):
        T0 = state.T0.with_params(theta0)
        T1 = T0 if blind else state.T1.with_params(theta1)
        try:
            total, clf, fairness, g0, g1 = _evaluate(T0, T1, dataset, handle, spec, config, state.counters, True,
                                                    warm, "train")
            if validation is not None:
                val_total = _evaluate(T0, T1, validation, handle, spec, config, state.counters, False,
                                      warm, "val")[0]
            else:
                val_total = total
        except NumericalFailure as exc:
            failures += 1
            log.warning("epoch %d: %s", epoch, exc)
            if failures >= 3:
                raise TrainingFailure(f"numerical failure in 3 consecutive epochs: {exc}") from exc
            continue
        failures = 0
        state.history.append({"epoch": epoch, "total": total, "clf": clf, "fairness": fairness,
                              "val_total": val_total})
        if callback is not None:
            callback(epoch, state.history[-1])
        if val_total < best[0]:
            best = (val_total, theta0.copy(), theta1.copy(), epoch)

        vel0 = config.momentum * vel0 + g0
        theta0 = theta0 - config.eta * vel0
        if blind:
            theta1 = theta0
        else:
            vel1 = config.momentum * vel1 + g1
            theta1 = theta1 - config.eta * vel1

        if prev_total is not None and (prev_total - total) / max(abs(prev_total), 1e-12) < config.grad_tol:
            stall += 1
        else:
            stall = 0
        prev_total = total
        if stall >= config.patience:
            state.converged = True
            break

    state.epoch = len(state.history)
    _, theta0, theta1, state.best_epoch = best
    state.T0 = state.T0.with_params(theta0)
    state.T1 = state.T0 if blind else state.T1.with_params(theta1)
    return state


def save_state(state: TrainState, outdir, config: TrainConfig | None = None) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    state.T0.save(outdir / "T0.bin")
    if state.spec.mode is Mode.AWARE:
        state.T1.save(outdir / "T1.bin")
    meta = {"notion": state.spec.notion.value, "mode": state.spec.mode.value, "epochs": state.epoch,
            "best_epoch": state.best_epoch, "converged": state.converged, "counters": state.counters}
    if config is not None:
        meta["config"] = asdict(config)
    (outdir / "state.json").write_text(json.dumps(meta, indent=2))
    with open(outdir / "history.jsonl", "w") as fh:
        for row in state.history:
            fh.write(json.dumps(row) + "\n")


def load_state(outdir) -> TrainState:
    from .flow import load_preprocessor

    outdir = Path(outdir)
    meta = json.loads((outdir / "state.json").read_text())
    spec = FairnessSpec(meta["notion"], meta["mode"])
    T0 = load_preprocessor(outdir / "T0.bin")
    T1 = T0 if spec.mode is Mode.BLIND else load_preprocessor(outdir / "T1.bin")
    history = [json.loads(line) for line in (outdir / "history.jsonl").read_text().splitlines() if line]
    state = TrainState(T0, T1, spec, meta["epochs"], history, meta["converged"], meta["best_epoch"])
    state.counters = meta.get("counters", state.counters)
    return state


def clone_state(state: TrainState) -> TrainState:
    return copy.deepcopy(state)
