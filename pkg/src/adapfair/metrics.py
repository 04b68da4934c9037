"""Fairness and accuracy metrics on thresholded scores.

A sample is predicted positive when ``score > threshold`` (strict).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateGroup, InvalidInput
from .ot import exact_wasserstein_1d

DEFAULT_THRESHOLD = 0.5


def _arrays(scores, *others):
    scores = np.asarray(scores, dtype=float).reshape(-1)
    out = [scores]
    for o in others:
        o = np.asarray(o).reshape(-1)
        if o.shape != scores.shape:
            raise InvalidInput("scores and labels must have the same length")
        out.append(o)
    return out


def _rate_gap(pred, s):
    groups = [pred[s == 0], pred[s == 1]]
    if any(g.size == 0 for g in groups):
        raise DegenerateGroup("both sensitive groups must be nonempty",
                              {"s=0": int(groups[0].size), "s=1": int(groups[1].size)})
    return float(abs(groups[0].mean() - groups[1].mean()))


def delta_dp(scores, s, threshold: float = DEFAULT_THRESHOLD) -> float:
    scores, s = _arrays(scores, s)
    return _rate_gap(scores > threshold, s)


def delta_eopp(scores, s, y, threshold: float = DEFAULT_THRESHOLD) -> float:
    scores, s, y = _arrays(scores, s, y)
    pos = y == 1
    if not np.any(pos & (s == 0)) or not np.any(pos & (s == 1)):
        raise DegenerateGroup("both (S, Y=1) strata must be nonempty",
                              {"s=0,y=1": int(np.sum(pos & (s == 0))), "s=1,y=1": int(np.sum(pos & (s == 1)))})
    return _rate_gap(scores[pos] > threshold, s[pos])


def accuracy(scores, y, threshold: float = DEFAULT_THRESHOLD) -> float:
    scores, y = _arrays(scores, y)
    return float(np.mean((scores > threshold).astype(int) == y))


def strong_dp_gap(scores, s) -> float:
    """Squared-cost Wasserstein distance between the two groups' score samples."""
    scores, s = _arrays(scores, s)
    g0, g1 = scores[s == 0], scores[s == 1]
    if g0.size == 0 or g1.size == 0:
        raise DegenerateGroup("both sensitive groups must be nonempty", {"s=0": g0.size, "s=1": g1.size})
    return exact_wasserstein_1d(g0, g1)


@dataclass(frozen=True)
class EvaluationReport:
    accuracy: float
    delta_dp: float
    delta_eopp: float
    strong_dp_gap: float
    n_s0: int
    n_s1: int
    threshold: float

    def to_record(self) -> dict:
        return asdict(self)


def evaluate(scores, s, y, threshold: float = DEFAULT_THRESHOLD) -> EvaluationReport:
    scores, s, y = _arrays(scores, s, y)
    return EvaluationReport(
        accuracy=accuracy(scores, y, threshold),
        delta_dp=delta_dp(scores, s, threshold),
        delta_eopp=delta_eopp(scores, s, y, threshold),
        strong_dp_gap=strong_dp_gap(scores, s),
        n_s0=int(np.sum(s == 0)),
        n_s1=int(np.sum(s == 1)),
        threshold=float(threshold),
    )
