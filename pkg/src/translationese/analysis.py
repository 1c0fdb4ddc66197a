"""Feature importance and per-feature regression analysis.

Two views of which hand-crafted features matter: the magnitude of the
linear SVM weights, and one simple regression per feature against a
target (a neural model's translated-class probability, or the gold label).
Rankings are compared with Spearman's rho and significant sets with F1.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import betainc

from .features import FEATURE_NAMES, N_FEATURES

SIGNIFICANCE_LEVEL = 0.001


class ScoreKind(str, enum.Enum):
    ABS_WEIGHT = "abs-weight"
    R2 = "r2"


@dataclass(frozen=True)
class ImportanceRanking:
    feature_ids: tuple[int, ...]
    scores: tuple[float, ...]
    kind: ScoreKind

    @classmethod
    def from_scores(cls, scores: Sequence[float], kind: ScoreKind, ids: Sequence[int] | None = None):
        """Order by descending score; equal scores keep ascending feature id."""
        ids = list(range(len(scores))) if ids is None else list(ids)
        order = sorted(range(len(ids)), key=lambda k: (-scores[k], ids[k]))
        return cls(tuple(ids[k] for k in order), tuple(float(scores[k]) for k in order), ScoreKind(kind))

    def top(self, k: int) -> list[tuple[int, float]]:
        return list(zip(self.feature_ids[:k], self.scores[:k]))

    def score_of(self) -> dict[int, float]:
        return dict(zip(self.feature_ids, self.scores))


@dataclass(frozen=True)
class RegressionResult:
    feature_id: int
    slope: float
    intercept: float
    r2: float
    t_stat: float
    p_value: float

    @property
    def significant_999(self) -> bool:
        return self.p_value < SIGNIFICANCE_LEVEL


def rank_svm_weights(weights, *, expect_dim: int | None = N_FEATURES) -> ImportanceRanking:
    """Rank features by ``|w_i|``. Accepts a weight vector or a linear SVM model."""
    w = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
    if expect_dim is not None and w.shape != (expect_dim,):
        raise ValueError(f"expected {expect_dim} weights, got shape {w.shape}")
    return ImportanceRanking.from_scores(np.abs(w).tolist(), ScoreKind.ABS_WEIGHT)


def min_max_normalize(X: np.ndarray) -> np.ndarray:
    """Scale each column to [0, 1] on the given rows; constant columns become 0."""
    X = np.asarray(X, dtype=np.float64)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (X - lo) / safe, 0.0)


def student_t_two_sided(t: float, df: int) -> float:
    """Two-sided p-value of Student's t through the regularized incomplete beta."""
    if math.isinf(t):
        return 0.0
    return float(betainc(0.5 * df, 0.5, df / (df + t * t)))


def simple_ols(x: np.ndarray, y: np.ndarray, feature_id: int = 0) -> RegressionResult:
    n = len(x)
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return RegressionResult(feature_id, 0.0, float(ym), 0.0, 0.0, 1.0)
    sxy = float(dx @ dy)
    slope = sxy / sxx
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    ss_res = float(resid @ resid)
    r2 = min(1.0, max(0.0, 1.0 - ss_res / syy))
    df = n - 2
    se = math.sqrt(ss_res / df / sxx)
    t = slope / se if se > 0 else math.copysign(math.inf, slope)
    return RegressionResult(feature_id, slope, intercept, r2, t, student_t_two_sided(t, df))


def per_feature_regression(features: np.ndarray, targets) -> list[RegressionResult]:
    """Fit ``y = w_j * x_j + b_j`` separately for every column of ``features``.

    ``features`` are used as given; apply :func:`min_max_normalize` first to
    reproduce the usual analysis setting.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or len(y) != X.shape[0]:
        raise ValueError(f"features {X.shape} and targets {y.shape} do not align")
    if X.shape[0] < 3:
        raise ValueError("need at least 3 observations")
    return [simple_ols(X[:, j], y, j) for j in range(X.shape[1])]


def r2_ranking(results: Sequence[RegressionResult]) -> ImportanceRanking:
    return ImportanceRanking.from_scores([r.r2 for r in results], ScoreKind.R2, [r.feature_id for r in results])


def significant_set(results: Iterable[RegressionResult]) -> set[int]:
    return {r.feature_id for r in results if r.significant_999}


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n of descending ``values``, tied values sharing their mean rank."""
    order = np.argsort(-values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    start = 0
    while start < len(values):
        stop = start
        while stop + 1 < len(values) and sorted_vals[stop + 1] == sorted_vals[start]:
            stop += 1
        ranks[order[start : stop + 1]] = 0.5 * (start + stop) + 1.0
        start = stop + 1
    return ranks


def compare_rankings(a: ImportanceRanking, b: ImportanceRanking, top_k: int | None = None) -> float:
    """Spearman's rho between two rankings of the same features.

    By default every feature takes part. With ``top_k`` only features in the
    top ``k`` of either ranking are compared.
    """
    sa, sb = a.score_of(), b.score_of()
    if set(sa) != set(sb):
        raise ValueError("rankings cover different feature sets")
    ids = sorted(sa)
    if top_k is not None:
        keep = set(a.feature_ids[:top_k]) | set(b.feature_ids[:top_k])
        ids = [i for i in ids if i in keep]
    ra = _average_ranks(np.array([sa[i] for i in ids]))
    rb = _average_ranks(np.array([sb[i] for i in ids]))
    da, db = ra - ra.mean(), rb - rb.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        raise ValueError("a ranking has no variation; Spearman's rho is undefined")
    return max(-1.0, min(1.0, float(da @ db) / denom))


def significance_overlap(a: Iterable[int], b: Iterable[int]) -> float:
    """F1 between two feature sets, ``2|a & b| / (|a| + |b|)``; two empty sets give 1."""
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return 2.0 * len(a & b) / (len(a) + len(b))


# ---------------------------------------------------------------- outputs


def _name(fid: int) -> str:
    return FEATURE_NAMES[fid] if 0 <= fid < len(FEATURE_NAMES) else str(fid)


def write_regression_csv(results: Mapping[str, Sequence[RegressionResult]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target", "feature_id", "feature", "slope", "intercept", "r2", "t_stat", "p_value", "significant_999"])
        for target, rows in results.items():
            for r in rows:
                w.writerow([target, r.feature_id, _name(r.feature_id), repr(r.slope), repr(r.intercept),
                            repr(r.r2), repr(r.t_stat), repr(r.p_value), int(r.significant_999)])


def write_rankings_csv(rankings: Mapping[str, ImportanceRanking], path: str | Path, top: int | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ranking", "kind", "rank", "feature_id", "feature", "score"])
        for name, rk in rankings.items():
            for pos, (fid, score) in enumerate(rk.top(top or len(rk.feature_ids)), 1):
                w.writerow([name, rk.kind.value, pos, fid, _name(fid), repr(score)])


def write_overlap_csv(sets: Mapping[str, set], reference: str, path: str | Path) -> None:
    ref = sets[reference]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set", "reference", "size", "reference_size", "intersection", "f1"])
        for name, s in sets.items():
            if name == reference:
                continue
            w.writerow([name, reference, len(s), len(ref), len(s & ref), repr(significance_overlap(s, ref))])


@dataclass
class AnalysisSummary:
    significant: dict
    f1_vs_gold: dict
    spearman: dict


def run_analysis(
    features: np.ndarray,
    gold: Sequence[int],
    probabilities: Mapping[str, Sequence[float]],
    svm_weights=None,
    out_dir: str | Path | None = None,
) -> AnalysisSummary:
    """Regress every feature on gold labels and on each model's probabilities.

    ``features`` are the raw feature rows of the analysis set; they are
    min-max normalized on those same rows.
    """
    X = min_max_normalize(features)
    targets = {"gold": np.asarray(gold, dtype=np.float64)}
    targets.update({k: np.asarray(v, dtype=np.float64) for k, v in probabilities.items()})
    results = {name: per_feature_regression(X, y) for name, y in targets.items()}
    sets = {name: significant_set(r) for name, r in results.items()}
    rankings = {f"r2:{name}": r2_ranking(r) for name, r in results.items()}
    if svm_weights is not None:
        rankings["svm:abs-weight"] = rank_svm_weights(svm_weights, expect_dim=X.shape[1])
    names = list(rankings)
    spearman = {}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            try:
                spearman[(a, b)] = compare_rankings(rankings[a], rankings[b])
            except ValueError:
                spearman[(a, b)] = math.nan
    summary = AnalysisSummary(
        {k: len(v) for k, v in sets.items()},
        {k: significance_overlap(v, sets["gold"]) for k, v in sets.items() if k != "gold"},
        spearman,
    )
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        write_regression_csv(results, d / "regression.csv")
        write_rankings_csv(rankings, d / "rankings.csv")
        write_rankings_csv(rankings, d / "top10.csv", top=10)
        write_overlap_csv(sets, "gold", d / "overlap.csv")
        with open(d / "spearman.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ranking_a", "ranking_b", "rho"])
            for (a, b), rho in spearman.items():
                w.writerow([a, b, repr(rho)])
    return summary
