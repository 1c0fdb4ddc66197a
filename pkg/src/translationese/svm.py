"""Binary max-margin classifiers.

Two independent solvers:

* :func:`train_linear_svm` keeps the weight vector explicit and never
  forms a kernel matrix; it is meant for feature vectors. An accelerated
  projected-gradient phase does the bulk of the work and pairwise steps
  polish the result.
* :func:`train_kernel_svm` is an SMO solver over a precomputed kernel
  matrix, with second-order working-set selection.

Labels are +1 (translated) and -1 (original); a decision value of exactly
zero predicts -1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

log = logging.getLogger(__name__)

DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
FORMAT_LINEAR = "translationese-linear-svm 1"
FORMAT_KERNEL = "translationese-kernel-svm 1"


class SvmError(ValueError):
    pass


def to_pm1(y) -> np.ndarray:
    """Map {0, 1} or {-1, +1} labels to -1/+1."""
    y = np.asarray(y)
    vals = set(np.unique(y).tolist())
    if vals <= {0, 1}:
        return np.where(y == 1, 1.0, -1.0)
    if vals <= {-1, 1}:
        return y.astype(np.float64)
    raise SvmError(f"labels must be in {{0, 1}} or {{-1, +1}}, got {sorted(vals)}")


def _check_classes(y: np.ndarray) -> None:
    if len(y) < 2 or not (np.any(y > 0) and np.any(y < 0)):
        raise SvmError("training data must contain both classes")


def sign_predict(decision: np.ndarray) -> np.ndarray:
    return np.where(decision > 0, 1, -1)


def hinge_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, c: float) -> float:
    margins = 1.0 - y * (X @ w + b)
    return 0.5 * float(w @ w) + c * float(np.maximum(margins, 0.0).sum())


@dataclass
class LinearSvmModel:
    weights: np.ndarray
    bias: float
    c: float

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X) @ self.weights + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        """+1 / -1 predictions."""
        return sign_predict(self.decision_function(X))

    def save(self, path: str | Path) -> None:
        lines = [
            FORMAT_LINEAR,
            f"dim {len(self.weights)}",
            f"c {self.c!r}",
            f"bias {float(self.bias)!r}",
        ]
        lines += [repr(float(w)) for w in self.weights]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LinearSvmModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != FORMAT_LINEAR:
            raise SvmError(f"{path}: not a linear SVM model file")
        dim = int(lines[1].split()[1])
        c = float(lines[2].split()[1])
        bias = float(lines[3].split()[1])
        w = np.array([float(x) for x in lines[4 : 4 + dim]])
        if len(w) != dim:
            raise SvmError(f"{path}: expected {dim} weights, found {len(w)}")
        return cls(w, bias, c)


def _bias_from_gradient(y: np.ndarray, grad: np.ndarray, alpha: np.ndarray, c: float) -> float:
    """KKT bias: average over free vectors, else midpoint of the feasible interval."""
    yg = y * grad
    free = (alpha > 0) & (alpha < c)
    if free.any():
        return -float(yg[free].mean())
    at_lb = ((y > 0) & (alpha >= c)) | ((y < 0) & (alpha <= 0))
    lb = yg[at_lb].max() if at_lb.any() else -np.inf
    ub = yg[~at_lb].min() if (~at_lb).any() else np.inf
    if not np.isfinite(lb):
        lb = ub
    if not np.isfinite(ub):
        ub = lb
    return -0.5 * float(ub + lb)


def _project_box_hyperplane(v: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{0 <= a <= c, y'a = 0}``.

    The projection is ``clip(v - lam * y, 0, c)`` for the root ``lam`` of a
    non-increasing piecewise-linear function.
    """

    def excess(lam: float) -> float:
        return float(y @ np.clip(v - lam * y, 0.0, c))

    span = float(np.abs(v).max()) + c + 1.0
    lam = brentq(excess, -span, span, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    return np.clip(v - lam * y, 0.0, c)


def _best_bias(f: np.ndarray, y: np.ndarray) -> float:
    """Exact minimizer over ``b`` of ``sum(hinge(y_i, f_i + b))``.

    The sum is convex and piecewise linear with kinks at ``y_i - f_i``; its
    slope starts at ``-n_pos`` and rises by one at every kink, so it is flat
    between the ``n_pos``-th and ``(n_pos + 1)``-th smallest kink. The
    midpoint of that interval is returned.
    """
    kinks = y - f
    n_pos = int((y > 0).sum())
    part = np.partition(kinks, [n_pos - 1, n_pos])
    return 0.5 * float(part[n_pos - 1] + part[n_pos])


def _primal(w, f, y, c) -> tuple[float, float]:
    b = _best_bias(f, y)
    return 0.5 * float(w @ w) + c * float(np.maximum(0.0, 1.0 - y * (f + b)).sum()), b


def train_linear_svm(
    X: np.ndarray,
    y,
    c: float = 1.0,
    *,
    tol: float = 1e-7,
    gap_tol: float = 1e-6,
    max_iter: int | None = None,
    polish_iter: int | None = None,
) -> LinearSvmModel:
    """Minimize ``0.5 ||w||^2 + c * sum(hinge(y_i, w.x_i + b))`` with ``b`` unpenalized.

    Works on the dual ``max sum(a) - 0.5 ||X'(a*y)||^2`` over
    ``0 <= a <= c, y'a = 0`` in two phases. Accelerated projected gradient
    with restarts runs until the relative duality gap drops below
    ``gap_tol`` or ``max_iter`` steps (default ``2000 + 10 n``) are spent. Because ``y'a = 0`` the dual does not change when a constant
    row is subtracted from ``X``, so this phase runs on centered features,
    which keeps the step size large. Pairwise steps on the maximal violating
    pair then polish the solution until the KKT gap is below ``tol`` or
    ``polish_iter`` steps are spent. ``w`` stays explicit throughout and no
    kernel matrix is formed. The bias is the exact minimizer for the final
    ``w``. Deterministic.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = to_pm1(y)
    _check_classes(y)
    if c <= 0:
        raise SvmError("c must be positive")
    n, d = X.shape
    c = float(c)

    # phase 1: accelerated projected gradient on centered data
    Xc = X - X.mean(axis=0)
    lipschitz = max(float(np.linalg.norm(Xc, 2)) ** 2, 1e-12)
    alpha = np.zeros(n)
    z = alpha.copy()
    momentum = 1.0
    prev = np.inf
    gap = np.inf
    for it in range(1, (max_iter or 2000 + 10 * n) + 1):
        step = z - (y * (Xc @ (Xc.T @ (y * z))) - 1.0) / lipschitz
        new = _project_box_hyperplane(step, y, c)
        wc = Xc.T @ (y * new)
        obj = 0.5 * float(wc @ wc) - new.sum()
        if obj > prev:
            # restart the momentum when the dual stops improving
            z, momentum = alpha.copy(), 1.0
            continue
        nxt = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum * momentum))
        z = new + ((momentum - 1.0) / nxt) * (new - alpha)
        alpha, momentum, prev = new, nxt, obj
        if it % 25 == 0:
            w = X.T @ (y * alpha)
            primal, _ = _primal(w, X @ w, y, c)
            gap = (primal - (alpha.sum() - 0.5 * float(w @ w))) / max(abs(primal), 1e-300)
            if gap <= gap_tol:
                break

    # phase 2: pairwise polish with the weight vector kept explicit
    w = X.T @ (y * alpha)
    w_start = w.copy()
    sq = np.einsum("ij,ij->i", X, X)
    grad = y * (X @ w) - 1.0
    pos = y > 0
    kkt = np.inf
    for _ in range(polish_iter if polish_iter is not None else 5 * n + 1000):
        up = np.where(pos, alpha < c, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < c)
        minus_yg = -y * grad
        i = int(np.argmax(np.where(up, minus_yg, -np.inf)))
        j = int(np.argmin(np.where(low, minus_yg, np.inf)))
        kkt = minus_yg[i] - minus_yg[j]
        if not (up[i] and low[j]) or kkt < tol:
            break
        quad = sq[i] + sq[j] - 2.0 * float(X[i] @ X[j])
        t = kkt / quad if quad > 1e-15 else np.inf
        t = min(t, c - alpha[i] if pos[i] else alpha[i], alpha[j] if pos[j] else c - alpha[j])
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        dw = t * (X[i] - X[j])
        w += dw
        grad += y * (X @ dw)
    else:
        if gap > gap_tol:
            log.warning("linear SVM stopped at KKT gap %.2e, relative duality gap %.2e", kkt, gap)
    w = np.clip(alpha, 0.0, c) * y @ X
    primal, b = _primal(w, X @ w, y, c)
    # pairwise steps raise the dual but can nudge the primal up
    primal0, b0 = _primal(w_start, X @ w_start, y, c)
    if primal0 < primal:
        w, b = w_start, b0
    return LinearSvmModel(w, b, c)


@dataclass
class KernelSvmModel:
    support_indices: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    c: float
    training_refs: object = None

    def decision_function(self, k_rows: np.ndarray) -> np.ndarray:
        """``k_rows[m, j]`` = kernel between new point m and support vector j."""
        k_rows = np.asarray(k_rows)
        if k_rows.shape[-1] != len(self.dual_coefs):
            raise SvmError(
                f"kernel rows have {k_rows.shape[-1]} columns, model has "
                f"{len(self.dual_coefs)} support vectors"
            )
        return k_rows @ self.dual_coefs + self.bias

    def predict(self, k_rows: np.ndarray) -> np.ndarray:
        return sign_predict(self.decision_function(k_rows))

    def save(self, path: str | Path) -> None:
        lines = [
            FORMAT_KERNEL,
            f"n_support {len(self.support_indices)}",
            f"c {self.c!r}",
            f"bias {float(self.bias)!r}",
        ]
        lines += [f"{int(i)} {float(a)!r}" for i, a in zip(self.support_indices, self.dual_coefs)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "KernelSvmModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != FORMAT_KERNEL:
            raise SvmError(f"{path}: not a kernel SVM model file")
        n = int(lines[1].split()[1])
        c = float(lines[2].split()[1])
        bias = float(lines[3].split()[1])
        pairs = [line.split() for line in lines[4 : 4 + n]]
        idx = np.array([int(p[0]) for p in pairs], dtype=np.int64)
        coefs = np.array([float(p[1]) for p in pairs])
        return cls(idx, coefs, bias, c)


def clip_to_psd(K: np.ndarray) -> np.ndarray:
    """Zero out negative eigenvalues of a symmetric matrix."""
    vals, vecs = np.linalg.eigh(K)
    if vals.min() >= 0.0:
        return K
    vals = np.clip(vals, 0.0, None)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


def train_kernel_svm(
    K: np.ndarray,
    y,
    c: float = 1.0,
    *,
    tol: float = 1e-6,
    max_iter: int | None = None,
    psd_clip: bool = True,
) -> KernelSvmModel:
    """SMO on the dual: max sum(a) - 0.5 a'Qa, 0 <= a <= c, y'a = 0."""
    K = np.asarray(K, dtype=np.float64)
    y = to_pm1(y)
    n = len(y)
    if K.shape != (n, n):
        raise SvmError(f"kernel matrix shape {K.shape} does not match {n} labels")
    if not np.allclose(K, K.T, atol=1e-8, rtol=0.0):
        raise SvmError("kernel matrix is not symmetric")
    _check_classes(y)
    if c <= 0:
        raise SvmError("c must be positive")
    K = 0.5 * (K + K.T)
    if psd_clip:
        K = clip_to_psd(K)
    Q = (y[:, None] * y[None, :]) * K
    qdiag = np.diag(Q).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 0.5 a'Qa - sum(a)
    max_iter = max_iter or max(10_000_000, 100 * n)
    tau = 1e-12
    it = 0
    for it in range(max_iter):
        # I_up / I_low per LIBSVM
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        minus_yg = -y * grad
        if not up.any() or not low.any():
            break
        cand = np.where(up, minus_yg, -np.inf)
        i = int(np.argmax(cand))
        g_max = cand[i]
        g_min = np.min(np.where(low, minus_yg, np.inf))
        if g_max - g_min < tol:
            break
        # second-order choice of j
        b_ij = g_max - minus_yg
        ok = low & (b_ij > 0)
        a_ij = qdiag[i] + qdiag - 2.0 * y[i] * y * Q[i]
        a_ij = np.where(a_ij > 0, a_ij, tau)
        score = np.where(ok, -(b_ij**2) / a_ij, np.inf)
        j = int(np.argmin(score))
        # analytic two-variable update
        ai_old, aj_old = alpha[i], alpha[j]
        quad = qdiag[i] + qdiag[j] - 2.0 * y[i] * y[j] * Q[i, j]
        if quad <= 0:
            quad = tau
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            else:
                if ai < 0:
                    ai, aj = 0.0, -diff
            if diff > 0:
                if ai > c:
                    ai, aj = c, c - diff
            else:
                if aj > c:
                    aj, ai = c, c + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > c:
                if ai > c:
                    ai, aj = c, total - c
            else:
                if aj < 0:
                    aj, ai = 0.0, total
            if total > c:
                if aj > c:
                    aj, ai = c, total - c
            else:
                if ai < 0:
                    ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += Q[i] * (ai - ai_old) + Q[j] * (aj - aj_old)
    else:
        log.warning("SMO reached max_iter=%d without converging", max_iter)

    b = _bias_from_gradient(y, grad, alpha, c)
    sv = np.flatnonzero(alpha > 0)
    return KernelSvmModel(sv, alpha[sv] * y[sv], float(b), float(c))


def accuracy(pred: np.ndarray, y) -> float:
    return float(np.mean(np.asarray(pred) == to_pm1(y)))


def tune_c(
    fit: Callable[[float], object],
    score: Callable[[object], float],
    grid: Sequence[float] = DEFAULT_C_GRID,
) -> tuple[float, object, dict[float, float]]:
    """Pick the grid value with the best dev score; ties go to the smaller C.

    ``fit(c)`` trains a model and ``score(model)`` returns dev accuracy.
    Returns ``(best_c, best_model, scores)``.
    """
    if not grid:
        raise SvmError("empty C grid")
    best = None
    scores: dict[float, float] = {}
    for c in sorted(grid):
        model = fit(c)
        s = score(model)
        scores[c] = s
        if best is None or s > best[1]:
            best = (c, s, model)
    return best[0], best[2], scores


def tune_linear_c(
    X_train: np.ndarray,
    y_train,
    X_dev: np.ndarray,
    y_dev,
    grid: Sequence[float] = DEFAULT_C_GRID,
) -> tuple[float, LinearSvmModel, dict[float, float]]:
    return tune_c(
        lambda c: train_linear_svm(X_train, y_train, c),
        lambda m: accuracy(m.predict(X_dev), y_dev),
        grid,
    )
