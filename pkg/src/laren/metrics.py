"""PSNR, latent-dimension correlations and the DCI disentanglement metric."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAttributes, DimMismatch, IndexOutOfRange, TooFewSamples

VAR_EPS = 1e-12
LASSO_GRID = (1e-8, 1e-5, 1e-3, 1e-2, 1e-1)


def psnr(pred, target, peak: float = 2.0) -> float:
    """10 log10(peak^2 / MSE); ``inf`` when the inputs are identical."""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimMismatch(f"psnr shapes differ: {pred.shape} vs {target.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def mean_psnr(pred, target, peak: float = 2.0) -> float:
    """Average of per-image PSNR over the leading axis."""
    return float(np.mean([psnr(p, t, peak) for p, t in zip(pred, target)]))


def correlation_matrix(latents) -> np.ndarray:
    """Pearson correlations between columns; constant columns correlate 0 with everything."""
    x = np.asarray(latents, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise TooFewSamples("correlation needs a samples x dims matrix with at least 2 samples")
    xc = x - x.mean(axis=0)
    std = np.sqrt(np.mean(xc * xc, axis=0))
    live = std > VAR_EPS
    scaled = np.where(live, xc / np.where(live, std, 1.0), 0.0)
    corr = scaled.T @ scaled / x.shape[0]
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def mean_abs_block(corr, rows: tuple[int, int], cols: tuple[int, int]) -> float:
    """Mean |corr| over a 1-based inclusive block, ignoring diagonal entries."""
    block = _block(corr, rows, cols)
    r_idx = np.arange(rows[0], rows[1] + 1)[:, None]
    c_idx = np.arange(cols[0], cols[1] + 1)[None, :]
    off = r_idx != c_idx
    return float(np.abs(block)[off].mean())


def _block(corr, rows, cols) -> np.ndarray:
    corr = np.asarray(corr)
    n = corr.shape[0]
    for a, b in (rows, cols):
        if not 1 <= a <= b <= n:
            raise IndexOutOfRange(f"range {a}:{b} outside dims 1..{n}")
    return corr[rows[0] - 1:rows[1], cols[0] - 1:cols[1]]


def dim_subset_report(corr, rows: tuple[int, int], cols: tuple[int, int]) -> str:
    """CSV slice of a correlation matrix; ranges are 1-based and inclusive.

    Header ``dim,<col>,...``; each row starts with its dimension number.
    """
    block = _block(corr, rows, cols)
    buf = io.StringIO()
    buf.write("dim," + ",".join(str(c) for c in range(cols[0], cols[1] + 1)) + "\n")
    for r, values in zip(range(rows[0], rows[1] + 1), block):
        buf.write(f"{r}," + ",".join(repr(float(v)) for v in values) + "\n")
    return buf.getvalue()


# -- DCI -----------------------------------------------------------------------

@dataclass(frozen=True)
class DciScores:
    disentanglement: float
    completeness: float
    informativeness: float


def soft_threshold(x, lam):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def lasso(X, Y, lams, max_iter: int = 1000, tol: float = 1e-10) -> np.ndarray:
    """Cyclic coordinate descent for (1/2n)||y - X b||^2 + lam ||b||_1.

    ``X`` (n x P) and ``Y`` (n x Q) are assumed centred; every (target, lam)
    combination is solved simultaneously.  Returns coefficients of shape
    (len(lams), P, Q).
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).reshape(X.shape[0], -1)
    n, P = X.shape
    Q = Y.shape[1]
    lam = np.repeat(np.asarray(lams, dtype=np.float64), Q)      # column c -> lams[c // Q]
    gram = X.T @ X / n
    xty = np.tile(X.T @ Y / n, (1, len(lams)))                  # P x (L*Q)
    diag = np.diag(gram).copy()
    beta = np.zeros_like(xty)
    for _ in range(max_iter):
        biggest = 0.0
        for j in range(P):
            if diag[j] <= 0.0:
                continue
            rho = xty[j] - gram[j] @ beta + diag[j] * beta[j]
            new = soft_threshold(rho, lam) / diag[j]
            delta = np.max(np.abs(new - beta[j]))
            if delta > 0.0:
                beta[j] = new
                biggest = max(biggest, delta)
        if biggest < tol:
            break
    return beta.reshape(P, len(lams), Q).transpose(1, 0, 2)


def _entropy(p, base: int) -> np.ndarray:
    if base <= 1:
        return np.zeros(p.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1) / math.log(base)


def disentanglement_score(R) -> float:
    R = np.asarray(R, dtype=np.float64)
    row_sum = R.sum(axis=1)
    total = row_sum.sum()
    if total <= 0:
        return 0.0
    live = row_sum > 0
    probs = R[live] / row_sum[live, None]
    d = 1.0 - _entropy(probs, R.shape[1])
    weights = row_sum[live] / total
    return float(np.clip(np.sum(weights * d), 0.0, 1.0))


def completeness_score(R) -> float:
    R = np.asarray(R, dtype=np.float64)
    col_sum = R.sum(axis=0)
    scores = np.zeros(R.shape[1])
    live = col_sum > 0
    if live.any():
        probs = (R[:, live] / col_sum[live]).T
        scores[live] = 1.0 - _entropy(probs, R.shape[0])
    return float(np.clip(scores.mean(), 0.0, 1.0))


def dci(latents, attributes, grid=LASSO_GRID) -> tuple[DciScores, np.ndarray]:
    """DCI scores and the P x Q importance matrix |coef| of L1 linear regressors.

    Latents and attributes are standardized with the statistics of the first
    two thirds of the samples (constant latent dims are zeroed); lambda is
    picked per attribute by held-out RMSE on the last third, which is also where
    informativeness = max(0, 1 - NRMSE) is measured.
    """
    X = np.asarray(latents, dtype=np.float64)
    Y = np.asarray(attributes, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise DimMismatch(f"dci needs samples x dims arrays, got {X.shape} and {Y.shape}")
    n, Q = Y.shape
    if n < Q + 2 or n < 3:
        raise TooFewSamples(f"dci needs at least {max(Q + 2, 3)} samples, got {n}")
    if np.any(Y.std(axis=0) <= VAR_EPS):
        raise DegenerateAttributes("an attribute column is constant")
    n_hold = max(1, n // 3)
    n_fit = n - n_hold

    def standardize(A, zero_dead):
        mu = A[:n_fit].mean(axis=0)
        sd = A[:n_fit].std(axis=0)
        live = sd > VAR_EPS
        if not zero_dead and not live.all():
            raise DegenerateAttributes("an attribute is constant on the fitting split")
        return np.where(live, (A - mu) / np.where(live, sd, 1.0), 0.0)

    Xs = standardize(X, True)
    Ys = standardize(Y, False)
    coefs = lasso(Xs[:n_fit], Ys[:n_fit], grid)                    # L x P x Q
    preds = np.einsum("np,lpq->lnq", Xs[n_fit:], coefs)
    rmse = np.sqrt(np.mean((preds - Ys[n_fit:][None]) ** 2, axis=1))  # L x Q
    best = np.argmin(rmse, axis=0)
    R = np.abs(coefs[best, :, np.arange(Q)]).T                     # P x Q
    spread = Ys[n_fit:].std(axis=0)
    nrmse = rmse[best, np.arange(Q)] / np.where(spread > VAR_EPS, spread, 1.0)
    info = float(np.mean(np.maximum(0.0, 1.0 - nrmse)))
    scores = DciScores(disentanglement_score(R), completeness_score(R), float(np.clip(info, 0.0, 1.0)))
    return scores, R
