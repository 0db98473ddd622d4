"""Rank statistics: rankits, semiparametric PCA, Spearman on rankits, logspline CDF."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc
from scipy.stats import rankdata

from .errors import DegenerateMatrix, DomainError, FitFailure, ZeroVariance

# Acklam's rational approximation to the normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _polyval(coefs, x):
    out = np.zeros_like(x)
    for c in coefs:
        out = out * x + c
    return out


def phi_inverse(p):
    """Standard normal quantile.

    Acklam's rational approximation (relative error ~1e-9) followed by one
    Halley step against ``erfc``.  The work is done on the lower half,
    min(p, 1 - p), where 1 - p is exact and Phi(z) - p does not cancel.
    Scalars in, scalar out; arrays in, arrays out.
    """
    scalar = np.isscalar(p)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any(~np.isfinite(p)) or np.any((p <= 0) | (p >= 1)):
        raise DomainError("phi_inverse is defined on the open interval (0, 1)")
    upper = p > 0.5
    pl = np.where(upper, 1.0 - p, p)
    z = np.empty_like(pl)
    lo = pl < _P_LOW
    mid = ~lo

    q = pl[mid] - 0.5
    r = q * q
    z[mid] = q * _polyval(_A, r) / (_polyval(_B, r) * r + 1.0)
    q = np.sqrt(-2 * np.log(pl[lo]))
    z[lo] = _polyval(_C, q) / (_polyval(_D, q) * q + 1.0)

    e = 0.5 * erfc(-z / math.sqrt(2)) - pl
    u = e * math.sqrt(2 * math.pi) * np.exp(z * z / 2)
    z = z - u / (1 + z * u / 2)
    z = np.where(upper, -z, z)
    return float(z[0]) if scalar else z


def normal_cdf(z):
    return 0.5 * erfc(-np.asarray(z, dtype=float) / math.sqrt(2))


def rankit(x) -> np.ndarray:
    """``(rank - 0.5) / n`` with mean ranks for ties; order follows the input."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("rankit expects a non-empty 1-D vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("rankit expects finite values")
    return (rankdata(x, method="average") - 0.5) / x.size


def spearman_on_rankits(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("need two 1-D vectors of equal length >= 2")
    rx = rankit(x)
    ry = rankit(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    sx = math.sqrt(float(rx @ rx))
    sy = math.sqrt(float(ry @ ry))
    if sx == 0 or sy == 0:
        raise ZeroVariance("Spearman correlation undefined for a constant vector")
    return float(np.clip((rx @ ry) / (sx * sy), -1.0, 1.0))


@dataclass
class SpcaResult:
    scores: np.ndarray          # n x m projection Z @ U
    loadings: np.ndarray        # J x m eigenvectors (columns)
    singular_values: np.ndarray
    shares: np.ndarray
    kept: list                  # indices of non-constant input columns

    @property
    def eigenvalues(self):
        return self.singular_values ** 2 / self.scores.shape[0]


def normal_scores(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.column_stack([phi_inverse(rankit(X[:, j])) for j in range(X.shape[1])])


def spca(X) -> SpcaResult:
    """Semiparametric PCA: PCA of the normal scores of the column rankits.

    Constant columns are dropped with a warning.  Components are signed so
    that each eigenvector's largest-magnitude loading is positive.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, J = X.shape
    kept = [j for j in range(J) if np.ptp(X[:, j]) > 0]
    if len(kept) < J:
        warnings.warn(f"spca: dropping constant columns {sorted(set(range(J)) - set(kept))}")
    if not kept:
        raise DegenerateMatrix("every column is constant")
    if n <= len(kept):
        raise DegenerateMatrix(f"need more rows ({n}) than variables ({len(kept)})")

    Z = normal_scores(X[:, kept])
    Z = Z - Z.mean(axis=0)
    # Z = V S U^T  =>  cov = (1/n) U S^2 U^T
    _, s, vt = np.linalg.svd(Z, full_matrices=False)
    U = vt.T
    for c in range(U.shape[1]):
        j = int(np.argmax(np.abs(U[:, c])))
        if U[j, c] < 0:
            U[:, c] = -U[:, c]
    power = s ** 2
    total = power.sum()
    if total <= 0:
        raise DegenerateMatrix("zero total variance")
    return SpcaResult(Z @ U, U, s, power / total, kept)


# ---------------------------------------------------------------------------
# logspline CDF


def _ns_basis(u, knots):
    """Natural cubic spline basis without the constant: x and K-2 curvature terms."""
    u = np.asarray(u, dtype=float)
    K = len(knots)
    cols = [u]
    if K >= 3:
        tK = knots[-1]

        def d(k):
            return (np.clip(u - knots[k], 0, None) ** 3 - np.clip(u - tK, 0, None) ** 3) / (tK - knots[k])

        dlast = d(K - 2)
        cols.extend(d(k) - dlast for k in range(K - 2))
    return np.column_stack(cols)


@dataclass
class SmoothCdf:
    lo: float
    hi: float
    knots: np.ndarray            # in original units
    coef: np.ndarray
    grid: np.ndarray
    cdf_grid: np.ndarray
    aic: float
    fallback: bool = False
    meta: dict = field(default_factory=dict)

    def __call__(self, x):
        scalar = np.isscalar(x)
        out = np.interp(np.asarray(x, dtype=float), self.grid, self.cdf_grid, left=0.0, right=1.0)
        return float(out) if scalar else out

    cdf = __call__

    def density(self, x):
        span = self.hi - self.lo
        u = (np.asarray(x, dtype=float) - self.lo) / span
        logf = _ns_basis(np.atleast_1d(u), (self.knots - self.lo) / span) @ self.coef
        f = np.exp(logf - self.meta["log_norm"]) / span
        return np.where((u >= 0) & (u <= 1), f, 0.0)


def _integration_grid(u_data, n_uniform=1025, n_quant=513):
    qs = np.quantile(u_data, np.linspace(0, 1, n_quant))
    g = np.unique(np.concatenate([np.linspace(0, 1, n_uniform), qs]))
    w = np.zeros_like(g)
    dg = np.diff(g)
    w[:-1] += dg / 2
    w[1:] += dg / 2
    return g, w


def _fit_logspline(u_data, knots, grid, weights, ridge=1e-8, max_iter=200):
    n = u_data.size
    Bd = _ns_basis(u_data, knots)
    Bg = _ns_basis(grid, knots)
    S = Bd.sum(axis=0)
    p = Bd.shape[1]
    theta = np.zeros(p)

    def loglik(th):
        lg = Bg @ th
        m = lg.max()
        log_z = m + math.log(float(weights @ np.exp(lg - m)))
        return float(S @ th - n * log_z - 0.5 * ridge * n * th @ th), log_z

    ll, log_z = loglik(theta)
    for _ in range(max_iter):
        lg = Bg @ theta
        f = weights * np.exp(lg - log_z)
        f /= f.sum()
        mu = f @ Bg
        cov = (Bg - mu).T @ ((Bg - mu) * f[:, None])
        grad = S - n * mu - ridge * n * theta
        hess = n * cov + ridge * n * np.eye(p)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise FitFailure("singular Hessian") from exc
        t = 1.0
        while True:
            cand = theta + t * step
            ll_new, lz_new = loglik(cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12:
                break
            t /= 2
            if t < 1e-10:
                raise FitFailure("line search failed")
        converged = abs(ll_new - ll) < 1e-10 * max(1.0, abs(ll))
        theta, ll, log_z = cand, ll_new, lz_new
        if converged:
            break
    if not np.all(np.isfinite(theta)):
        raise FitFailure("non-finite coefficients")
    return theta, ll, log_z


def _kernel_cdf(x, lo, hi, n_grid=2049):
    x = np.sort(x)
    sd = np.std(x)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    h = 0.9 * min(sd, iqr / 1.34 if iqr > 0 else sd) * x.size ** -0.2
    h = h if h > 0 else max(hi - lo, 1.0) * 1e-3
    grid = np.unique(np.concatenate([np.linspace(lo, hi, n_grid), x]))
    cdf = np.array([normal_cdf((g - x) / h).mean() for g in grid])
    cdf = (cdf - cdf[0]) / (cdf[-1] - cdf[0])
    return grid, np.maximum.accumulate(cdf)


def fit_smooth_cdf(x, max_knots: int = 5, criterion: str = "AIC", pad: float | None = None) -> SmoothCdf:
    """Fit a logspline density and return its CDF.

    The log-density is a natural cubic spline on ``[min - pad, max + pad]``
    with knots starting at ``max_knots`` sample quantiles; knots are removed
    greedily while the information criterion improves.  On numerical failure
    a kernel-smoothed ECDF is returned with ``fallback=True``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 10:
        raise ValueError("fit_smooth_cdf needs at least 10 observations")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite observations")
    n = x.size
    xmin, xmax = float(x.min()), float(x.max())
    span = xmax - xmin
    if span <= 0:
        raise FitFailure("constant sample")
    if pad is None:
        pad = span / n
    lo, hi = xmin - pad, xmax + pad
    penalty = {"AIC": 2.0, "BIC": math.log(n)}[criterion]

    u = (x - lo) / (hi - lo)
    levels = np.linspace(0.05, 0.95, max_knots) if max_knots > 1 else np.array([0.5])
    knots = np.unique(np.quantile(u, levels))
    grid, weights = _integration_grid(u)

    def score(ks):
        th, ll, lz = _fit_logspline(u, ks, grid, weights)
        return -2 * ll + penalty * th.size, th, lz

    try:
        best = score(knots)
        while knots.size > 3:
            trials = []
            for drop in range(knots.size):
                ks = np.delete(knots, drop)
                try:
                    trials.append((score(ks), ks))
                except FitFailure:
                    continue
            if not trials:
                break
            (cand, ks) = min(trials, key=lambda t: t[0][0])
            if cand[0] >= best[0]:
                break
            best, knots = cand, ks
    except FitFailure as exc:
        g, c = _kernel_cdf(x, lo, hi)
        return SmoothCdf(lo, hi, np.array([]), np.array([]), g, c, float("nan"), True,
                         {"reason": str(exc)})

    aic, theta, log_z = best
    logf = _ns_basis(grid, knots) @ theta - log_z
    dens = np.exp(logf)
    cum = np.concatenate([[0.0], np.cumsum(np.diff(grid) * (dens[1:] + dens[:-1]) / 2)])
    cum /= cum[-1]
    return SmoothCdf(lo, hi, lo + knots * (hi - lo), theta, lo + grid * (hi - lo), cum, float(aic),
                     False, {"log_norm": float(log_z), "n": n, "criterion": criterion})
