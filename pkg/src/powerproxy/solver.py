"""Penalized non-negative least squares by cyclic coordinate descent.

Minimises ``(1/N) * ||y - X w||^2 + sum_j P(w_j)`` for the minimax concave
penalty (MCP), the Lasso, or a ridge penalty.  Columns are not standardised:
they are binary toggle indicators (or interval means of them), and weights
stay in power units per toggle.  There is no intercept.

All fits run on sufficient statistics (``X'X``, ``X'y``, ``y'y``) so that the
many probes of a lambda search share one pass over the data.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError, ParameterError

MCP = "mcp"
LASSO = "lasso"
RIDGE = "ridge"
_CODES = {MCP: kernels.MCP, LASSO: kernels.LASSO, RIDGE: kernels.RIDGE}

_CHUNK = 4096


@dataclass(frozen=True)
class FitConfig:
    lam: float = 0.0
    gamma: float = 10.0
    max_iter: int = 200
    tol: float = 1e-6
    nonneg: bool = True

    def __post_init__(self):
        if not self.lam >= 0:
            raise ParameterError(f"lambda must be >= 0, got {self.lam}")
        if not self.gamma > 1:
            raise ParameterError(f"gamma must be > 1, got {self.gamma}")
        if self.max_iter < 1:
            raise ParameterError("max_iter must be positive")
        if not self.tol > 0:
            raise ParameterError("tol must be positive")


@dataclass(eq=False)
class FitResult:
    weights: np.ndarray
    n_iter: int
    converged: bool
    objective_trace: np.ndarray
    penalty: str = MCP
    lam: float = 0.0
    gamma: float = 10.0

    @property
    def support(self):
        return np.flatnonzero(self.weights)

    def to_dict(self):
        return {
            "penalty": self.penalty,
            "lambda": self.lam,
            "gamma": self.gamma,
            "weights": self.weights.tolist(),
            "support": self.support.tolist(),
            "n_iter": self.n_iter,
            "converged": self.converged,
            "objective_trace": self.objective_trace.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1) + "\n"


@dataclass(eq=False)
class Gram:
    """Sufficient statistics of a least-squares problem."""

    xtx: np.ndarray
    xty: np.ndarray
    yty: float
    n: int

    @property
    def n_features(self):
        return self.xty.shape[0]

    def restrict(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Gram(self.xtx[np.ix_(idx, idx)], self.xty[idx], self.yty, self.n)


def gram_stats(X, y, scale=1.0):
    """Build :class:`Gram` for the design ``X * scale``.

    Integer-valued ``X`` (toggle bits or per-interval toggle counts) is
    multiplied in float32 chunks, exact while chunk sums stay below 2**24,
    and accumulated in float64.
    """
    X = np.asarray(getattr(X, "bits", X))
    y = np.asarray(getattr(y, "values", y), dtype=np.float64).reshape(-1)
    if X.ndim != 2:
        raise DataError(f"design matrix must be 2-D, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise DataError(f"design has {X.shape[0]} rows but labels have {y.shape[0]}")
    if X.shape[0] == 0:
        raise DataError("need at least one cycle")
    if not np.isfinite(y).all():
        raise DataError("labels contain NaN or Inf")
    integral = X.dtype.kind in "biu"
    if not integral and not np.isfinite(X).all():
        raise DataError("design contains NaN or Inf")
    m = X.shape[1]
    xtx = np.zeros((m, m))
    xty = np.zeros(m)
    chunk_max = int(X.max()) if integral and X.size else 0
    rows = _CHUNK if integral and chunk_max > 0 and chunk_max * chunk_max * _CHUNK < 2**24 else None
    if integral and rows:
        for start in range(0, X.shape[0], rows):
            xc = X[start:start + rows].astype(np.float32)
            xtx += (xc.T @ xc).astype(np.float64)
            xty += xc.T.astype(np.float64) @ y[start:start + rows]
    else:
        for start in range(0, X.shape[0], _CHUNK):
            xc = X[start:start + _CHUNK].astype(np.float64)
            xtx += xc.T @ xc
            xty += xc.T @ y[start:start + _CHUNK]
    scale = float(scale)
    return Gram(xtx * (scale * scale), xty * scale, float(y @ y), X.shape[0])


def _as_gram(X, y):
    return X if isinstance(X, Gram) else gram_stats(X, y)


# -- proximal operators --------------------------------------------------------

def prox_mcp(z, lam, gamma, s=1.0, nonneg=False):
    """Minimiser of ``0.5*s*(w - z)**2 + P_mcp(w; lam, gamma)``.

    With ``s * gamma > 1`` this is the firm-threshold closed form; otherwise
    the scalar problem is non-convex and every candidate stationary point is
    compared directly.
    """
    if not gamma > 1:
        raise ParameterError(f"gamma must be > 1, got {gamma}")
    if not s > 0:
        raise ParameterError(f"curvature must be > 0, got {s}")
    if not lam >= 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    return kernels._prox_mcp(float(z), float(lam), float(gamma), float(s), bool(nonneg))


def prox_lasso(z, lam, s=1.0, nonneg=False):
    """Soft threshold ``sign(z) * max(|z| - lam/s, 0)``."""
    if not s > 0:
        raise ParameterError(f"curvature must be > 0, got {s}")
    if not lam >= 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    return kernels._prox_lasso(float(z), float(lam), float(s), bool(nonneg))


def penalty_value(w, penalty, lam, gamma=10.0):
    code = _CODES[penalty]
    return sum(kernels._penalty(float(v), code, float(lam), float(gamma)) for v in np.ravel(w))


def objective(X, y, w, penalty, lam, gamma=10.0):
    """Penalized loss evaluated directly from the residual."""
    X = np.asarray(X, dtype=np.float64)
    r = np.asarray(y, dtype=np.float64) - X @ np.asarray(w, dtype=np.float64)
    return float(r @ r) / X.shape[0] + penalty_value(w, penalty, lam, gamma)


# -- fitting ------------------------------------------------------------------

def fit_penalized(X, y=None, penalty=MCP, cfg=None, w0=None):
    """Penalized fit by cyclic coordinate descent over coordinates 0..M-1.

    ``X`` may be a design matrix (then ``y`` is required) or a precomputed
    :class:`Gram`.  Non-convergence within ``cfg.max_iter`` sweeps is reported
    through ``converged``, not raised.
    """
    cfg = cfg or FitConfig()
    if penalty not in _CODES:
        raise ParameterError(f"unknown penalty {penalty!r}")
    gram = _as_gram(X, y)
    m = gram.n_features
    start = np.zeros(m) if w0 is None else np.asarray(w0, dtype=np.float64)
    if start.shape != (m,):
        raise ParameterError(f"warm start has shape {start.shape}, expected ({m},)")
    if cfg.nonneg:
        start = np.maximum(start, 0.0)
    w, n_iter, converged, trace = kernels.cd_gram(
        gram.xtx, gram.xty, gram.yty, gram.n, start, _CODES[penalty],
        cfg.lam, cfg.gamma, cfg.nonneg, cfg.max_iter, cfg.tol)
    return FitResult(np.asarray(w), int(n_iter), bool(converged), np.asarray(trace),
                     penalty, float(cfg.lam), float(cfg.gamma))


def fit_ridge(X, y=None, lambda_ridge=0.0, nonneg=True, max_iter=10000, tol=1e-10):
    """Weak-ridge refit ``(1/N)||y - Xw||^2 + lambda_ridge * ||w||^2``.

    Coordinate descent with projection onto ``w >= 0``, warm-started from the
    clipped normal-equation solution; when that solution is already feasible
    it is the optimum and a single confirming sweep suffices.
    """
    if not lambda_ridge >= 0:
        raise ParameterError(f"ridge strength must be >= 0, got {lambda_ridge}")
    gram = _as_gram(X, y)
    m = gram.n_features
    if m == 0:
        raise ParameterError("ridge refit needs a non-empty support")
    A = gram.xtx / gram.n + lambda_ridge * np.eye(m)
    b = gram.xty / gram.n
    try:
        w0 = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        w0 = np.linalg.lstsq(A, b, rcond=None)[0]
    if not np.isfinite(w0).all():
        w0 = np.zeros(m)
    if nonneg:
        w0 = np.maximum(w0, 0.0)
    cfg = FitConfig(lam=float(lambda_ridge), max_iter=max_iter, tol=tol, nonneg=nonneg)
    res = fit_penalized(gram, penalty=RIDGE, cfg=cfg, w0=w0)
    return res.weights


def lambda_max(X, y=None):
    """Smallest lambda at which every coordinate sits in the dead zone."""
    gram = _as_gram(X, y)
    if gram.n_features == 0:
        return 0.0
    return float(np.max(np.abs(gram.xty)) * 2.0 / gram.n)


@dataclass(eq=False)
class SearchResult:
    lam: float
    fit: FitResult
    hit: bool
    probes: list = field(default_factory=list)

    @property
    def n_selected(self):
        return int(self.fit.support.size)


def lambda_search(X, y=None, target_q=1, gamma=10.0, slack=0, penalty=MCP, max_probes=40,
                  max_iter=200, tol=1e-6, nonneg=True, lam_ratio=1e-4):
    """Bisect ``log(lambda)`` until the support size is within ``slack`` of ``target_q``.

    Probes are warm-started from the nearest sparser (larger-lambda) probe.
    If the target is not reached within ``max_probes`` the closest fit is
    returned with ``hit=False``.
    """
    gram = _as_gram(X, y)
    m = gram.n_features
    if not 1 <= target_q <= m:
        raise ParameterError(f"target Q must lie in [1, {m}], got {target_q}")
    if slack < 0:
        raise ParameterError("slack must be >= 0")
    hi = lambda_max(gram)
    if hi == 0.0:
        fit = fit_penalized(gram, penalty=penalty, cfg=FitConfig(0.0, gamma, max_iter, tol, nonneg))
        return SearchResult(0.0, fit, abs(fit.support.size - target_q) <= slack, [(0.0, fit.support.size)])
    lo = hi * lam_ratio
    fits = {}  # lambda -> FitResult
    probes = []
    best = None

    def run(lam):
        above = [l for l in fits if l > lam]
        w0 = fits[min(above)].weights if above else None
        fit = fit_penalized(gram, penalty=penalty, cfg=FitConfig(lam, gamma, max_iter, tol, nonneg), w0=w0)
        fits[lam] = fit
        probes.append((lam, int(fit.support.size)))
        return fit

    def closer(lam, fit):
        nonlocal best
        err = abs(fit.support.size - target_q)
        if best is None or err < best[0]:
            best = (err, lam, fit)

    fit = run(hi)
    closer(hi, fit)
    if abs(fit.support.size - target_q) <= slack:
        return SearchResult(hi, fit, True, probes)
    fit = run(lo)
    closer(lo, fit)
    if abs(fit.support.size - target_q) <= slack:
        return SearchResult(lo, fit, True, probes)
    for _ in range(max(0, max_probes - 2)):
        mid = math.sqrt(lo * hi)
        if mid in (lo, hi):
            break
        fit = run(mid)
        closer(mid, fit)
        size = fit.support.size
        if abs(size - target_q) <= slack:
            return SearchResult(mid, fit, True, probes)
        if size > target_q:
            lo = mid
        else:
            hi = mid
    _, lam, fit = best
    return SearchResult(lam, fit, False, probes)
