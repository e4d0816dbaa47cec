"""Hot numeric kernels with a numba path and a pure-numpy path.

Two kernels dominate runtime: the coordinate-descent sweep of the penalized
solver and the fixed-point power-meter accumulation.  Each has a compiled
loop implementation and a numpy implementation with identical semantics;
:mod:`powerproxy._accel` decides which one the public wrappers call.

The scalar proximal maps are written once in plain Python and compiled as
well, so both paths share the exact same arithmetic for a single coordinate.
"""

import numpy as np

from . import _accel

LASSO = 0
MCP = 1
RIDGE = 2


# -- scalar penalties and proximal maps --------------------------------------

@_accel.jitable
def _penalty(w, penalty, lam, gamma):
    a = abs(w)
    if penalty == LASSO:
        return lam * a
    if penalty == MCP:
        if a <= gamma * lam:
            return lam * a - w * w / (2.0 * gamma)
        return 0.5 * gamma * lam * lam
    return lam * w * w


@_accel.jitable
def _prox_lasso(z, lam, s, nonneg):
    a = abs(z) - lam / s
    if a <= 0.0:
        return 0.0
    w = a if z > 0.0 else -a
    if nonneg and w < 0.0:
        return 0.0
    return w


@_accel.jitable
def _mcp_1d(w, z, lam, gamma, s):
    # scalar objective 0.5*s*(w-z)^2 + P_mcp(w)
    a = abs(w)
    if a <= gamma * lam:
        pen = lam * a - w * w / (2.0 * gamma)
    else:
        pen = 0.5 * gamma * lam * lam
    return 0.5 * s * (w - z) * (w - z) + pen


@_accel.jitable
def _prox_mcp(z, lam, gamma, s, nonneg):
    az = abs(z)
    sgn = 1.0 if z >= 0.0 else -1.0
    if s * gamma > 1.0:
        if az <= lam / s:
            w = 0.0
        elif az <= gamma * lam:
            w = sgn * (az - lam / s) / (1.0 - 1.0 / (s * gamma))
        else:
            w = z
    else:
        # non-convex subproblem: compare every candidate minimiser
        gl = gamma * lam
        best = 0.0
        fbest = _mcp_1d(0.0, z, lam, gamma, s)
        cand = sgn * gl
        f = _mcp_1d(cand, z, lam, gamma, s)
        if f < fbest:
            best = cand
            fbest = f
        if az > gl:
            f = _mcp_1d(z, z, lam, gamma, s)
            if f < fbest:
                best = z
                fbest = f
        denom = s - 1.0 / gamma
        if denom != 0.0:
            cand = sgn * (s * az - lam) / denom
            if cand * sgn > 0.0 and abs(cand) <= gl:
                f = _mcp_1d(cand, z, lam, gamma, s)
                if f < fbest:
                    best = cand
                    fbest = f
        w = best
    if nonneg and w < 0.0:
        return 0.0
    return w


@_accel.jitable
def _prox_ridge(z, lam, s, nonneg):
    w = s * z / (s + 2.0 * lam)
    if nonneg and w < 0.0:
        return 0.0
    return w


@_accel.jitable
def _prox(z, penalty, lam, gamma, s, nonneg):
    if penalty == LASSO:
        return _prox_lasso(z, lam, s, nonneg)
    if penalty == MCP:
        return _prox_mcp(z, lam, gamma, s, nonneg)
    return _prox_ridge(z, lam, s, nonneg)


# -- coordinate descent on the Gram matrix -----------------------------------
#
# Loss = (1/N)||y - Xw||^2 + sum_j P(w_j).  With G = X'X, c = X'y and the
# running gradient g = c - G w, coordinate j sees curvature s_j = 2 G_jj / N
# and target z_j = w_j + g_j / G_jj.  ||y - Xw||^2 = y'y - w'c - w'g.

def _cd_gram_numpy(G, c, yty, n, w, penalty, lam, gamma, nonneg, max_iter, tol):
    m = c.shape[0]
    d = np.diag(G).copy()
    g = c - G @ w
    trace = np.empty(max_iter)
    converged = False
    it = 0
    active = np.flatnonzero(d > 0.0)
    s_all = 2.0 * d / n
    while it < max_iter:
        max_delta = 0.0
        max_w = 0.0
        for j in active:
            wj = w[j]
            z = wj + g[j] / d[j]
            new = _prox(z, penalty, lam, gamma, s_all[j], nonneg)
            delta = new - wj
            if delta != 0.0:
                g -= delta * G[j]
                w[j] = new
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
            aw = max(abs(wj), abs(new))
            if aw > max_w:
                max_w = aw
        pen = 0.0
        for j in np.flatnonzero(w):
            pen += _penalty(w[j], penalty, lam, gamma)
        trace[it] = (yty - w @ c - w @ g) / n + pen
        it += 1
        if max_delta == 0.0 or (max_w > 0.0 and max_delta / max_w < tol):
            converged = True
            break
    return w, it, converged, trace[:it]


def _cd_gram_numba_impl(G, c, yty, n, w, penalty, lam, gamma, nonneg, max_iter, tol):
    m = c.shape[0]
    g = c.copy()
    for k in range(m):
        if w[k] != 0.0:
            for j in range(m):
                g[j] -= G[k, j] * w[k]
    trace = np.empty(max_iter)
    converged = False
    it = 0
    while it < max_iter:
        max_delta = 0.0
        max_w = 0.0
        for j in range(m):
            djj = G[j, j]
            if djj <= 0.0:
                continue
            wj = w[j]
            z = wj + g[j] / djj
            new = _prox(z, penalty, lam, gamma, 2.0 * djj / n, nonneg)
            delta = new - wj
            if delta != 0.0:
                row = G[j]
                for k in range(m):
                    g[k] -= delta * row[k]
                w[j] = new
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
            aw = max(abs(wj), abs(new))
            if aw > max_w:
                max_w = aw
        wc = 0.0
        wg = 0.0
        pen = 0.0
        for j in range(m):
            if w[j] != 0.0:
                wc += w[j] * c[j]
                wg += w[j] * g[j]
                pen += _penalty(w[j], penalty, lam, gamma)
        trace[it] = (yty - wc - wg) / n + pen
        it += 1
        if max_delta == 0.0 or (max_w > 0.0 and max_delta / max_w < tol):
            converged = True
            break
    return w, it, converged, trace[:it]


_cd_gram_numba = _accel.njit(_cd_gram_numba_impl) if _accel.HAVE_NUMBA else None


def cd_gram(G, c, yty, n, w0, penalty, lam, gamma, nonneg, max_iter, tol):
    """Run cyclic coordinate descent sweeps from ``w0``.

    Returns ``(w, n_sweeps, converged, objective_per_sweep)``.  ``w0`` is not
    modified.
    """
    G = np.ascontiguousarray(G, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    w = np.array(w0, dtype=np.float64, copy=True)
    args = (G, c, float(yty), float(n), w, int(penalty), float(lam), float(gamma),
            bool(nonneg), int(max_iter), float(tol))
    if _accel.use_numba():
        return _cd_gram_numba(*args)
    return _cd_gram_numpy(*args)


# -- fixed-point power meter --------------------------------------------------

OPM_OK = 0
OPM_CYCLE_OVERFLOW = 1
OPM_WINDOW_OVERFLOW = 2


def _opm_numpy(q, bits, T, shift, cycle_limit, window_limit):
    n_win = bits.shape[0] // T
    used = bits[: n_win * T]
    cycle = used.astype(np.int64) @ q.astype(np.int64) if q.size else np.zeros(used.shape[0], np.int64)
    if cycle.size and cycle.max() >= cycle_limit:
        return np.zeros(0, np.int64), OPM_CYCLE_OVERFLOW
    acc = cycle.reshape(n_win, T).sum(axis=1)
    if acc.size and acc.max() >= window_limit:
        return np.zeros(0, np.int64), OPM_WINDOW_OVERFLOW
    return acc >> shift, OPM_OK


def _opm_numba_impl(q, bits, T, shift, cycle_limit, window_limit):
    n_win = bits.shape[0] // T
    nq = q.shape[0]
    out = np.zeros(n_win, np.int64)
    for k in range(n_win):
        acc = np.int64(0)
        for t in range(T):
            i = k * T + t
            s = np.int64(0)
            for j in range(nq):
                if bits[i, j]:
                    s += q[j]
            if s >= cycle_limit:
                return np.zeros(0, np.int64), 1
            acc += s
            if acc >= window_limit:
                return np.zeros(0, np.int64), 2
        out[k] = acc >> shift
    return out, 0


_opm_numba = _accel.njit(_opm_numba_impl) if _accel.HAVE_NUMBA else None


def opm_accumulate(q, bits, T, shift, cycle_limit, window_limit):
    """Conditional weight accumulation, T-cycle summation and right shift.

    Returns ``(raw, status)`` where status is one of the ``OPM_*`` codes.
    """
    q = np.ascontiguousarray(q, dtype=np.int64)
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    args = (q, bits, int(T), int(shift), np.int64(cycle_limit), np.int64(window_limit))
    if _accel.use_numba():
        return _opm_numba(*args)
    return _opm_numpy(*args)
