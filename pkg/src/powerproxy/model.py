"""Proxy selection, relaxation, multi-cycle models and inference.

Training runs three steps: screen out degenerate columns, select a sparse
proxy set with an MCP fit whose lambda is tuned to the requested proxy count,
then refit the selected proxies from scratch with a weak ridge penalty.

An interval model is trained on tau-cycle mean toggles and mean power, but is
applied at inference exactly like a per-cycle model: the mean over a T-cycle
window of per-cycle predictions equals the mean of the T/tau interval
predictions, so only binary toggles ever meet the weights.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__, metrics, solver
from .errors import DataError, ParameterError
from .trace import as_bits, as_values

PER_CYCLE = "per_cycle"
INTERVAL = "interval"


@dataclass(eq=False)
class PowerModel:
    proxy_indices: np.ndarray
    weights: np.ndarray
    tau: int = 1
    proxy_names: list = None
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.proxy_indices = np.asarray(self.proxy_indices, dtype=np.int64).reshape(-1)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.proxy_indices.shape != self.weights.shape:
            raise DataError("proxy indices and weights differ in length")
        if np.any(np.diff(self.proxy_indices) <= 0):
            raise DataError("proxy indices must be strictly increasing")
        if np.any(self.weights < 0) or not np.isfinite(self.weights).all():
            raise DataError("model weights must be finite and non-negative")
        if int(self.tau) < 1:
            raise ParameterError("tau must be >= 1")
        self.tau = int(self.tau)
        if self.proxy_names is not None:
            self.proxy_names = list(self.proxy_names)

    @property
    def flavor(self):
        return PER_CYCLE if self.tau == 1 else INTERVAL

    @property
    def q(self):
        return int(self.proxy_indices.size)

    def to_dict(self):
        return {
            "format": "powerproxy-model",
            "version": __version__,
            "flavor": self.flavor,
            "tau": self.tau,
            "proxy_indices": self.proxy_indices.tolist(),
            "proxy_names": self.proxy_names,
            "weights": self.weights.tolist(),
            "training_meta": self.training_meta,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "powerproxy-model":
            raise DataError("not a powerproxy model file")
        return cls(d["proxy_indices"], d["weights"], d.get("tau", 1), d.get("proxy_names"),
                   d.get("training_meta", {}))

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed model file: {exc}") from None


@dataclass
class ScreenReport:
    kept: np.ndarray
    dropped: dict  # column -> reason

    def to_dict(self):
        return {"kept": int(self.kept.size),
                "dropped": {str(k): v for k, v in sorted(self.dropped.items())}}


def screen_signals(toggles):
    """Drop constant and duplicated columns; duplicates keep the lowest index."""
    bits = as_bits(toggles)
    n, m = bits.shape
    dropped = {}
    if n == 0:
        return ScreenReport(np.zeros(0, np.int64), {j: "zero_variance" for j in range(m)})
    counts = bits.sum(axis=0, dtype=np.int64)
    packed = np.packbits(bits, axis=0)
    seen = {}
    kept = []
    for j in range(m):
        if counts[j] == 0:
            dropped[j] = "never_toggles"
            continue
        if counts[j] == n:
            dropped[j] = "always_toggles"
            continue
        key = packed[:, j].tobytes()
        if key in seen:
            dropped[j] = f"duplicate_of:{seen[key]}"
            continue
        seen[key] = j
        kept.append(j)
    return ScreenReport(np.asarray(kept, dtype=np.int64), dropped)


@dataclass(eq=False)
class ProxySet:
    indices: np.ndarray          # columns of the original toggle matrix
    temp_weights: np.ndarray     # penalized (pre-relaxation) weights
    lam: float
    gamma: float
    penalty: str
    search: solver.SearchResult
    screen: ScreenReport


def interval_aggregate(toggles, labels, tau):
    """Per-interval toggle counts and mean power for ``tau``-cycle intervals.

    Returns ``(counts, mean_power, dropped_cycles)``; the mean toggle rate of
    an interval is ``counts / tau``.  Trailing cycles that do not fill an
    interval are dropped.
    """
    bits = as_bits(toggles)
    y = as_values(labels)
    if bits.shape[0] != y.shape[0]:
        raise DataError(f"{bits.shape[0]} toggle rows but {y.shape[0]} labels")
    tau = int(tau)
    if tau < 1:
        raise ParameterError("tau must be >= 1")
    if tau > bits.shape[0]:
        raise ParameterError(f"tau={tau} exceeds trace length {bits.shape[0]}")
    if tau == 1:
        return bits, y, 0
    k = bits.shape[0] // tau
    used = k * tau
    counts = bits[:used].reshape(k, tau, -1).sum(axis=1, dtype=np.int64)
    return counts, y[:used].reshape(k, tau).mean(axis=1), bits.shape[0] - used


def select_proxies(toggles, labels, target_q, gamma=10.0, slack=0, penalty=solver.MCP,
                   tau=1, max_iter=200, tol=1e-6, max_probes=40):
    """Choose ``target_q`` proxies by a penalized fit with tuned lambda."""
    bits = as_bits(toggles)
    screen = screen_signals(bits)
    kept = screen.kept
    if kept.size == 0:
        raise DataError("no signal survives screening")
    if not 1 <= target_q <= kept.size:
        raise ParameterError(f"target Q must lie in [1, {kept.size}] (usable signals), got {target_q}")
    counts, ybar, _ = interval_aggregate(bits[:, kept], labels, tau)
    gram = solver.gram_stats(counts, ybar, scale=1.0 / tau)
    sr = solver.lambda_search(gram, target_q=target_q, gamma=gamma, slack=slack, penalty=penalty,
                              max_probes=max_probes, max_iter=max_iter, tol=tol)
    local = sr.fit.support
    return ProxySet(kept[local], sr.fit.weights[local], sr.lam, gamma, penalty, sr, screen)


def relax(toggles, labels, proxy_set, lambda_ridge=None, tau=1, proxy_names=None):
    """Refit the selected proxies with a weak ridge penalty.

    ``lambda_ridge`` defaults to one hundredth of the selection lambda.
    """
    idx = np.asarray(proxy_set.indices, dtype=np.int64)
    if idx.size == 0:
        raise ParameterError("cannot relax an empty proxy set")
    if lambda_ridge is None:
        lambda_ridge = proxy_set.lam / 100.0
    bits = as_bits(toggles)
    counts, ybar, dropped = interval_aggregate(bits[:, idx], labels, tau)
    gram = solver.gram_stats(counts, ybar, scale=1.0 / tau)
    w = solver.fit_ridge(gram, lambda_ridge=lambda_ridge)
    meta = {
        "penalty": proxy_set.penalty,
        "lambda": proxy_set.lam,
        "gamma": proxy_set.gamma,
        "lambda_ridge": float(lambda_ridge),
        "selection_converged": bool(proxy_set.search.fit.converged),
        "selection_iterations": int(proxy_set.search.fit.n_iter),
        "target_hit": bool(proxy_set.search.hit),
        "dropped_columns": proxy_set.screen.to_dict()["dropped"],
        "dropped_cycles": int(dropped),
    }
    names = [proxy_names[i] for i in idx] if proxy_names is not None else None
    return PowerModel(idx, w, tau=tau, proxy_names=names, training_meta=meta)


def train(toggles, labels, target_q, gamma=10.0, tau=1, slack=0, penalty=solver.MCP,
          lambda_ridge=None, max_iter=200, tol=1e-6, proxy_names=None):
    """Screen, select and relax; returns ``(PowerModel, ProxySet)``."""
    ps = select_proxies(toggles, labels, target_q, gamma=gamma, slack=slack, penalty=penalty,
                        tau=tau, max_iter=max_iter, tol=tol)
    model = relax(toggles, labels, ps, lambda_ridge=lambda_ridge, tau=tau, proxy_names=proxy_names)
    model.training_meta["tol"] = float(tol)
    return model, ps


def train_multicycle(toggles, labels, tau=8, target_q=50, gamma=10.0, **kwargs):
    """Interval model trained on ``tau``-cycle aggregates."""
    return train(toggles, labels, target_q, gamma=gamma, tau=tau, **kwargs)


def _proxy_columns(model, toggles):
    bits = as_bits(toggles)
    if model.q and model.proxy_indices.max() >= bits.shape[1]:
        raise DataError(f"model needs column {model.proxy_indices.max()}, trace has {bits.shape[1]}")
    return bits[:, model.proxy_indices]


def predict_per_cycle(model, toggles):
    """``p[i] = sum_j w_j x_j[i]`` over the model's proxies."""
    cols = _proxy_columns(model, toggles)
    if model.q == 0:
        return np.zeros(cols.shape[0])
    return cols.astype(np.float64) @ model.weights


def temporary_predict(proxy_set, toggles):
    """Predictions of the penalized selection-stage model."""
    bits = as_bits(toggles)
    return bits[:, proxy_set.indices].astype(np.float64) @ proxy_set.temp_weights


@dataclass
class WindowPrediction:
    window_size: int
    values: np.ndarray
    dropped_cycles: int = 0


def check_window(T):
    T = int(T)
    if T < 1 or T & (T - 1):
        raise ParameterError(f"window size must be a power of two, got {T}")
    return T


def predict_window(model, toggles, T, order="predict_first"):
    """Mean predicted power over consecutive T-cycle windows.

    ``order="predict_first"`` weights the binary toggles of every cycle and
    averages the results (the hardware order).  ``order="aggregate_first"``
    averages toggles over tau-cycle intervals (or over the window when tau
    does not divide T), applies the weights, and averages those interval
    predictions.  Both orders agree up to rounding.
    """
    T = check_window(T)
    cols = _proxy_columns(model, toggles)
    n_win = cols.shape[0] // T
    dropped = cols.shape[0] - n_win * T
    cols = cols[: n_win * T]
    if order == "predict_first":
        p = cols.astype(np.float64) @ model.weights if model.q else np.zeros(cols.shape[0])
        vals = p.reshape(n_win, T).mean(axis=1) if n_win else np.zeros(0)
    elif order == "aggregate_first":
        step = model.tau if T % model.tau == 0 else T
        k = T // step
        counts = cols.reshape(n_win * k, step, -1).sum(axis=1, dtype=np.int64)
        interval_pred = (counts / step) @ model.weights if model.q else np.zeros(n_win * k)
        vals = interval_pred.reshape(n_win, k).mean(axis=1) if n_win else np.zeros(0)
    else:
        raise ParameterError(f"unknown order {order!r}")
    return WindowPrediction(T, vals, dropped)


def window_labels(labels, T):
    y = as_values(labels)
    n_win = y.shape[0] // T
    return y[: n_win * T].reshape(n_win, T).mean(axis=1)


def evaluate(model, toggles, labels, windows=(1,)):
    """Metrics per window size; ``windows`` are powers of two."""
    y = as_values(labels)
    bits = as_bits(toggles)
    if bits.shape[0] != y.shape[0]:
        raise DataError(f"{bits.shape[0]} toggle rows but {y.shape[0]} labels")
    out = {}
    for T in windows:
        T = check_window(T)
        pred = predict_window(model, bits, T)
        out[T] = metrics.report(window_labels(y, T), pred.values)
    return out


def validation_split(n_cycles, fraction=0.2, block=256):
    """Boolean mask marking every k-th block of cycles as validation.

    Interleaved blocks keep every workload phase represented on both sides
    of the split.
    """
    mask = np.zeros(int(n_cycles), dtype=bool)
    if fraction <= 0:
        return mask
    if not fraction < 1:
        raise ParameterError("validation fraction must be < 1")
    stride = max(2, int(round(1.0 / fraction)))
    n_blocks = -(-int(n_cycles) // block)
    for b in range(stride - 1, n_blocks, stride):
        mask[b * block:(b + 1) * block] = True
    return mask


def train_validated(toggles, labels, target_q, gammas=(10.0,), val_fraction=0.2, tau=1,
                    **kwargs):
    """Pick gamma by validation NRMSE, then retrain on all cycles.

    Lambda is pinned by the proxy count, so gamma is the free knob.  The
    validation scores of every candidate land in ``training_meta``.
    """
    bits = as_bits(toggles)
    y = as_values(labels)
    mask = validation_split(bits.shape[0], val_fraction)
    scores = {}
    if mask.any() and len(gammas) > 1:
        for g in gammas:
            m, _ = train(bits[~mask], y[~mask], target_q, gamma=g, tau=tau, **kwargs)
            scores[float(g)] = metrics.nrmse(y[mask], predict_per_cycle(m, bits[mask]))
        best = min(scores, key=lambda g: (scores[g], g))
    else:
        best = float(gammas[0])
        if mask.any():
            m, _ = train(bits[~mask], y[~mask], target_q, gamma=best, tau=tau, **kwargs)
            scores[best] = metrics.nrmse(y[mask], predict_per_cycle(m, bits[mask]))
    model, ps = train(bits, y, target_q, gamma=best, tau=tau, **kwargs)
    model.training_meta["validation_fraction"] = float(val_fraction)
    model.training_meta["validation_nrmse"] = {repr(g): s for g, s in sorted(scores.items())}
    return model, ps
