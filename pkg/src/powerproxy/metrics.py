"""Accuracy metrics and proxy diagnostics."""
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError, ParameterError, UndefinedMetricError

VIF_CAP = 1e6
VIF_RIDGE = 1e-9


def _pair(labels, predictions):
    y = np.asarray(getattr(labels, "values", labels), dtype=np.float64).reshape(-1)
    p = np.asarray(getattr(predictions, "values", predictions), dtype=np.float64).reshape(-1)
    if y.shape != p.shape:
        raise DataError(f"labels ({y.size}) and predictions ({p.size}) differ in length")
    if y.size == 0:
        raise DataError("need at least one point")
    return y, p


def nrmse(labels, predictions):
    """Root-mean-square error divided by the mean label."""
    y, p = _pair(labels, predictions)
    ybar = y.mean()
    if ybar == 0:
        raise UndefinedMetricError("NRMSE is undefined for zero mean label")
    return float(np.sqrt(np.mean((y - p) ** 2)) / ybar)


def nmae(labels, predictions):
    """Sum of absolute errors divided by the sum of labels."""
    y, p = _pair(labels, predictions)
    total = y.sum()
    if total == 0:
        raise UndefinedMetricError("NMAE is undefined for zero label sum")
    return float(np.abs(y - p).sum() / total)


def r_squared(labels, predictions):
    y, p = _pair(labels, predictions)
    if y.size < 2:
        raise DataError("R^2 needs at least two points")
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise UndefinedMetricError("R^2 is undefined for constant labels")
    return float(1.0 - np.sum((y - p) ** 2) / ss_tot)


def pearson(labels, predictions):
    y, p = _pair(labels, predictions)
    if y.size < 2:
        raise DataError("correlation needs at least two points")
    yc = y - y.mean()
    pc = p - p.mean()
    den = np.sqrt((yc @ yc) * (pc @ pc))
    if den == 0:
        raise UndefinedMetricError("correlation is undefined for a constant series")
    return float(np.clip((yc @ pc) / den, -1.0, 1.0))


@dataclass
class MetricsReport:
    nrmse: float
    nmae: float
    r2: float
    pearson_r: float
    n_points: int
    mean_label: float
    mean_prediction: float

    @property
    def mean_bias(self):
        """Relative difference of mean prediction and mean label."""
        return (self.mean_prediction - self.mean_label) / self.mean_label

    def to_dict(self):
        d = asdict(self)
        d["mean_bias"] = self.mean_bias
        return d


def report(labels, predictions):
    y, p = _pair(labels, predictions)
    return MetricsReport(
        nrmse=nrmse(y, p),
        nmae=nmae(y, p),
        r2=r_squared(y, p),
        pearson_r=pearson(y, p),
        n_points=int(y.size),
        mean_label=float(y.mean()),
        mean_prediction=float(p.mean()),
    )


def vif(columns):
    """Variance inflation factor of every column against the others.

    Columns are centred, then ``VIF_j = 1 / (1 - R_j^2)`` is read off the
    inverse of the (slightly ridged) correlation matrix.  Exactly collinear
    or constant columns report ``VIF_CAP``.
    """
    X = np.asarray(columns, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("expected a 2-D column matrix")
    q = X.shape[1]
    if q < 2:
        raise ParameterError(f"VIF needs at least two columns, got {q}")
    Xc = X - X.mean(axis=0)
    ss = np.einsum("ij,ij->j", Xc, Xc)
    live = ss > 0
    out = np.full(q, VIF_CAP)
    if live.sum() < 2:
        if live.sum() == 1:
            out[live] = 1.0
        return out
    Z = Xc[:, live] / np.sqrt(ss[live])
    R = Z.T @ Z
    R[np.diag_indices_from(R)] += VIF_RIDGE
    try:
        inv_diag = np.diag(np.linalg.inv(R))
    except np.linalg.LinAlgError:
        inv_diag = np.full(R.shape[0], np.inf)
    vals = inv_diag * (1.0 + VIF_RIDGE)
    vals = np.where(np.isfinite(vals), vals, VIF_CAP)
    out[live] = np.clip(vals, 1.0, VIF_CAP)
    return out


def vif_summary(columns):
    v = vif(columns)
    return {"mean": float(v.mean()), "median": float(np.median(v)), "max": float(v.max())}


def weight_mass(weights):
    """Sum of absolute weights; accepts a model or a weight vector."""
    w = getattr(weights, "weights", weights)
    w = np.asarray(w, dtype=np.float64)
    return float(np.abs(w).sum()) if w.size else 0.0


def delta_current(power):
    """First difference ``p[i+1] - p[i]``, the per-cycle current step."""
    p = np.asarray(getattr(power, "values", power), dtype=np.float64).reshape(-1)
    if p.size < 2:
        raise ParameterError("differencing needs at least two cycles")
    return np.diff(p)


def delta_report(truth, predicted):
    """Agreement of predicted and true per-cycle current steps."""
    dt = delta_current(truth)
    dp = delta_current(predicted)
    return {
        "pearson_r": pearson(dt, dp),
        "n_points": int(dt.size),
        "rms_true": float(np.sqrt(np.mean(dt ** 2))),
        "rms_error": float(np.sqrt(np.mean((dt - dp) ** 2))),
        "max_abs_true": float(np.max(np.abs(dt))),
    }


def format_table(rows, columns):
    """Aligned plain-text table from a list of dicts."""
    cells = [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def to_json(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"
