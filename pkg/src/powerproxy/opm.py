"""Fixed-point on-chip power meter: weight quantization and a bit-exact
simulation of its datapath.

Every cycle the meter adds up the B-bit weights of the proxies that toggled
(an AND gate per weight bit feeding an adder tree, no multipliers), then sums
those per-cycle values over T cycles and drops the lowest log2(T) bits.
Register widths follow from the operand ranges, so nothing can overflow:

    per-cycle sum      B + ceil(log2 Q) bits
    window accumulator B + ceil(log2 Q) + log2 T bits
"""
import csv
import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError, InvariantViolation, ParameterError
from .model import check_window
from .trace import as_bits

LATENCY_CYCLES = 2
_MAX_WIDTH = 62


def ceil_log2(n):
    n = int(n)
    if n < 1:
        raise ParameterError("ceil_log2 needs n >= 1")
    return (n - 1).bit_length()


@dataclass(eq=False)
class QuantizedModel:
    q_weights: np.ndarray
    bit_width: int
    scale: float
    proxy_indices: np.ndarray = None
    proxy_names: list = None

    def __post_init__(self):
        self.q_weights = np.asarray(self.q_weights, dtype=np.int64).reshape(-1)
        self.bit_width = int(self.bit_width)
        if self.bit_width < 1:
            raise ParameterError("bit width must be >= 1")
        if self.q_weights.size == 0:
            raise ParameterError("a power meter needs at least one proxy")
        if self.q_weights.min() < 0 or self.q_weights.max() >= (1 << self.bit_width):
            raise ParameterError(f"quantized weights must fit in {self.bit_width} unsigned bits")
        if not self.scale > 0:
            raise ParameterError("scale must be positive")
        if self.proxy_indices is not None:
            self.proxy_indices = np.asarray(self.proxy_indices, dtype=np.int64)

    @property
    def q(self):
        return int(self.q_weights.size)

    @property
    def cycle_sum_width(self):
        return self.bit_width + ceil_log2(self.q)

    def window_acc_width(self, T):
        return self.cycle_sum_width + ceil_log2(check_window(T))

    def dequantized_weights(self):
        return self.q_weights / self.scale

    def export(self, T):
        """Configuration hand-off for a hardware generator."""
        T = check_window(T)
        return {
            "format": "powerproxy-opm",
            "Q": self.q,
            "B": self.bit_width,
            "T": T,
            "q_weights": self.q_weights.tolist(),
            "scale": self.scale,
            "cycle_sum_width": self.cycle_sum_width,
            "window_acc_width": self.window_acc_width(T),
            "output_width": self.window_acc_width(T) - ceil_log2(T),
            "latency_cycles": LATENCY_CYCLES,
            "proxy_indices": None if self.proxy_indices is None else self.proxy_indices.tolist(),
            "proxy_names": self.proxy_names,
        }

    def to_json(self, T):
        return json.dumps(self.export(T), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "powerproxy-opm":
            raise DataError("not a powerproxy OPM file")
        return cls(d["q_weights"], d["B"], d["scale"], d.get("proxy_indices"), d.get("proxy_names"))


@dataclass(eq=False)
class OpmOutput:
    window_size: int
    raw: np.ndarray
    latency_cycles: int = LATENCY_CYCLES
    dropped_cycles: int = 0


def quantize(model, bits=10):
    """Map weights onto B-bit unsigned integers with one global scale.

    ``scale = (2**B - 1) / max(w)``; each weight becomes ``rint(w * scale)``
    (round half to even), so the largest weight uses the full range.
    """
    B = int(bits)
    if B < 1:
        raise ParameterError("bit width must be >= 1")
    w = np.asarray(getattr(model, "weights", model), dtype=np.float64)
    if w.size == 0 or np.any(w < 0) or not np.isfinite(w).all():
        raise ParameterError("weights must be a non-empty finite non-negative vector")
    wmax = w.max()
    if wmax <= 0:
        raise ParameterError("cannot quantize an all-zero model")
    top = (1 << B) - 1
    scale = top / wmax
    q = np.minimum(np.rint(w * scale), top).astype(np.int64)
    return QuantizedModel(q, B, float(scale), getattr(model, "proxy_indices", None),
                          getattr(model, "proxy_names", None))


def opm_inputs(qmodel, toggles):
    """Restrict a full toggle matrix to the meter's proxy columns."""
    bits = as_bits(toggles)
    if qmodel.proxy_indices is None:
        raise ParameterError("quantized model carries no proxy indices")
    if qmodel.proxy_indices.max() >= bits.shape[1]:
        raise DataError(f"trace has {bits.shape[1]} columns, meter needs column {qmodel.proxy_indices.max()}")
    return bits[:, qmodel.proxy_indices]


def simulate_opm(qmodel, toggles, T):
    """Run the meter over proxy toggles (one column per quantized weight)."""
    T = check_window(T)
    bits = as_bits(toggles)
    if bits.shape[1] != qmodel.q:
        raise DataError(f"meter has {qmodel.q} proxies, toggle matrix has {bits.shape[1]} columns")
    shift = ceil_log2(T)
    cw = qmodel.cycle_sum_width
    ww = cw + shift
    if ww > _MAX_WIDTH:
        raise ParameterError(f"accumulator width {ww} exceeds the simulator's {_MAX_WIDTH}-bit limit")
    raw, status = kernels.opm_accumulate(qmodel.q_weights, bits, T, shift, 1 << cw, 1 << ww)
    if status == kernels.OPM_CYCLE_OVERFLOW:
        raise InvariantViolation(f"per-cycle sum overflowed {cw} bits")
    if status == kernels.OPM_WINDOW_OVERFLOW:
        raise InvariantViolation(f"window accumulator overflowed {ww} bits")
    return OpmOutput(T, np.asarray(raw, dtype=np.int64), LATENCY_CYCLES, bits.shape[0] - raw.shape[0] * T)


def dequantize_output(output, scale, T=None):
    """Window means in power units: ``raw / scale``."""
    if T is not None and check_window(T) != output.window_size:
        raise ParameterError(f"output was produced with T={output.window_size}, not {T}")
    if not scale > 0:
        raise ParameterError("scale must be positive")
    return np.asarray(output.raw, dtype=np.float64) / scale


def error_bound(qmodel, T):
    """Worst-case gap between dequantized output and the float model's window mean.

    Rounding moves each weight by at most half an LSB, so a cycle's sum moves
    by at most ``Q/2`` LSB; dropping log2(T) bits loses at most ``(T-1)/T``.
    """
    T = check_window(T)
    return (0.5 * qmodel.q + (T - 1) / T) / qmodel.scale


def truncation_bound(qmodel, T):
    """Gap between dequantized output and the exact integer window mean."""
    T = check_window(T)
    return ((T - 1) / T) / qmodel.scale


def write_raw_csv(path, output):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "first_cycle", "raw"])
        for k, v in enumerate(output.raw.tolist()):
            w.writerow([k, k * output.window_size, v])
