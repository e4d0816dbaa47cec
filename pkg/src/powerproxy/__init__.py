"""Sparse power-proxy selection, linear power models and a fixed-point
on-chip power meter simulator."""

__version__ = "0.1.0"

from .errors import (ClockError, DataError, FormatError, InvariantViolation, ParameterError,
                     PowerProxyError, UndefinedMetricError)
from .trace import (PowerTrace, Signal, SignalCatalog, ToggleMatrix, collapse_bus,
                    extract_toggles, gated_clock_toggle, parse_vcd_subset, read_trace,
                    write_trace)
from .solver import FitConfig, FitResult, fit_penalized, fit_ridge, lambda_search, prox_lasso, prox_mcp
from .model import (PowerModel, evaluate, predict_per_cycle, predict_window, relax,
                    screen_signals, select_proxies, train, train_multicycle)
from .opm import QuantizedModel, dequantize_output, quantize, simulate_opm
