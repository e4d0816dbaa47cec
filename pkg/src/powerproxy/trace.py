"""Toggle features: extraction from sampled waveforms, VCD ingestion and the
PTRC binary trace format.

A signal toggles in cycle ``i`` when its sampled value differs from the value
sampled in cycle ``i - 1``.  Cycle 0 never toggles.  Any change counts,
including transitions to and from ``x``/``z``.
"""
import csv
import io
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ClockError, DataError, FormatError, ParameterError

BIT = "bit"
BUS = "bus"
GATED_CLOCK = "gated_clock"

_KIND_TAGS = {BIT: 0, BUS: 1, GATED_CLOCK: 2}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}

PTRC_MAGIC = b"PTRC"
PTRC_VERSION = 1
POWER_TAG = b"PWRF"


@dataclass(frozen=True)
class Signal:
    name: str
    kind: str = BIT
    width: int = 1
    enable: str | None = None

    def __post_init__(self):
        if not self.name:
            raise ParameterError("signal name must be non-empty")
        if self.kind not in _KIND_TAGS:
            raise ParameterError(f"unknown signal kind {self.kind!r}")
        if self.kind == BUS and self.width < 2:
            raise ParameterError(f"bus {self.name!r} needs width >= 2, got {self.width}")
        if self.kind != BUS and self.width != 1:
            raise ParameterError(f"{self.kind} signal {self.name!r} must have width 1")
        if self.kind == GATED_CLOCK and not self.enable:
            raise ParameterError(f"gated clock {self.name!r} needs an enable signal name")


@dataclass(frozen=True)
class SignalCatalog:
    """Ordered candidate signals; one ToggleMatrix column per entry."""

    signals: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "signals", tuple(self.signals))
        seen = set()
        for s in self.signals:
            if s.name in seen:
                raise ParameterError(f"duplicate signal name {s.name!r}")
            seen.add(s.name)

    @classmethod
    def from_names(cls, names):
        return cls(tuple(Signal(n) for n in names))

    @property
    def names(self):
        return [s.name for s in self.signals]

    def index(self, name):
        return self.names.index(name)

    def __len__(self):
        return len(self.signals)

    def __iter__(self):
        return iter(self.signals)

    def __getitem__(self, i):
        return self.signals[i]


@dataclass(frozen=True, eq=False)
class ToggleMatrix:
    """N cycles x M signals of 0/1 toggle indicators, cycle-major."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise DataError(f"toggle matrix must be 2-D, got shape {b.shape}")
        if b.dtype != np.uint8:
            if b.size and not np.isin(b, (0, 1)).all():
                raise DataError("toggle entries must be 0 or 1")
            b = b.astype(np.uint8)
        elif b.size and b.max() > 1:
            raise DataError("toggle entries must be 0 or 1")
        b = np.ascontiguousarray(b)
        b.flags.writeable = False
        object.__setattr__(self, "bits", b)

    @property
    def n_cycles(self):
        return self.bits.shape[0]

    @property
    def n_signals(self):
        return self.bits.shape[1]

    def __eq__(self, other):
        return isinstance(other, ToggleMatrix) and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True, eq=False)
class PowerTrace:
    """Per-cycle power values in arbitrary units."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.isfinite(v).all():
            raise DataError("power trace contains NaN or Inf")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        return isinstance(other, PowerTrace) and np.array_equal(self.values, other.values)


def as_bits(toggles):
    """Return the uint8 array behind a ToggleMatrix or array-like."""
    if isinstance(toggles, ToggleMatrix):
        return toggles.bits
    return ToggleMatrix(np.asarray(toggles)).bits


def as_values(trace):
    if isinstance(trace, PowerTrace):
        return trace.values
    return PowerTrace(trace).values


# -- feature rules ----------------------------------------------------------

def _stack_columns(columns):
    if isinstance(columns, np.ndarray):
        if columns.ndim != 2:
            raise DataError(f"expected an (N, M) array of samples, got shape {columns.shape}")
        return columns
    cols = [list(c) for c in columns]
    lengths = {len(c) for c in cols}
    if len(lengths) > 1:
        raise DataError(f"ragged input: signals have differing cycle counts {sorted(lengths)}")
    n = lengths.pop() if lengths else 0
    out = np.empty((n, len(cols)), dtype=object)
    for j, c in enumerate(cols):
        out[:, j] = c
    return out


def extract_toggles(values):
    """Per-cycle toggle bits from sampled signal values.

    ``values`` is either an ``(N, M)`` array (cycle-major) or a sequence of M
    per-signal sample sequences.  Samples may be any comparable objects, so
    ``"x"`` and ``"z"`` states work as-is.
    """
    v = _stack_columns(values)
    out = np.zeros(v.shape, dtype=np.uint8)
    if v.shape[0] > 1:
        out[1:] = v[1:] != v[:-1]
    return ToggleMatrix(out)


def collapse_bus(bit_toggles):
    """OR together the per-bit toggle columns of one bus.

    ``bit_toggles`` is ``(N, width)`` or a sequence of ``width`` columns.
    """
    if isinstance(bit_toggles, np.ndarray):
        b = bit_toggles
        if b.ndim == 1:
            b = b[:, None]
    else:
        cols = [np.asarray(c) for c in bit_toggles]
        if not cols:
            raise DataError("bus has width 0")
        if len({c.shape[0] for c in cols}) > 1:
            raise DataError("bus bit columns differ in length")
        b = np.stack(cols, axis=1)
    if b.shape[1] == 0:
        raise DataError("bus has width 0")
    return np.any(b != 0, axis=1).astype(np.uint8)


def gated_clock_toggle(enable_values, delayed=False):
    """Toggle column of a gated clock, represented by its latched enable.

    Same-cycle convention by default: an enable asserted in cycle ``i`` means
    the gated clock toggles in cycle ``i``.  With ``delayed=True`` the enable
    is registered one more cycle, so cycle ``i`` reflects cycle ``i - 1``.
    """
    en = np.array([_asserted(v) for v in enable_values], dtype=np.uint8)
    if delayed and en.size:
        en = np.concatenate(([0], en[:-1])).astype(np.uint8)
    return en


def _asserted(v):
    if isinstance(v, str):
        return v.strip().lower() in ("1", "b1")
    return bool(v)


# -- VCD subset ---------------------------------------------------------------

_STATE_CODE = {"0": 0, "1": 1, "x": 2, "X": 2, "z": 3, "Z": 3}


@dataclass
class _VcdVar:
    code: str
    name: str
    width: int


@dataclass
class VcdParse:
    """Declarations and per-cycle samples recovered from a VCD stream."""

    timescale: str = ""
    variables: list = field(default_factory=list)
    # per signal name: (N, width) uint8 state codes sampled at rising edges
    samples: dict = field(default_factory=dict)
    edge_times: list = field(default_factory=list)


def _expand_vector(raw, width, line):
    bits = raw.lower()
    if any(ch not in "01xz" for ch in bits):
        raise FormatError(f"bad vector value b{raw}", line)
    if len(bits) > width:
        raise FormatError(f"vector value b{raw} wider than {width} bits", line)
    fill = bits[0] if bits[0] in "xz" else "0"
    return fill * (width - len(bits)) + bits


def read_vcd_samples(text, clock, period=None):
    """Sample every declared variable just before each 0->1 edge of ``clock``.

    Values changing at the edge timestamp belong to the next cycle, matching a
    flip-flop that captures the settled pre-edge value.
    """
    lines = text.splitlines() if isinstance(text, str) else [ln.rstrip("\n") for ln in text]
    tokens = []  # (token, line number)
    for lineno, ln in enumerate(lines, 1):
        for tok in ln.split():
            tokens.append((tok, lineno))

    result = VcdParse()
    by_code = {}
    scope = []
    pos = 0
    ntok = len(tokens)

    def section(start):
        # tokens up to the matching $end
        out = []
        p = start
        while p < ntok and tokens[p][0] != "$end":
            out.append(tokens[p])
            p += 1
        if p >= ntok:
            raise FormatError("unterminated section", tokens[start - 1][1])
        return out, p + 1

    header_done = False
    while pos < ntok and not header_done:
        tok, line = tokens[pos]
        if tok == "$timescale":
            body, pos = section(pos + 1)
            result.timescale = "".join(t for t, _ in body)
        elif tok == "$scope":
            body, pos = section(pos + 1)
            if len(body) < 2:
                raise FormatError("malformed $scope", line)
            scope.append(body[1][0])
        elif tok == "$upscope":
            _, pos = section(pos + 1)
            if scope:
                scope.pop()
        elif tok == "$var":
            body, pos = section(pos + 1)
            if len(body) < 4:
                raise FormatError("malformed $var", line)
            vtype, size, code, ref = (t for t, _ in body[:4])
            if vtype not in ("wire", "reg"):
                raise FormatError(f"unsupported $var type {vtype!r}", line)
            try:
                width = int(size)
            except ValueError:
                raise FormatError(f"bad $var size {size!r}", line) from None
            if width < 1:
                raise FormatError(f"bad $var size {size!r}", line)
            name = ".".join(scope + [ref])
            if code in by_code:
                # aliased identifier: several names share one value stream
                result.variables.append(_VcdVar(code, name, width))
                continue
            var = _VcdVar(code, name, width)
            by_code[code] = var
            result.variables.append(var)
        elif tok == "$enddefinitions":
            _, pos = section(pos + 1)
            header_done = True
        elif tok.startswith("$"):
            _, pos = section(pos + 1)
        else:
            raise FormatError(f"unexpected token {tok!r} in header", line)
    if not header_done:
        raise FormatError("missing $enddefinitions", tokens[-1][1] if tokens else 1)

    clock_vars = [v for v in result.variables if v.name == clock or v.name.split(".")[-1] == clock]
    if not clock_vars:
        raise ClockError(f"clock {clock!r} is not declared")
    if len(clock_vars) > 1:
        raise ClockError(f"clock name {clock!r} is ambiguous")
    clock_var = clock_vars[0]
    if clock_var.width != 1:
        raise ClockError(f"clock {clock!r} must be a scalar")

    state = {code: ("x" * var.width) for code, var in by_code.items()}
    rows = []
    edge_times = []
    now = None
    pending = {}

    def flush(at_time):
        # apply changes gathered at one timestamp; sample first on a rising edge
        new_clk = pending.get(clock_var.code)
        if new_clk is not None and state[clock_var.code] == "0" and new_clk == "1":
            rows.append(dict(state))
            edge_times.append(at_time)
        state.update(pending)
        pending.clear()

    in_dump = False
    while pos < ntok:
        tok, line = tokens[pos]
        pos += 1
        if tok.startswith("#"):
            try:
                t = int(tok[1:])
            except ValueError:
                raise FormatError(f"bad timestamp {tok!r}", line) from None
            if now is not None and t < now:
                raise FormatError(f"timestamp {t} goes backwards (after {now})", line)
            if now is not None and t != now:
                flush(now)
            now = t
        elif tok in ("$dumpvars", "$dumpall"):
            in_dump = True
        elif tok == "$end":
            if not in_dump:
                raise FormatError("stray $end", line)
            in_dump = False
        elif tok in ("$dumpoff", "$dumpon"):
            raise FormatError(f"{tok} sections are not supported", line)
        elif tok == "$comment":
            while pos < ntok and tokens[pos][0] != "$end":
                pos += 1
            pos += 1
        elif tok[0] in "bB":
            if pos >= ntok:
                raise FormatError("vector value without identifier", line)
            code, _ = tokens[pos]
            pos += 1
            var = by_code.get(code)
            if var is None:
                raise FormatError(f"undeclared identifier {code!r}", line)
            pending[code] = _expand_vector(tok[1:], var.width, line)
        elif tok[0] in "rR":
            raise FormatError("real-valued changes are not supported", line)
        elif tok[0] in _STATE_CODE:
            code = tok[1:]
            var = by_code.get(code)
            if var is None:
                raise FormatError(f"undeclared identifier {code!r}", line)
            pending[code] = tok[0].lower() * var.width if var.width > 1 else tok[0].lower()
        else:
            raise FormatError(f"unexpected token {tok!r}", line)
    if pending:
        flush(now)

    if period is not None and len(edge_times) > 1:
        gaps = set(np.diff(edge_times).tolist())
        if gaps != {int(period)}:
            raise FormatError(f"clock edges are not {period} time units apart (saw {sorted(gaps)})")

    result.edge_times = edge_times
    n = len(rows)
    for var in result.variables:
        code = var.code
        arr = np.empty((n, var.width), dtype=np.uint8)
        for i, row in enumerate(rows):
            arr[i] = [_STATE_CODE[ch] for ch in row[code]]
        result.samples[var.name] = arr
    return result


def parse_vcd_subset(text, clock, period=None, gated_clocks=None, delayed_enable=False,
                     catalog=None):
    """Parse a VCD stream into ``(SignalCatalog, ToggleMatrix)``.

    Scalars become single-bit signals and vectors become buses (collapsed to
    one column) unless ``catalog`` says otherwise.  ``gated_clocks`` maps a
    gated clock net to its enable; such a net's column is the latched enable
    rather than edge detection on the clock itself.  The sampling clock is
    never a candidate signal.
    """
    parsed = read_vcd_samples(text, clock, period)
    gated_clocks = dict(gated_clocks or {})
    names = [v.name for v in parsed.variables]
    widths = {v.name: v.width for v in parsed.variables}
    clock_name = next(v.name for v in parsed.variables
                      if v.name == clock or v.name.split(".")[-1] == clock)

    if catalog is None:
        sigs = []
        for v in parsed.variables:
            if v.name == clock_name:
                continue
            if v.name in gated_clocks:
                sigs.append(Signal(v.name, GATED_CLOCK, enable=gated_clocks[v.name]))
            elif v.width > 1:
                sigs.append(Signal(v.name, BUS, width=v.width))
            else:
                sigs.append(Signal(v.name))
        catalog = SignalCatalog(tuple(sigs))

    n = len(parsed.edge_times)
    cols = []
    for sig in catalog:
        if sig.kind == GATED_CLOCK:
            if sig.enable not in parsed.samples:
                raise FormatError(f"enable {sig.enable!r} of gated clock {sig.name!r} not in waveform")
            en = parsed.samples[sig.enable]
            if en.shape[1] != 1:
                raise FormatError(f"enable {sig.enable!r} must be a scalar")
            cols.append(gated_clock_toggle(en[:, 0] == 1, delayed=delayed_enable))
            continue
        if sig.name not in parsed.samples:
            raise FormatError(f"signal {sig.name!r} not declared in waveform")
        s = parsed.samples[sig.name]
        if sig.kind == BUS and widths[sig.name] != sig.width:
            raise FormatError(f"bus {sig.name!r} declared {widths[sig.name]} bits, catalog says {sig.width}")
        if sig.kind == BIT and s.shape[1] != 1:
            raise FormatError(f"signal {sig.name!r} is a vector; declare it as a bus")
        per_bit = extract_toggles(s).bits
        cols.append(collapse_bus(per_bit) if sig.kind == BUS else per_bit[:, 0])
    bits = np.stack(cols, axis=1) if cols else np.zeros((n, 0), np.uint8)
    return catalog, ToggleMatrix(bits.reshape(n, len(catalog)))


# -- PTRC binary format -------------------------------------------------------
#
#   "PTRC" | u32 version | u64 N | u64 M
#   M x catalog entry: u32 name_len | name utf-8 | u8 kind tag
#                      kind bus:         u32 width
#                      kind gated_clock: u32 enable_len | enable utf-8
#   N x ceil(M/64) u64 words, bit j of cycle i in word j//64, bit j%64
#   optional: "PWRF" | N x f64
#   u32 CRC32 of every preceding byte
# All integers and floats little-endian.

def _pack_rows(bits):
    n, m = bits.shape
    n_words = (m + 63) // 64
    if n == 0 or n_words == 0:
        return b""
    padded = np.zeros((n, n_words * 64), dtype=np.uint8)
    padded[:, :m] = bits
    return np.packbits(padded, axis=1, bitorder="little").tobytes()


def _unpack_rows(payload, n, m):
    n_words = (m + 63) // 64
    if n == 0 or m == 0:
        return np.zeros((n, m), np.uint8)
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(n, n_words * 8)
    bits = np.unpackbits(raw, axis=1, bitorder="little")
    if bits[:, m:].any():
        raise FormatError("nonzero padding bits in toggle payload")
    return np.ascontiguousarray(bits[:, :m])


def encode_trace(catalog, toggles, power=None):
    bits = as_bits(toggles)
    n, m = bits.shape
    if len(catalog) != m:
        raise DataError(f"catalog has {len(catalog)} entries, matrix has {m} columns")
    buf = io.BytesIO()
    buf.write(PTRC_MAGIC)
    buf.write(struct.pack("<IQQ", PTRC_VERSION, n, m))
    for sig in catalog:
        name = sig.name.encode("utf-8")
        buf.write(struct.pack("<I", len(name)))
        buf.write(name)
        buf.write(struct.pack("<B", _KIND_TAGS[sig.kind]))
        if sig.kind == BUS:
            buf.write(struct.pack("<I", sig.width))
        elif sig.kind == GATED_CLOCK:
            en = sig.enable.encode("utf-8")
            buf.write(struct.pack("<I", len(en)))
            buf.write(en)
    buf.write(_pack_rows(bits))
    if power is not None:
        values = as_values(power)
        if values.shape[0] != n:
            raise DataError(f"power trace has {values.shape[0]} values for {n} cycles")
        buf.write(POWER_TAG)
        buf.write(values.astype("<f8").tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, k, what):
        if self.pos + k > len(self.data):
            raise FormatError(f"truncated file while reading {what}")
        out = self.data[self.pos:self.pos + k]
        self.pos += k
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_trace(data):
    """Inverse of :func:`encode_trace`; returns ``(catalog, toggles, power or None)``."""
    data = bytes(data)
    if len(data) < 4 or data[:4] != PTRC_MAGIC:
        raise FormatError("bad magic: not a PTRC trace")
    if len(data) < 4 + 20 + 4:
        raise FormatError("truncated file header")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise FormatError("CRC32 mismatch")
    r = _Reader(body)
    r.take(4, "magic")
    version, n, m = r.unpack("<IQQ", "header")
    if version != PTRC_VERSION:
        raise FormatError(f"unsupported PTRC version {version}")
    sigs = []
    for _ in range(m):
        (ln,) = r.unpack("<I", "name length")
        try:
            name = r.take(ln, "name").decode("utf-8")
            (tag,) = r.unpack("<B", "kind tag")
            if tag not in _TAG_KINDS:
                raise FormatError(f"unknown kind tag {tag}")
            kind = _TAG_KINDS[tag]
            if kind == BUS:
                (width,) = r.unpack("<I", "bus width")
                sigs.append(Signal(name, BUS, width=width))
            elif kind == GATED_CLOCK:
                (el,) = r.unpack("<I", "enable length")
                sigs.append(Signal(name, GATED_CLOCK, enable=r.take(el, "enable").decode("utf-8")))
            else:
                sigs.append(Signal(name))
        except (UnicodeDecodeError, ParameterError) as exc:
            raise FormatError(f"bad catalog entry: {exc}") from None
    try:
        catalog = SignalCatalog(tuple(sigs))
    except ParameterError as exc:
        raise FormatError(str(exc)) from None
    n_words = (m + 63) // 64
    payload = r.take(n * n_words * 8, "toggle payload")
    bits = _unpack_rows(payload, n, m)
    power = None
    rest = len(body) - r.pos
    if rest:
        if r.take(4, "section tag") != POWER_TAG:
            raise FormatError("unknown trailing section")
        power = PowerTrace(np.frombuffer(r.take(8 * n, "power values"), dtype="<f8").astype(np.float64))
        if r.pos != len(body):
            raise FormatError("trailing bytes after power section")
    return catalog, ToggleMatrix(bits), power


def write_trace(path, catalog, toggles, power=None):
    data = encode_trace(catalog, toggles, power)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def read_trace(path):
    with open(path, "rb") as fh:
        return decode_trace(fh.read())


def write_csv(path_or_file, catalog, toggles):
    """Debug export: header of signal names, one 0/1 row per cycle."""
    bits = as_bits(toggles)
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh)
        w.writerow(catalog.names)
        w.writerows(bits.tolist())
    finally:
        if own:
            fh.close()
