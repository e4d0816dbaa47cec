"""Command-line entry point: ``powerproxy <subcommand> [options]``.

Every subcommand writes its outputs plus a ``manifest.json`` recording the
resolved configuration, input hashes and the toolkit version.  Feeding a
manifest back through ``powerproxy replay`` reproduces the outputs
byte-for-byte.

Exit codes: 0 success, 2 usage or parameter error, 3 data error,
4 internal invariant violation.
"""
import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, metrics, model, opm, solver, syngen, trace
from .errors import DataError, ParameterError, PowerProxyError

log = logging.getLogger("powerproxy")


@dataclass
class RunConfig:
    seed: int = 1
    # synth
    n_signals: int = 2000
    n_true: int = 50
    n_clusters: int = 100
    rho: float = 0.6
    n_cycles: int = 10000
    n_phases: int = 8
    noise_fraction: float = 0.02
    # extract
    clock: str = "clk"
    period: int = None
    gated: dict = field(default_factory=dict)
    delayed_enable: bool = False
    csv: bool = False
    # train / eval / opm
    target_q: int = 50
    gamma: float = 10.0
    tau: int = 1
    slack: int = 0
    penalty: str = solver.MCP
    val_fraction: float = 0.2
    max_iter: int = 200
    tol: float = 1e-6
    windows: list = field(default_factory=lambda: [1, 16])
    bits: int = 10
    jobs: int = 1
    predictions: bool = False

    def validate(self):
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must fit in 64 unsigned bits")
        if self.target_q < 1:
            raise ParameterError("target Q must be >= 1")
        if self.gamma <= 1:
            raise ParameterError("gamma must be > 1")
        if self.tau < 1:
            raise ParameterError("tau must be >= 1")
        if self.penalty not in (solver.MCP, solver.LASSO):
            raise ParameterError(f"penalty must be mcp or lasso, got {self.penalty!r}")
        for T in self.windows:
            model.check_window(T)
        if self.bits < 1:
            raise ParameterError("bits must be >= 1")
        if self.jobs < 1:
            raise ParameterError("jobs must be >= 1")
        return self


# flag name -> RunConfig field; only flags the user actually passes override
_FLAG_FIELDS = {
    "seed": "seed", "signals": "n_signals", "true_proxies": "n_true", "clusters": "n_clusters",
    "rho": "rho", "cycles": "n_cycles", "phases": "n_phases", "noise_fraction": "noise_fraction",
    "clock": "clock", "period": "period", "delayed_enable": "delayed_enable",
    "target_q": "target_q", "gamma": "gamma", "tau": "tau", "slack": "slack", "penalty": "penalty",
    "val_fraction": "val_fraction", "max_iter": "max_iter", "tol": "tol", "window": "windows",
    "bits": "bits", "jobs": "jobs", "csv": "csv", "predictions": "predictions",
}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


class Run:
    """Collects outputs of one subcommand and writes the manifest last."""

    def __init__(self, command, cfg, out_dir, inputs):
        self.command = command
        self.cfg = cfg
        self.out = Path(out_dir)
        self.inputs = {k: str(v) for k, v in inputs.items() if v is not None}
        self.outputs = {}

    def write(self, name, data):
        _atomic_write(self.out / name, data)
        self.outputs[name] = _sha256(self.out / name)

    def finish(self):
        manifest = {
            "tool": "powerproxy",
            "version": __version__,
            "command": self.command,
            "config": dataclasses.asdict(self.cfg),
            "inputs": {k: {"path": v, "sha256": _sha256(v)} for k, v in sorted(self.inputs.items())},
            "outputs": dict(sorted(self.outputs.items())),
        }
        _atomic_write(self.out / "manifest.json", _dump(manifest))
        return manifest


def _load_trace(path, need_power=False):
    catalog, toggles, power = trace.read_trace(path)
    if need_power and power is None:
        raise DataError(f"{path} has no power section")
    return catalog, toggles, power


def _load_values(path):
    """Power values from a PTRC power section, .npy, or one number per line."""
    p = Path(path)
    with open(p, "rb") as fh:
        head = fh.read(4)
    if head == trace.PTRC_MAGIC:
        _, _, power = _load_trace(p, need_power=True)
        return power.values
    if p.suffix == ".npy":
        return np.load(p).astype(np.float64).reshape(-1)
    vals = []
    for ln in p.read_text().splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        try:
            vals.append(float(ln.split(",")[-1]))
        except ValueError:
            if vals:
                raise DataError(f"bad value line {ln!r} in {path}") from None
    return np.asarray(vals)


def _model_from(path):
    return model.PowerModel.from_json(Path(path).read_text())


# -- subcommands ----------------------------------------------------------------

def cmd_synth(cfg, args):
    design = syngen.gen_design(cfg.n_signals, cfg.n_true, cfg.n_clusters, cfg.seed, rho=cfg.rho,
                               noise_fraction=cfg.noise_fraction)
    profile = syngen.default_profile(cfg.n_cycles, cfg.seed, n_phases=cfg.n_phases)
    toggles = syngen.gen_workload(design, profile)
    labels = syngen.gen_power_labels(design, toggles, True, seed=cfg.seed)
    run = Run("synth", cfg, args.out, {})
    run.write("trace.ptrc", trace.encode_trace(design.catalog(), toggles, labels))
    run.write("design.json", design.to_json())
    run.finish()
    return 0


def cmd_extract(cfg, args):
    with open(args.vcd) as fh:
        text = fh.read()
    catalog, toggles = trace.parse_vcd_subset(text, cfg.clock, cfg.period, gated_clocks=cfg.gated,
                                              delayed_enable=cfg.delayed_enable)
    power = None
    if args.labels:
        power = trace.PowerTrace(_load_values(args.labels))
    run = Run("extract", cfg, args.out, {"vcd": args.vcd, "labels": args.labels})
    run.write("trace.ptrc", trace.encode_trace(catalog, toggles, power))
    if cfg.csv:
        import io
        buf = io.StringIO()
        trace.write_csv(buf, catalog, toggles)
        run.write("toggles.csv", buf.getvalue())
    run.finish()
    return 0


def _metrics_block(m, toggles, labels, windows, jobs):
    def one(T):
        return T, model.evaluate(m, toggles, labels, [T])[T].to_dict()
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = dict(pool.map(one, windows))
    return {str(T): results[T] for T in windows}


def cmd_train(cfg, args):
    catalog, toggles, power = _load_trace(args.trace, need_power=args.labels is None)
    labels = _load_values(args.labels) if args.labels else power.values
    if labels.shape[0] != toggles.n_cycles:
        raise DataError(f"{labels.shape[0]} labels for {toggles.n_cycles} cycles")
    usable = model.screen_signals(toggles).kept.size
    if cfg.target_q > usable:
        raise ParameterError(f"target Q {cfg.target_q} exceeds the {usable} usable signals")
    m, ps = model.train_validated(toggles, labels, cfg.target_q, gammas=(cfg.gamma,),
                                  val_fraction=cfg.val_fraction, tau=cfg.tau, slack=cfg.slack,
                                  penalty=cfg.penalty, max_iter=cfg.max_iter, tol=cfg.tol,
                                  proxy_names=catalog.names)
    report = {
        "q": m.q,
        "lambda": ps.lam,
        "target_hit": bool(ps.search.hit),
        "probes": [[lam, n] for lam, n in ps.search.probes],
        "train": _metrics_block(m, toggles, labels, cfg.windows, cfg.jobs),
        "weight_mass": metrics.weight_mass(m),
    }
    if m.q >= 2:
        report["vif"] = metrics.vif_summary(toggles.bits[:, m.proxy_indices])
    if args.design:
        design = syngen.SyntheticDesign.from_json(Path(args.design).read_text())
        true = set(design.support.tolist())
        hit = len(true & set(m.proxy_indices.tolist()))
        report["support_recovery"] = {"true": len(true), "recovered": hit,
                                      "fraction": hit / len(true) if true else 1.0}
    run = Run("train", cfg, args.out, {"trace": args.trace, "labels": args.labels, "design": args.design})
    run.write("model.json", m.to_json())
    run.write("train_report.json", _dump(report))
    run.finish()
    return 0


def cmd_eval(cfg, args):
    m = _model_from(args.model)
    _, toggles, power = _load_trace(args.trace, need_power=args.labels is None)
    labels = _load_values(args.labels) if args.labels else power.values
    block = _metrics_block(m, toggles, labels, cfg.windows, cfg.jobs)
    rows = [dict(T=int(T), **{k: v for k, v in r.items() if k != "n_points"}) for T, r in block.items()]
    run = Run("eval", cfg, args.out, {"model": args.model, "trace": args.trace, "labels": args.labels})
    run.write("metrics.json", _dump(block))
    run.write("metrics.txt", metrics.format_table(rows, ["T", "nrmse", "nmae", "r2", "pearson_r", "mean_bias"]))
    if cfg.predictions:
        p = model.predict_per_cycle(m, toggles)
        run.write("predictions.csv", "cycle,power\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(p.tolist())))
    run.finish()
    return 0


def cmd_quantize(cfg, args):
    m = _model_from(args.model)
    qm = opm.quantize(m, cfg.bits)
    T = cfg.windows[-1]
    run = Run("quantize", cfg, args.out, {"model": args.model})
    run.write("opm.json", qm.to_json(T))
    run.finish()
    return 0


def cmd_opm_sim(cfg, args):
    spec = json.loads(Path(args.opm).read_text())
    qm = opm.QuantizedModel.from_dict(spec)
    _, toggles, power = _load_trace(args.trace)
    inputs = opm.opm_inputs(qm, toggles)
    run = Run("opm-sim", cfg, args.out, {"opm": args.opm, "trace": args.trace})
    summary = {}
    for T in cfg.windows:
        out = opm.simulate_opm(qm, inputs, T)
        lines = ["window,first_cycle,raw,power\n"]
        deq = opm.dequantize_output(out, qm.scale, T)
        lines += [f"{k},{k * T},{r},{v!r}\n" for k, (r, v) in enumerate(zip(out.raw.tolist(), deq.tolist()))]
        run.write(f"opm_T{T}.csv", "".join(lines))
        entry = {"windows": int(out.raw.size), "dropped_cycles": out.dropped_cycles,
                 "latency_cycles": out.latency_cycles, "error_bound": opm.error_bound(qm, T)}
        if power is not None and out.raw.size:
            entry["metrics"] = metrics.report(model.window_labels(power, T), deq).to_dict()
        summary[str(T)] = entry
    run.write("opm_summary.json", _dump(summary))
    run.finish()
    return 0


def cmd_report(cfg, args):
    truth = _load_values(args.truth)
    if args.pred:
        pred = _load_values(args.pred)
    elif args.model and args.trace:
        _, toggles, _ = _load_trace(args.trace)
        pred = model.predict_per_cycle(_model_from(args.model), toggles)
    else:
        raise ParameterError("report needs --pred, or --model with --trace")
    if pred.shape != truth.shape:
        raise DataError(f"prediction ({pred.size}) and truth ({truth.size}) lengths differ")
    out = {
        "delta_current": metrics.delta_report(truth, pred),
        "per_cycle": metrics.report(truth, pred).to_dict(),
    }
    run = Run("report", cfg, args.out, {"truth": args.truth, "pred": args.pred, "model": args.model,
                                        "trace": args.trace})
    run.write("report.json", _dump(out))
    run.finish()
    return 0


def cmd_replay(cfg, args):
    manifest = json.loads(Path(args.manifest).read_text())
    command = manifest["command"]
    argv = [command, "--config", args.manifest, "--out", args.out]
    for key, meta in manifest.get("inputs", {}).items():
        argv += [f"--{key}", meta["path"]]
    return main(argv)


_COMMANDS = {
    "synth": cmd_synth, "extract": cmd_extract, "train": cmd_train, "eval": cmd_eval,
    "quantize": cmd_quantize, "opm-sim": cmd_opm_sim, "report": cmd_report, "replay": cmd_replay,
}


def _common(p):
    p.add_argument("--config", help="JSON config (or a manifest); explicit flags win")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--target-q", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tau", type=int)
    p.add_argument("--window", type=int, action="append", help="window size T (repeatable)")
    p.add_argument("--bits", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="powerproxy", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic design, workload and labels")
    _common(p)
    p.add_argument("--signals", type=int)
    p.add_argument("--true-proxies", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--cycles", type=int)
    p.add_argument("--phases", type=int)
    p.add_argument("--noise-fraction", type=float)

    p = sub.add_parser("extract", help="VCD -> PTRC toggle trace")
    _common(p)
    p.add_argument("--vcd", required=True)
    p.add_argument("--clock")
    p.add_argument("--period", type=int)
    p.add_argument("--gated", action="append", default=[], metavar="CLOCK=ENABLE")
    p.add_argument("--delayed-enable", action="store_true", default=None)
    p.add_argument("--labels", help="per-cycle power values to attach")
    p.add_argument("--csv", action="store_true", default=None, help="also write toggles.csv")

    p = sub.add_parser("train", help="select proxies and fit a power model")
    _common(p)
    p.add_argument("--trace", required=True)
    p.add_argument("--labels")
    p.add_argument("--design", help="design JSON; adds a support recovery report")
    p.add_argument("--slack", type=int)
    p.add_argument("--penalty", choices=[solver.MCP, solver.LASSO])
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("eval", help="accuracy metrics of a model on a trace")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--labels")
    p.add_argument("--predictions", action="store_true", default=None,
                   help="also write per-cycle predictions")

    p = sub.add_parser("quantize", help="B-bit fixed-point power meter configuration")
    _common(p)
    p.add_argument("--model", required=True)

    p = sub.add_parser("opm-sim", help="bit-exact power meter simulation")
    _common(p)
    p.add_argument("--opm", required=True)
    p.add_argument("--trace", required=True)

    p = sub.add_parser("report", help="per-cycle current-step (delta-I) analysis")
    _common(p)
    p.add_argument("--truth", required=True)
    p.add_argument("--pred")
    p.add_argument("--model")
    p.add_argument("--trace")

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    return parser


def resolve_config(args):
    cfg = RunConfig()
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
        if "config" in data and "command" in data:
            data = data["config"]
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        cfg = dataclasses.replace(cfg, **data)
    overrides = {}
    for flag, fname in _FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            overrides[fname] = v
    if getattr(args, "gated", None):
        gated = {}
        for item in args.gated:
            clock, sep, enable = item.partition("=")
            if not sep or not clock or not enable:
                raise ParameterError(f"--gated expects CLOCK=ENABLE, got {item!r}")
            gated[clock] = enable
        overrides["gated"] = gated
    cfg = dataclasses.replace(cfg, **overrides)
    cfg.windows = [int(T) for T in cfg.windows]
    return cfg.validate()


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig() if args.command == "replay" else resolve_config(args)
        return _COMMANDS[args.command](cfg, args)
    except PowerProxyError as exc:
        print(f"powerproxy {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"powerproxy {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
