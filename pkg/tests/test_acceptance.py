"""Acceptance suite.  Each test prints one PASS/FAIL line for its criterion;
the lines are repeated in the terminal summary."""
import math
import os
import time

import numpy as np
import pytest

import oracles
from powerproxy import cli, metrics, opm, trace
from powerproxy.model import (PowerModel, evaluate, predict_per_cycle, predict_window, train,
                              window_labels)
from powerproxy.solver import FitConfig, fit_penalized, gram_stats, prox_lasso, prox_mcp
from powerproxy.syngen import default_profile, gen_design, gen_power_labels, gen_workload

M, K, CLUSTERS, N = 2000, 50, 100, 10_000


def make_case(seed, test_seed=None):
    test_seed = 200 + seed if test_seed is None else test_seed
    d = gen_design(M, K, CLUSTERS, seed=seed, rho=0.6)
    tm = gen_workload(d, default_profile(N, seed=100 + seed))
    y = gen_power_labels(d, tm, seed=100 + seed)
    te = gen_workload(d, default_profile(N, seed=test_seed))
    yt = gen_power_labels(d, te, seed=test_seed)
    return d, tm, y, te, yt


@pytest.fixture(scope="module")
def fixture():
    t0 = time.perf_counter()
    # design 1, training workload 101, held-out workload 202
    d, tm, y, te, yt = make_case(1, test_seed=202)
    model, ps = train(tm, y, K)
    evaluate(model, te, yt, windows=(1, 16))
    qm = opm.quantize(model, 10)
    opm.simulate_opm(qm, opm.opm_inputs(qm, te), 16)
    elapsed = time.perf_counter() - t0
    return dict(design=d, tm=tm, y=y, te=te, yt=yt, model=model, ps=ps, elapsed=elapsed)


def test_c01_support_recovery(fixture, criterion):
    with criterion(1, "MCP support recovery >= 90% and pipeline < 60 s") as c:
        truth = set(fixture["design"].support.tolist())
        got = set(fixture["ps"].indices.tolist())
        frac = len(truth & got) / len(truth)
        c.detail = f"recovered {frac:.2%}, runtime {fixture['elapsed']:.1f} s"
        assert frac >= 0.9
        assert fixture["elapsed"] < 60


def test_c02_mcp_beats_lasso(criterion):
    with criterion(2, "relaxed MCP beats relaxed Lasso over 10 trials, Q in {25,50,100}") as c:
        wins = {q: [0, 0, 0] for q in (25, 50, 100)}
        for s in range(1, 11):
            _, tm, y, te, yt = make_case(s)
            for q in wins:
                r = {}
                for pen in ("mcp", "lasso"):
                    m, _ = train(tm, y, q, penalty=pen)
                    cols = tm.bits[:, m.proxy_indices].astype(np.float64)
                    r[pen] = (metrics.nrmse(yt, predict_per_cycle(m, te)), metrics.weight_mass(m),
                              metrics.vif_summary(cols)["mean"])
                wins[q][0] += r["mcp"][0] < r["lasso"][0]
                wins[q][1] += r["mcp"][1] >= r["lasso"][1]
                wins[q][2] += r["mcp"][2] <= r["lasso"][2]
        c.detail = " ".join(f"Q={q}: nrmse {a}/10 mass {b}/10 vif {v}/10" for q, (a, b, v) in wins.items())
        for a, b, v in wins.values():
            assert a >= 9 and b >= 9 and v >= 9


def test_c03_computation_orders(criterion):
    with criterion(3, "aggregate-first equals predict-first to 1e-12 on 1000 cases") as c:
        r = np.random.default_rng(3)
        worst = 0.0
        for _ in range(1000):
            T = 1 << int(r.integers(0, 7))
            m_sig = int(r.integers(2, 40))
            q = int(r.integers(1, m_sig + 1))
            bits = (r.random((T * int(r.integers(1, 9)) + int(r.integers(0, T)), m_sig))
                    < r.uniform(0.02, 0.98)).astype(np.uint8)
            model = PowerModel(np.sort(r.choice(m_sig, q, replace=False)), r.uniform(0, 10, q),
                               tau=int(r.choice([1, 2, 4, 8, 16])))
            a = predict_window(model, bits, T, "predict_first").values
            b = predict_window(model, bits, T, "aggregate_first").values
            nz = np.abs(a) > 0
            assert np.array_equal(a[~nz], b[~nz])
            if nz.any():
                worst = max(worst, float(np.max(np.abs(a[nz] - b[nz]) / np.abs(a[nz]))))
        c.detail = f"worst relative gap {worst:.2e}"
        assert worst <= 1e-12


def test_c04_prox_oracle(criterion):
    with criterion(4, "prox operators match 1-D minimization to 1e-8 on 1e4 triples") as c:
        r = np.random.default_rng(4)
        worst, nonconvex = 0.0, 0
        for i in range(10_000):
            z = float(r.uniform(-6, 6))
            lam = float(10 ** r.uniform(-2, 0.5))
            s = float(10 ** r.uniform(-1.5, 1))
            nonneg = bool(r.random() < 0.3)
            if i % 2:
                got = prox_lasso(z, lam, s, nonneg)
                want = oracles.prox_oracle("lasso", z, lam, 2.0, s, nonneg)
            else:
                gamma = float(1 + 10 ** r.uniform(-1, 1.3))
                nonconvex += s * gamma <= 1
                got = prox_mcp(z, lam, gamma, s, nonneg)
                want = oracles.prox_oracle("mcp", z, lam, gamma, s, nonneg)
            worst = max(worst, abs(got - want))
        gap = 0.0
        for _ in range(2000):
            z, lam, s = float(r.uniform(-6, 6)), float(10 ** r.uniform(-2, 0.5)), float(10 ** r.uniform(-1, 1))
            gap = max(gap, abs(prox_mcp(z, lam, 1e9, s) - prox_lasso(z, lam, s)))
        c.detail = f"worst {worst:.1e}, {nonconvex} non-convex draws, gamma=1e9 gap {gap:.1e}"
        assert nonconvex >= 100
        assert worst <= 1e-8 and gap <= 1e-6


def test_c05_monotone_objective(fixture, criterion):
    with criterion(5, "CD objective non-increasing, converges within 200 sweeps") as c:
        fit = fixture["ps"].search.fit
        tm, y = fixture["tm"], fixture["y"]
        kept = fixture["ps"].screen.kept
        full = fit_penalized(gram_stats(tm.bits[:, kept], y), penalty="mcp",
                             cfg=FitConfig(lam=fixture["ps"].lam))
        tr = full.objective_trace
        rises = np.diff(tr) > 1e-12 * np.maximum(1.0, np.abs(tr[:-1]))
        c.detail = f"{full.n_iter} sweeps from cold start, {int(rises.sum())} rises"
        assert not rises.any()
        assert fit.converged and full.converged and full.n_iter <= 200


def test_c06_opm_bit_exact(criterion):
    with criterion(6, "OPM equals integer reference on 1e5 instances, no overflow") as c:
        r = np.random.default_rng(6)
        for _ in range(100_000):
            Q = int(np.exp(r.uniform(0, math.log(256.999))))
            B = int(r.integers(1, 17))
            T = 1 << int(r.integers(0, 7))
            n = T * int(r.integers(0, 3)) + int(r.integers(0, T))
            qw = r.integers(0, 1 << B, Q)
            qw[int(r.integers(Q))] = (1 << B) - 1
            bits = (r.random((n, Q)) < r.uniform(0, 1)).astype(np.uint8)
            if r.random() < 0.05:
                bits[:] = 1
            qm = opm.QuantizedModel(qw, B, 1.0)
            out = opm.simulate_opm(qm, bits, T)   # raises InvariantViolation on overflow
            assert out.raw.tolist() == oracles.opm_reference(qw.tolist(), bits.tolist(), T)
        c.detail = "100000 instances"


def test_c07_quantization_fidelity(fixture, criterion):
    with criterion(7, "B=10 adds < 0.1 pp NRMSE at T=16; degradation non-increasing in B") as c:
        model, te, yt = fixture["model"], fixture["te"], fixture["yt"]
        yw = window_labels(yt.values, 16)
        base = metrics.nrmse(yw, predict_window(model, te, 16).values)
        deg = {}
        for B in (4, 6, 8, 10, 12, 16):
            qm = opm.quantize(model, B)
            out = opm.simulate_opm(qm, opm.opm_inputs(qm, te), 16)
            deg[B] = metrics.nrmse(yw, opm.dequantize_output(out, qm.scale, 16)) - base
        c.detail = " ".join(f"B{b}:{v * 100:+.2e}pp" for b, v in deg.items())
        assert deg[10] * 100 < 0.1
        seq = list(deg.values())
        assert all(b <= a for a, b in zip(seq, seq[1:]))


def test_c08_delta_current(fixture, criterion):
    with criterion(8, "per-cycle delta-I Pearson >= 0.9") as c:
        pred = predict_per_cycle(fixture["model"], fixture["te"])
        rep = metrics.delta_report(fixture["yt"], pred)
        c.detail = f"r = {rep['pearson_r']:.4f}"
        assert rep["pearson_r"] >= 0.9


def test_c09_unbiased(fixture, criterion):
    with criterion(9, "held-out mean bias <= 2%") as c:
        worst = 0.0
        for seed in (202, 303, 404):
            te = gen_workload(fixture["design"], default_profile(N, seed=seed))
            yt = gen_power_labels(fixture["design"], te, seed=seed).values
            p = predict_per_cycle(fixture["model"], te)
            worst = max(worst, abs(p.mean() - yt.mean()) / yt.mean())
        c.detail = f"worst bias {worst:.3%}"
        assert worst <= 0.02


def test_c10_roundtrips(fixture, criterion, data_dir, tmp_path):
    with criterion(10, "PTRC/VCD round-trips byte-exact; CLI replay byte-identical") as c:
        d, tm, y = fixture["design"], fixture["tm"], fixture["y"]
        blob = trace.encode_trace(d.catalog(), tm, y)
        cat2, tm2, y2 = trace.decode_trace(blob)
        assert tm2 == tm and y2 == y and trace.encode_trace(cat2, tm2, y2) == blob
        with open(os.path.join(data_dir, "minimal.vcd")) as fh:
            vcat, vtm = trace.parse_vcd_subset(fh.read(), "clk")
        vblob = trace.encode_trace(vcat, vtm)
        vcat2, vtm2, _ = trace.decode_trace(vblob)
        assert vtm2 == vtm and vcat2.names == vcat.names and trace.encode_trace(vcat2, vtm2) == vblob
        small = ["--signals", "200", "--true-proxies", "10", "--clusters", "40", "--cycles", "3000"]
        s, t = tmp_path / "synth", tmp_path / "train"
        assert cli.main(["synth", "--out", str(s), "--seed", "11", *small]) == 0
        assert cli.main(["train", "--out", str(t), "--trace", str(s / "trace.ptrc"),
                         "--target-q", "10"]) == 0
        for step in (s, t):
            again = tmp_path / (step.name + "_replay")
            assert cli.main(["replay", str(step / "manifest.json"), "--out", str(again)]) == 0
            for name in sorted(os.listdir(step)):
                assert (again / name).read_bytes() == (step / name).read_bytes(), name
        c.detail = f"PTRC {len(blob)} bytes, VCD {vtm.n_cycles}x{vtm.n_signals}, 2 replays"
