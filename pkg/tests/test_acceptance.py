"""Acceptance criteria 1-11.

Each ``run_cN(out)`` performs one criterion, writes its CSV evidence under
``out`` and returns ``(passed, summary)``. The tests call them once and
record a PASS/FAIL line; criterion 11 re-executes every run into a fresh
directory and compares all CSV files byte for byte.

Run alone with ``pytest tests/test_acceptance.py -v``; the per-criterion
lines are printed in the terminal summary (and live with ``-s``).
"""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
import pytest

import oracle
from dcreg import bench, io
from dcreg import stargeom as sg
from dcreg.icnn import DcRegularizer, dc_eval_batch, estimate_smoothness, icnn_eval_batch, init_icnn
from dcreg.linops import dense_op, identity_op
from dcreg.solve import (L1Norm, L2Norm, Objective, SolverConfig, Zero, check_dca_rate, check_monotone,
                         check_psm_rates, check_sufficient_decrease, solve)
from dcreg.train import SampleSource, TrainConfig, train

RESULTS: dict[int, str] = {}
_CACHE: dict = {}

BUDGET_S = {1: 30, 2: 30, 3: 120, 4: 120, 5: 1, 6: 60, 7: 180, 8: 600, 9: 1800, 10: 1200}


def _record(n, passed, summary, elapsed=None):
    budget = BUDGET_S.get(n)
    timing = ""
    if elapsed is not None:
        timing = f" [{elapsed:.1f}s / budget {budget}s]"
        passed = passed and elapsed <= budget
    line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {summary}{timing}"
    RESULTS[n] = line
    print(line)
    return passed


def _timed(fn, out):
    t0 = time.perf_counter()
    ok, summary = fn(out)
    return ok, summary, time.perf_counter() - t0


# --------------------------------------------------------------------------
# 1, 2: convexity suites

def _trained_icnns():
    data = bench.gen_spiral(1000, 1.0, 0)
    nets = []
    for seed in range(5):
        r = DcRegularizer(init_icnn(2, [32, 32], "softplus", 1.0, seed), mode="convex")
        r, _ = train(r, SampleSource(data.clean, data.noisy), TrainConfig(lr=3e-3, batch_size=100, epochs=5,
                                                                           seed=seed))
        nets.append(r.r1)
    return nets


def run_c1(out):
    rows = []
    acts = [("leaky_relu", 0.2), ("softplus", 1.0), ("relu", 0.0), ("softplus", 10.0)]
    for k in range(20):
        act, prm = acts[k % 4]
        p = init_icnn(2, [16, 16, 16][: 1 + k % 3], act, prm, 1000 + k)
        rep = sg.jensen_check(lambda X, p=p: icnn_eval_batch(p, X), triples=10_000, seed=k, tol=1e-9)
        rows.append([f"random-{k}", act, rep.value, rep.detail["violations"]])
    for k, p in enumerate(_trained_icnns()):
        rep = sg.jensen_check(lambda X, p=p: icnn_eval_batch(p, X), triples=10_000, seed=100 + k, tol=1e-9)
        rows.append([f"trained-{k}", p.activation, rep.value, rep.detail["violations"]])
    io.write_csv(out / "c1-jensen.csv", ["network", "activation", "worst-violation", "violations"], rows)
    bad = sum(r[3] > 0 for r in rows)
    return bad == 0, f"{len(rows) - bad}/{len(rows)} networks convex, worst {max(r[2] for r in rows):.2e}"


def run_c2(out):
    rows = []
    for k in range(10):
        rho = 0.1 * (k + 1)
        r = DcRegularizer(init_icnn(2, [16, 16], ("softplus", "leaky_relu")[k % 2], (1.0, 0.2)[k % 2], 2000 + k),
                          mode="weakly_convex", rho=rho)
        f = lambda X, r=r, rho=rho: dc_eval_batch(r, X) + 0.5 * rho * np.einsum("ij,ij->i", X, X)  # noqa: E731
        rep = sg.jensen_check(f, triples=10_000, seed=k, tol=1e-9)
        rows.append([k, rho, rep.value, rep.detail["violations"]])
    io.write_csv(out / "c2-weakly-convex.csv", ["regularizer", "rho", "worst-violation", "violations"], rows)
    bad = sum(r[3] > 0 for r in rows)
    return bad == 0, f"{10 - bad}/10 shifted regularizers convex"


# --------------------------------------------------------------------------
# 3, 4: DCA and PSM certificates

HORIZON = 200


def _certificate_objective(seed, d=16):
    rng = np.random.default_rng(seed)
    A = dense_op(np.eye(d) + 0.3 * rng.standard_normal((d, d)) / 4)
    y = rng.standard_normal(d)
    reg = DcRegularizer(init_icnn(d, [32, 32], "softplus", 1.0, 100 + seed),
                        init_icnn(d, [32, 32], "softplus", 1.0, 200 + seed))
    # these constants only set inner step sizes; certificates use box_smoothness
    L1 = estimate_smoothness(reg.r1, (-3, 3), 2000, seed).L_hat
    L2 = estimate_smoothness(reg.r2, (-3, 3), 2000, seed).L_hat
    return A, y, reg, Objective.from_regularizer(A, y, reg, 1.0, L1, L2)


def _box_smoothness(p, iterates, seed):
    # estimate over a box that contains every iterate and segment between them
    X = np.array(iterates)
    box = (X.min(0) - 0.5, X.max(0) + 0.5)
    return estimate_smoothness(p, box, 2000, seed).L_hat


def _trace_rows(tr):
    return list(tr.rows(False))


def run_c3(out):
    rows, ok = [], True
    for seed in range(5):
        A, y, reg, obj = _certificate_objective(seed)
        # a trace x_0..x_{T+1} realises the bound at horizon T
        tr = solve(obj, SolverConfig("dca", T=HORIZON + 1, inner="exact", x0_policy="zeros",
                                     store_iterates=True, timing=False))
        L1 = _box_smoothness(reg.r1, tr.iterates, seed)
        rate = check_dca_rate(tr, L1, obj.A_norm)
        mono = check_monotone(tr, rtol=1e-12)
        io.write_csv(out / f"c3-trace-{seed}.csv", tr.header(False), _trace_rows(tr))
        rows.append([seed, L1, obj.A_norm, rate.lhs, rate.rhs, mono.lhs])
        ok &= rate.passed and mono.passed
    io.write_csv(out / "c3-dca.csv", ["objective", "L1-hat", "A-norm", "lhs", "rhs", "worst-increase"], rows)
    worst = max(r[3] / r[4] for r in rows)
    return ok, f"5 objectives, DCA rate lhs/rhs <= {worst:.3f}, monotone"


def run_c4(out):
    rows, ok = [], True
    for seed in range(5):
        A, y, reg, obj = _certificate_objective(seed)
        tr = solve(obj, SolverConfig("psm", T=HORIZON + 1, alpha="auto", inner="exact", inner_tol=1e-10,
                                     x0_policy="zeros", store_iterates=True, timing=False))
        L2 = _box_smoothness(reg.r2, tr.iterates, seed)
        dec = check_sufficient_decrease(tr, tr.alpha, atol=1e-8)
        step, grad = check_psm_rates(tr, L2, obj.A_norm, tr.alpha)
        io.write_csv(out / f"c4-trace-{seed}.csv", tr.header(False), _trace_rows(tr))
        rows.append([seed, tr.alpha, L2, dec.lhs, step.lhs, step.rhs, grad.lhs, grad.rhs])
        ok &= dec.passed and step.passed and grad.passed
    io.write_csv(out / "c4-psm.csv", ["objective", "alpha", "L2-hat", "worst-decrease-deficit", "step-lhs",
                                      "step-rhs", "grad-lhs", "grad-rhs"], rows)
    return ok, (f"5 objectives, step-rate lhs/rhs <= {max(r[4] / r[5] for r in rows):.3f}, "
                f"grad-rate lhs/rhs <= {max(r[6] / r[7] for r in rows):.3f}, sufficient decrease holds")


# --------------------------------------------------------------------------
# 5, 6: hand-crafted regularizers

def run_c5(out):
    rng = np.random.default_rng(11)
    A = rng.standard_normal((8, 5))
    y = rng.standard_normal(8)
    lam, x0 = 0.4, rng.standard_normal(5)
    alpha = 1.0 / oracle.spectral_norm(A) ** 2
    tr = solve(Objective(dense_op(A), y, L1Norm(), Zero(), lam),
               SolverConfig("psm", T=100, alpha=alpha, x0_policy="custom", x0=x0, store_iterates=True,
                            timing=False))
    ref = oracle.ista(A, y, lam, alpha, x0, 100)
    err = [float(np.abs(a - b).max()) for a, b in zip(tr.iterates, ref)]
    io.write_csv(out / "c5-ista.csv", ["t", "max-abs-error"], enumerate(err))
    return max(err) <= 1e-8, f"max per-iterate deviation from ISTA {max(err):.1e} over 100 iterations"


def run_c6(out):
    rng = np.random.default_rng(6)
    grid = oracle.GridSpec((-3.0, -3.0), (3.0, 3.0), (2001, 2001))
    rows = []
    for k in range(20):
        y = rng.uniform(-2, 2, 2)
        for mu in (0.1, 0.5, 1.0):
            obj = Objective(identity_op(2), y, L1Norm(), L2Norm(1.0), mu)
            tr = solve(obj, SolverConfig("dca", T=200, inner="exact", x0_policy="custom", x0=y, timing=False))
            F = lambda P, y=y, mu=mu: (0.5 * ((P - y) ** 2).sum(1)  # noqa: E731
                                        + mu * (np.abs(P).sum(1) - np.hypot(P[:, 0], P[:, 1])))
            _, fg = oracle.grid_min(F, grid)
            rows.append([k, y[0], y[1], mu, tr.F[-1], fg, tr.F[-1] - fg])
    io.write_csv(out / "c6-l1-l2.csv", ["case", "y1", "y2", "mu", "F-dca", "F-grid", "difference"], rows)
    d = np.array([r[6] for r in rows])
    # the grid value is itself an upper bound on the true minimum (node spacing
    # 3e-3), so DCA landing below it is allowed; only excess above it counts
    return bool(np.all(d <= 1e-6)), (f"60 cases, F_dca - F_grid in [{d.min():.1e}, {d.max():.1e}] "
                                     "(negative = DCA below grid)")


# --------------------------------------------------------------------------
# 7: star geometry

def _random_body(rng, M=1024):
    a = np.arange(M) * 2 * np.pi / M
    wave = sum(rng.normal(0, 0.3) * np.cos(k * a + rng.uniform(0, 2 * np.pi)) for k in range(1, 6))
    return sg.StarBody((1 + 0.4 * np.tanh(wave)) * rng.uniform(0.5, 2.0))


def run_c7(out):
    rows = []
    val = sg.rho_p_alpha(sg.Gaussian(), 2.0, [1.0, 0.0], convention="displayed")
    a_err = abs(val - (2 * np.pi) ** -0.25)
    rows.append(["a", "gaussian-rho", val, a_err, a_err <= 1e-6])

    rng = np.random.default_rng(7)
    b_err = 0.0
    for _ in range(20):
        K, C = _random_body(rng), _random_body(rng)
        alpha = rng.uniform(1.0, 3.0)
        Mb = sg.harmonic_combination(K, C, alpha)
        U = K.directions()
        lhs, rhs = Mb.gauge(U) ** alpha, K.gauge(U) ** alpha + C.gauge(U) ** alpha
        b_err = max(b_err, float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs)))))
    rep = sg.dc_witness_check(sg.harmonic_difference(sg.lp_ball(math.inf, 1.0), sg.lp_ball(3.0, 1.8), 1.0),
                              sg.lp_ball(3.0, 1.8), 1.0)
    b_err = max(b_err, rep["identity"].value)
    rows.append(["b", "gauge-additivity", b_err, b_err, b_err <= 1e-12])

    c_ok, c_min = True, math.inf
    for k in range(100):
        C = _random_body(rng)
        dilate = k % 5 == 0
        K = C.scaled(rng.uniform(0.3, 3.0)) if dilate else _random_body(rng)
        rep = sg.lutwak_check(C, K, rng.uniform(0.5, 3.0), eq_tol=1e-6)
        c_ok &= rep.passed and rep.detail["equality"] == dilate
        c_min = min(c_min, rep.value) if not dilate else c_min
    rows.append(["c", "lutwak-100-pairs", c_min, 0.0, c_ok])

    pairs = [(sg.Gaussian(), 2.0, sg.disc(1.0)),
             (sg.Gaussian(cov=np.array([[1.5, 0.4], [0.4, 0.6]])), 1.5, sg.ellipse(1.0, 0.5, 0.4)),
             (sg.Mixture([0.4, 0.6], [sg.Gaussian(mean=[1.0, 0.0]), sg.Gaussian(mean=[-0.5, 1.0], cov=0.5 * np.eye(2))]),
              1.0, sg.lp_ball(math.inf, 1.0))]
    d_worst = 0.0
    for i, (p, alpha, K) in enumerate(pairs):
        mean, se, quad, nse = sg.objective_identity_check(p, alpha, K, 1_000_000, seed=i)
        rows.append([f"d{i}", "objective-identity", mean, quad, nse <= 3])
        d_worst = max(d_worst, nse)
    io.write_csv(out / "c7-stargeom.csv", ["part", "check", "value", "reference-or-error", "passed"], rows)
    ok = all(r[4] for r in rows)
    return ok, (f"(a) err {a_err:.1e}; (b) {b_err:.1e}; (c) 100 pairs ok={c_ok}, min excess of non-dilates "
                f"{c_min:.1e}; (d) worst {d_worst:.2f} SE")


# --------------------------------------------------------------------------
# 8: spiral

def run_c8(out):
    rows = []
    for seed in range(3):
        cfg = bench.SpiralConfig(seed=seed)
        res, _ = bench.run_spiral(cfg)
        for kind, (err, _, trlog) in res.items():
            rows.append([seed, kind, err])
            io.write_csv(out / f"c8-log-{seed}-{kind}.csv", bench.LOG_COLUMNS, trlog.as_rows())
    io.write_csv(out / "c8-spiral.csv", ["seed", "regularizer", "fit-error"], rows)
    med = {k: float(np.median([r[2] for r in rows if r[1] == k])) for k in ("icnn", "weakly_convex", "dc")}
    return med["dc"] < med["icnn"], ("median fit error icnn {icnn:.3f}, weakly-convex {weakly_convex:.3f}, "
                                     "dc {dc:.3f}").format(**med)


# --------------------------------------------------------------------------
# 9, 10: CT

def run_c9(out):
    cfg = bench.CtConfig()
    rep = bench.run_ct_experiment(cfg, out / "c9-ct")
    _CACHE[out] = (rep["reg"], rep["mu"])
    s = {m: v[0] for m, v in rep["scores"].items()}
    gain = s["ADCR-PSM"] - s["pseudo-inverse"]
    ok = gain >= 3.0 and s["ADCR-DCA"] >= s["ADCR-GD"] - 0.1 and s["ADCR-PSM"] >= s["ADCR-GD"] - 0.1
    return ok, ("PSNR pinv {pseudo-inverse:.2f}, TV {TV:.2f}, GD {ADCR-GD:.2f}, DCA {ADCR-DCA:.2f}, "
                "PSM {ADCR-PSM:.2f} dB").format(**s) + f"; PSM gain {gain:+.2f} dB"


def run_c10(out):
    cfg = bench.CtConfig()
    reg, mu = _CACHE.get(out, (None, None))
    rows, _, _ = bench.run_ablation(cfg, range(1, 9), T=50, reg=reg, mu=mu)
    path = out / "c10-ablation.csv"
    io.write_csv(path, bench.ABLATE_HEADER, rows)
    lines = path.read_text().splitlines()
    well_formed = (lines[0] == ",".join(bench.ABLATE_HEADER) and len(lines) == 9
                   and all(len(l.split(",")) == 5 and all(math.isfinite(float(v)) for v in l.split(","))
                           for l in lines[1:]))
    rows2, _, _ = bench.run_ablation(cfg, range(1, 9), T=50, reg=reg, mu=mu)
    io.write_csv(out / "c10-ablation-repeat.csv", bench.ABLATE_HEADER, rows2)
    same = (out / "c10-ablation-repeat.csv").read_bytes() == path.read_bytes()
    best = max(rows, key=lambda r: r[2])
    return well_formed and same, f"8 rows, well-formed={well_formed}, repeat identical={same}, best N={best[0]}"


RUNNERS = {1: run_c1, 2: run_c2, 3: run_c3, 4: run_c4, 5: run_c5, 6: run_c6, 7: run_c7, 8: run_c8, 9: run_c9,
           10: run_c10}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance-a")


@pytest.mark.slow
@pytest.mark.parametrize("n", sorted(RUNNERS))
def test_criterion(n, run_dir):
    ok, summary, elapsed = _timed(RUNNERS[n], run_dir)
    assert _record(n, ok, summary, elapsed), RESULTS[n]


@pytest.mark.slow
def test_criterion_11_reproducibility(run_dir, tmp_path_factory):
    missing = [n for n in RUNNERS if n not in RESULTS]
    if missing:
        pytest.skip(f"criteria {missing} did not run in this session")
    second = tmp_path_factory.mktemp("acceptance-b")
    for n in sorted(RUNNERS):
        RUNNERS[n](second)
    first_files = sorted(p.relative_to(run_dir) for p in run_dir.rglob("*.csv"))
    second_files = sorted(p.relative_to(second) for p in second.rglob("*.csv"))
    differ = [str(p) for p in first_files if (run_dir / p).read_bytes() != (second / p).read_bytes()]
    ok = first_files == second_files and not differ
    summary = f"{len(first_files)} CSV files re-executed, {len(differ)} differ" + (f": {differ[:5]}" if differ else "")
    assert _record(11, ok, summary), RESULTS[11]
