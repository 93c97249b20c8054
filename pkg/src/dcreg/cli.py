"""Command-line entry point: ``dcreg {train,solve,bench,stargeom,ablate}``.

Configs are INI files with sections ``[problem]``, ``[regularizer]``,
``[train]``, ``[solver]`` and ``[output]``. Any key can be overridden on the
command line with ``--section.key=value``. Output directories are resolved
under ``$DCREG_OUTPUT_ROOT`` (default: current directory).

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from . import bench, stargeom
from .icnn import dc_eval_batch, estimate_smoothness, load_checkpoint, save_checkpoint
from .linops import identity_op
from .solve import (Objective, SolverConfig, SolverError, check_dca_rate, check_majorization, check_monotone,
                    check_psm_rates, check_sufficient_decrease, solve)
from .train import LOG_COLUMNS, SampleSource, TrainConfig, TrainingDiverged, train

log = logging.getLogger("dcreg")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4
OUTPUT_ENV = "DCREG_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


# --------------------------------------------------------------------------
# schema: section -> key -> (parser, default)

def _ints(v):
    return tuple(int(t) for t in str(v).replace(" ", "").split(",") if t)


def _floats(v):
    return tuple(float(t) for t in str(v).replace(" ", "").split(",") if t)


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _alpha(v):
    s = str(v).strip().lower()
    if s in ("auto", ""):
        return "auto" if s else None
    return float(s)


def _opt_float(v):
    return None if str(v).strip() == "" else float(v)


SCHEMA = {
    "problem": {
        "kind": (str, "spiral"),              # spiral | ct | stargeom
        "seed": (int, 0),
        "count": (int, 1000),
        "sigma": (float, 1.0),
        "n": (int, 32),
        "angles": (int, 30),
        "wedge": (float, 0.0),
        "noise_rel": (float, 0.01),
        "ridge": (float, 1e-3),
        "train_count": (int, 1000),
        "val_count": (int, 5),
        "test_count": (int, 10),
        "construction": (str, "linf-l3"),     # stargeom: linf-l3 | optimal | l1-l2 | weakly-convex
        "M": (int, 4096),
        "alpha": (float, 1.0),
        "rho": (float, 0.5),
        "contour_res": (int, 121),
        "r_cov": (_floats, (1.0, 0.0, 0.0, 1.0)),
        "n_cov": (_floats, (0.25, 0.0, 0.0, 0.25)),
    },
    "regularizer": {
        "mode": (str, "dc"),                  # dc | convex | weakly_convex
        "widths": (_ints, (32, 32)),
        "activation": (str, "softplus"),
        "act_param": (float, 1.0),
        "rho": (float, 0.1),
        "checkpoint": (str, ""),
        "mu": (_opt_float, None),
    },
    "train": {
        "lambda_gp": (float, 10.0),
        "lr": (float, 3e-3),
        "batch_size": (int, 100),
        "epochs": (int, 1500),
        "seed": (int, 0),
    },
    "solver": {
        "algorithm": (str, "psm"),
        "T": (int, 200),
        "N": (int, 1),
        "alpha": (_alpha, "auto"),
        "gamma": (_opt_float, None),
        "inner": (str, "gd"),
        "x0_policy": (str, "pseudo-inverse"),
        "T_dca": (int, 200),
        "N_dca": (int, 6),
        "tv_weights": (_floats, (0.01, 0.03, 0.1, 0.3)),
        "sweep": (str, "N"),                  # ablation axis: N | gamma
        "sweep_values": (_floats, (1, 2, 3, 4, 5, 6, 7, 8)),
        "cases": (int, 10),
    },
    "output": {
        "dir": (str, "runs/default"),
        "timing": (_bool, False),
    },
}

PRESETS = {
    "spiral": """
[problem]
kind = spiral
count = 1000
sigma = 1.0
seed = 0
[regularizer]
mode = dc
widths = 32,32
activation = softplus
act_param = 1.0
[train]
lambda_gp = 10
lr = 0.003
batch_size = 100
epochs = 1500
[solver]
algorithm = psm
inner = exact
T = 200
[output]
dir = runs/spiral
""",
    "ct-sparse-desk": """
[problem]
kind = ct
n = 32
angles = 30
wedge = 0
noise_rel = 0.01
seed = 0
[regularizer]
mode = dc
widths = 128,128
activation = softplus
act_param = 10
[train]
lambda_gp = 10
lr = 0.001
batch_size = 32
epochs = 100
[solver]
algorithm = psm
T = 800
T_dca = 200
N_dca = 6
[output]
dir = runs/ct-sparse
""",
    "ct-limited-desk": """
[problem]
kind = ct
n = 32
angles = 30
wedge = 60
noise_rel = 0.01
seed = 0
[regularizer]
mode = dc
widths = 128,128
activation = softplus
act_param = 10
[train]
lambda_gp = 10
lr = 0.001
batch_size = 32
epochs = 100
[solver]
algorithm = psm
T = 800
T_dca = 200
N_dca = 6
[output]
dir = runs/ct-limited
""",
    "stargeom-demo": """
[problem]
kind = stargeom
construction = linf-l3
M = 4096
alpha = 1.0
contour_res = 121
[output]
dir = runs/stargeom
""",
}


class RunConfig:
    """Validated configuration with a hash that ignores key order."""

    def __init__(self, values: dict):
        self.values = values

    @classmethod
    def from_text(cls, text: str, overrides=()):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        raw = {s: dict(cp[s]) for s in cp.sections()}
        for sec_key, val in overrides:
            sec, _, key = sec_key.partition(".")
            raw.setdefault(sec, {})[key] = val
        values = {}
        for sec, keys in raw.items():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            for key in keys:
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"unknown key {sec}.{key}")
        for sec, spec in SCHEMA.items():
            values[sec] = {}
            for key, (parse, default) in spec.items():
                if key in raw.get(sec, {}):
                    try:
                        values[sec][key] = parse(raw[sec][key])
                    except (TypeError, ValueError) as exc:
                        raise ConfigError(f"bad value for {sec}.{key}: {raw[sec][key]!r}") from exc
                else:
                    values[sec][key] = default
        return cls(values)

    def __getitem__(self, sec):
        return self.values[sec]

    def canonical(self, with_location: bool = True) -> str:
        lines = []
        for sec in sorted(self.values):
            lines.append(f"[{sec}]")
            for key in sorted(self.values[sec]):
                if not with_location and (sec, key) == ("output", "dir"):
                    continue
                v = self.values[sec][key]
                if isinstance(v, tuple):
                    v = ",".join(repr(x) for x in v)
                elif v is None:
                    v = ""
                lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """Hash of every setting that can change results (the output location cannot)."""
        return hashlib.sha256(self.canonical(with_location=False).encode()).hexdigest()

    def with_value(self, sec, key, v) -> "RunConfig":
        vals = {s: dict(d) for s, d in self.values.items()}
        vals[sec][key] = v
        return RunConfig(vals)


# --------------------------------------------------------------------------
# helpers

def _out_dir(cfg: RunConfig) -> Path:
    root = Path(os.environ.get(OUTPUT_ENV, "."))
    out = root / cfg["output"]["dir"]
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, cfg: RunConfig, command: str, extra=None):
    (out / "config.ini").write_text(cfg.canonical())
    entries = {"command": command, "seed": cfg["problem"]["seed"], "config-hash": cfg.digest()}
    entries.update(extra or {})
    bench.write_manifest(out / "manifest.txt", entries)


def _ct_config(cfg: RunConfig) -> bench.CtConfig:
    p, r, t, s = cfg["problem"], cfg["regularizer"], cfg["train"], cfg["solver"]
    return bench.CtConfig(
        n=p["n"], angles=p["angles"], wedge=p["wedge"], noise_rel=p["noise_rel"], ridge=p["ridge"],
        train_count=p["train_count"], val_count=p["val_count"], test_count=p["test_count"], seed=p["seed"],
        widths=r["widths"], beta=r["act_param"], lambda_gp=t["lambda_gp"], lr=t["lr"],
        batch_size=t["batch_size"], epochs=t["epochs"], T=s["T"], T_dca=s["T_dca"], N_dca=s["N_dca"],
        N_psm=s["N"], tv_weights=s["tv_weights"],
    )


def _spiral_config(cfg: RunConfig) -> bench.SpiralConfig:
    p, r, t = cfg["problem"], cfg["regularizer"], cfg["train"]
    return bench.SpiralConfig(count=p["count"], sigma=p["sigma"], seed=p["seed"], widths=r["widths"],
                              activation=r["activation"], act_param=r["act_param"], rho=r["rho"],
                              lambda_gp=t["lambda_gp"], lr=t["lr"], batch_size=t["batch_size"],
                              epochs=t["epochs"])


def _checkpoint(cfg: RunConfig, required: bool):
    path = cfg["regularizer"]["checkpoint"]
    if not path:
        if required:
            raise MissingArtifact("regularizer.checkpoint is not set")
        return None, ""
    p = Path(path)
    if not p.is_absolute() and not p.exists():
        p = Path(os.environ.get(OUTPUT_ENV, ".")) / path
    if not p.exists():
        raise MissingArtifact(f"checkpoint not found: {path}")
    return load_checkpoint(p), hashlib.sha256(p.read_bytes()).hexdigest()


def _kind(cfg, allowed):
    k = cfg["problem"]["kind"]
    if k not in allowed:
        raise ConfigError(f"problem.kind must be one of {', '.join(allowed)} for this command, got {k!r}")
    return k


# --------------------------------------------------------------------------
# commands

def cmd_train(cfg: RunConfig) -> int:
    kind = _kind(cfg, ("spiral", "ct"))
    out = _out_dir(cfg)
    extra = {}
    if kind == "spiral":
        sc = _spiral_config(cfg)
        data = bench.gen_spiral(sc.count, sc.sigma, sc.seed)
        mode = cfg["regularizer"]["mode"]
        kind_key = {"dc": "dc", "convex": "icnn", "weakly_convex": "weakly_convex"}.get(mode)
        if kind_key is None:
            raise ConfigError(f"unknown regularizer.mode {mode!r}")
        r = bench.spiral_regularizer(kind_key, sc, sc.seed)
        tc = TrainConfig(lambda_gp=sc.lambda_gp, lr=sc.lr, batch_size=sc.batch_size, epochs=sc.epochs,
                         seed=cfg["train"]["seed"])
        r, trlog = train(r, SampleSource(data.clean, data.noisy), tc)
        fit = bench.regularizer_fit_error(r, data, sc.grid)
        pts = sc.grid.points()
        io.write_csv(out / "field.csv", ["x", "y", "R", "distance"],
                     zip(pts[:, 0], pts[:, 1], dc_eval_batch(r, pts), bench.distance_to_manifold(data.clean, pts)))
        extra["fit-error"] = repr(fit)
    else:
        ct = _ct_config(cfg)
        data = bench.make_ct_data(ct)
        r, mu, trlog = bench.train_ct_regularizer(ct, data)
        extra["mu"] = repr(mu)
    io.write_csv(out / "train-log.csv", LOG_COLUMNS, trlog.as_rows())
    extra["checkpoint-hash"] = save_checkpoint(out / "regularizer.ckpt", r)
    _manifest(out, cfg, "train", extra)
    print(f"checkpoint written to {out / 'regularizer.ckpt'}")
    return EXIT_OK


def _solver_config(cfg: RunConfig, x0=None, timing=False) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(algorithm=s["algorithm"], T=s["T"], N=s["N"], alpha=s["alpha"], gamma=s["gamma"],
                        inner=s["inner"], x0_policy="custom" if x0 is not None else s["x0_policy"], x0=x0,
                        timing=timing)


def _reports(trace, obj, L1, L2, alpha, inner):
    if trace.algorithm == "psm" and inner != "exact":
        # the psm guarantees assume an exact prox
        return []
    reps = [check_monotone(trace)]
    if trace.algorithm == "dca":
        reps += [check_majorization(trace)]
        if L1 is not None:
            reps.append(check_dca_rate(trace, obj.mu * L1, obj.A_norm))
    elif trace.algorithm == "psm":
        reps += [check_sufficient_decrease(trace, alpha)]
        reps += check_psm_rates(trace, obj.mu * L2 if L2 is not None else None, obj.A_norm, alpha)
    return reps


def cmd_solve(cfg: RunConfig) -> int:
    kind = _kind(cfg, ("spiral", "ct"))
    reg, ckpt_hash = _checkpoint(cfg, required=True)
    out = _out_dir(cfg)
    s = cfg["solver"]
    if s["algorithm"] not in ("gd", "dca", "psm"):
        raise ConfigError(f"unknown solver.algorithm {s['algorithm']!r}")
    timing = cfg["output"]["timing"]
    if kind == "ct":
        ct = _ct_config(cfg)
        data = bench.make_ct_data(ct)
        mu = cfg["regularizer"]["mu"] if cfg["regularizer"]["mu"] is not None else bench.ct_weight(ct, data)
        cases = list(zip(data.test_y, data.test_init, data.test_clean))[: s["cases"]]
        A, box, shape = data.A, (0.0, 1.0), (ct.n, ct.n)
    else:
        sc = _spiral_config(cfg)
        data = bench.gen_spiral(sc.count, sc.sigma, sc.seed)
        mu = cfg["regularizer"]["mu"] if cfg["regularizer"]["mu"] is not None else 1.0
        cases = [(y, y, c) for y, c in zip(data.noisy[: s["cases"]], data.clean[: s["cases"]])]
        A, box, shape = identity_op(2), (-20.0, 20.0), None
    L1 = estimate_smoothness(reg.r1, box, 200, 0).L_hat if reg.r1.activation == "softplus" else None
    L2 = None
    if reg.mode == "dc" and reg.r2.activation == "softplus":
        L2 = estimate_smoothness(reg.r2, box, 200, 0).L_hat
    elif reg.mode == "weakly_convex":
        L2 = reg.rho
    elif reg.mode == "convex":
        L2 = 0.0
    metric_rows, report_lines = [], []
    resolved = {}
    for i, (y, x0, xt) in enumerate(cases):
        obj = Objective.from_regularizer(A, y, reg, mu, L1, L2)
        sc_ = _solver_config(cfg, x0=x0 if s["x0_policy"] == "pseudo-inverse" else None, timing=timing)
        trace = solve(obj, sc_)
        io.write_csv(out / f"trace-{i:02d}.csv", trace.header(timing), trace.rows(timing))
        io.write_array(out / f"recon-{i:02d}.f64", trace.x)
        if shape is not None:
            io.write_pgm(out / f"recon-{i:02d}.pgm", trace.x.reshape(shape))
            metric_rows.append([i, bench.psnr(trace.x.reshape(shape), xt.reshape(shape)),
                                bench.ssim(trace.x.reshape(shape), xt.reshape(shape)), trace.F[-1]])
        else:
            metric_rows.append([i, float(np.linalg.norm(trace.x - xt)), "", trace.F[-1]])
        alpha = trace.alpha if trace.alpha is not None else math.nan
        resolved = {"alpha": repr(trace.alpha), "gamma": repr(trace.gamma), "N": sc_.N}
        for rep in _reports(trace, obj, L1, L2, alpha, s["inner"]):
            report_lines.append(f"case {i:02d} {rep.line()}")
    io.write_csv(out / "metrics.csv", ["case", "psnr" if shape else "error", "ssim", "final-F"], metric_rows)
    if not report_lines:
        report_lines.append("certificates skipped: psm guarantees need solver.inner = exact")
    (out / "checks.txt").write_text("\n".join(report_lines) + "\n")
    _manifest(out, cfg, "solve", {"checkpoint-hash": ckpt_hash, "mu": repr(mu), **resolved})
    print("\n".join(report_lines))
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    kind = _kind(cfg, ("spiral", "ct"))
    out = _out_dir(cfg)
    if kind == "ct":
        reg, ckpt_hash = _checkpoint(cfg, required=False)
        rep = bench.run_ct_experiment(_ct_config(cfg), out_dir=out, reg=reg, mu=cfg["regularizer"]["mu"])
        for row in rep["table"]:
            print(",".join(io.fmt(v) for v in row))
        _manifest(out, cfg, "bench", {"checkpoint-hash": ckpt_hash, "mu": repr(rep["mu"]),
                                      "sigma": repr(rep["sigma"])})
        return EXIT_OK
    sc = _spiral_config(cfg)
    res, _ = bench.run_spiral(sc)
    rows = [[k, res[k][0]] for k in ("icnn", "weakly_convex", "dc")]
    io.write_csv(out / "fit-error.csv", ["regularizer", "fit-error"], rows)
    for k, v in rows:
        print(f"{k}: {v:.6f}")
    _manifest(out, cfg, "bench")
    return EXIT_OK


def cmd_stargeom(cfg: RunConfig) -> int:
    _kind(cfg, ("stargeom",))
    p = cfg["problem"]
    out = _out_dir(cfg)
    M, alpha = p["M"], p["alpha"]
    con = p["construction"]
    lines = []
    if con == "linf-l3":
        Mb, C = stargeom.lp_ball(math.inf, 1.0, M), stargeom.lp_ball(3.0, 1.8, M)
        K = stargeom.harmonic_difference(Mb, C, alpha)
        rep = stargeom.dc_witness_check(K, C, alpha)
    elif con == "l1-l2":
        rho = p["rho"]
        K = stargeom.from_gauge(lambda U: np.abs(U).sum(1) - rho * np.hypot(U[:, 0], U[:, 1]), M)
        C = stargeom.disc(1.0 / rho, M)
        rep = stargeom.dc_witness_check(K, C, 1.0)
    elif con == "weakly-convex":
        rho = p["rho"]
        C = stargeom.disc(math.sqrt(2.0 / rho), M)
        K = stargeom.harmonic_difference(stargeom.ellipse(1.0, 0.5, 0.0, M), C, 2.0)
        rep = stargeom.dc_witness_check(K, C, 2.0)
    elif con == "optimal":
        pr = stargeom.Gaussian(cov=np.reshape(p["r_cov"], (2, 2)))
        pn = stargeom.Gaussian(cov=np.reshape(p["n_cov"], (2, 2)))
        K = stargeom.optimal_star_body(pr, pn, alpha, M, unit_volume=True)
        sweep = stargeom.perturbation_sweep(pr, pn, alpha, K)
        rep = {"perturbation": sweep, "passed": sweep.passed}
    else:
        raise ConfigError(f"unknown problem.construction {con!r}")
    for name, r in rep.items():
        if hasattr(r, "line"):
            lines.append(f"{name}: {r.line()}")
    io.write_csv(out / "body.csv", ["angle", "radius"], K.to_csv_rows())
    xs, ys, F = stargeom.contour_field(K, res=p["contour_res"])
    io.write_csv(out / "contour.csv", ["x", "y", "gauge"],
                 ((x, y, F[j, i]) for j, y in enumerate(ys) for i, x in enumerate(xs)))
    if "M" in rep:
        io.write_csv(out / "witness-M.csv", ["angle", "radius"], rep["M"].to_csv_rows())
    (out / "checks.txt").write_text("\n".join(lines) + "\n")
    _manifest(out, cfg, "stargeom", {"volume": repr(K.volume())})
    print("\n".join(lines))
    return EXIT_OK


def cmd_ablate(cfg: RunConfig) -> int:
    _kind(cfg, ("ct",))
    s = cfg["solver"]
    values = s["sweep_values"]
    if not values:
        raise ConfigError("solver.sweep_values is empty")
    out = _out_dir(cfg)
    ct = _ct_config(cfg)
    reg, ckpt_hash = _checkpoint(cfg, required=False)
    data = bench.make_ct_data(ct)
    if reg is None:
        reg, _, _ = bench.train_ct_regularizer(ct, data)
    mu = cfg["regularizer"]["mu"] if cfg["regularizer"]["mu"] is not None else bench.ct_weight(ct, data)
    solvers = bench.CtSolvers(ct, data, reg, mu)
    rows = []
    cases = list(zip(data.test_y, data.test_init, data.test_clean))[: s["cases"]]
    for v in values:
        if s["sweep"] == "N":
            v = N = int(v)
            if N < 1:
                raise ConfigError("N values must be >= 1")
            run_cfg = cfg.with_value("solver", "N_dca", N)
            runner = lambda y, x0: solvers.run("ADCR-DCA", y, x0, s["T"], N=N)  # noqa: E731
        elif s["sweep"] == "gamma":
            run_cfg = cfg.with_value("solver", "gamma", float(v))

            def runner(y, x0, g=float(v)):
                obj = Objective.from_regularizer(data.A, y, reg, mu, solvers.L1, solvers.L2)
                sc_ = SolverConfig("psm", T=s["T"], N=s["N"], alpha="auto", gamma=g, strict=False,
                                   x0_policy="custom", x0=x0, timing=False)
                return solve(obj, sc_)
        else:
            raise ConfigError(f"unknown solver.sweep {s['sweep']!r}")
        p_, s_, F_ = [], [], []
        for y, x0, xt in cases:
            tr = runner(y, x0)
            img, ref = tr.x.reshape(ct.n, ct.n), xt.reshape(ct.n, ct.n)
            p_.append(bench.psnr(img, ref))
            s_.append(bench.ssim(img, ref))
            F_.append(tr.F[-1])
        rows.append([s["sweep"], v, s["T"], float(np.mean(p_)), float(np.mean(s_)), float(np.mean(F_)),
                     run_cfg.digest()])
        print(f"{s['sweep']}={v}: psnr {rows[-1][3]:.4f} ssim {rows[-1][4]:.4f}")
    io.write_csv(out / "ablation.csv", ["axis", "value", "T", "mean-psnr", "mean-ssim", "mean-final-F",
                                        "config-hash"], rows)
    _manifest(out, cfg, "ablate", {"checkpoint-hash": ckpt_hash, "mu": repr(mu)})
    return EXIT_OK


COMMANDS = {"train": cmd_train, "solve": cmd_solve, "bench": cmd_bench, "stargeom": cmd_stargeom,
            "ablate": cmd_ablate}


def build_parser():
    ap = argparse.ArgumentParser(prog="dcreg", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"dcreg {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", nargs="?", help="INI config file")
    ap.add_argument("--preset", choices=sorted(PRESETS))
    ap.add_argument("--algorithm", choices=("gd", "dca", "psm"))
    ap.add_argument("--alpha", help="step size or 'auto'")
    ap.add_argument("--gamma", type=float)
    ap.add_argument("--inner", type=int, help="inner iterations N")
    ap.add_argument("--inner-mode", choices=("gd", "exact"))
    ap.add_argument("-T", "--T", "--iterations", type=int, dest="T")
    return ap


def _split_overrides(extra):
    pairs = []
    for tok in extra:
        if not tok.startswith("--") or "=" not in tok or "." not in tok.split("=", 1)[0]:
            raise ConfigError(f"unrecognized argument {tok!r} (overrides look like --section.key=value)")
        k, v = tok[2:].split("=", 1)
        pairs.append((k, v))
    return pairs


def load_config(args, extra) -> RunConfig:
    if args.config and args.preset:
        raise ConfigError("give either a config file or --preset, not both")
    if args.preset:
        text = PRESETS[args.preset]
    elif args.config:
        path = Path(args.config)
        if not path.exists():
            raise MissingArtifact(f"config not found: {path}")
        text = path.read_text()
    else:
        raise ConfigError("a config file or --preset is required")
    overrides = _split_overrides(extra)
    flag_map = {"algorithm": "solver.algorithm", "alpha": "solver.alpha", "gamma": "solver.gamma",
                "inner": "solver.N", "inner_mode": "solver.inner", "T": "solver.T"}
    for attr, key in flag_map.items():
        v = getattr(args, attr)
        if v is not None:
            overrides.append((key, str(v)))
    return RunConfig.from_text(text, overrides)


def main(argv=None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args, extra)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifact, FileNotFoundError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (SolverError, TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # precondition violations (e.g. star-body hypotheses) surface verbatim
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
