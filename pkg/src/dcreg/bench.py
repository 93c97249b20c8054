"""Desk-scale experiments: spiral denoising and small simulated CT, plus metrics."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from . import io
from .icnn import DcRegularizer, dc_eval_batch, estimate_smoothness, init_icnn, load_checkpoint, save_checkpoint
from .linops import LinearOp, RadonGeometry, RidgeSolver, build_radon, simulate
from .solve import Objective, SolverConfig, TotalVariation, Zero, solve
from .train import LOG_COLUMNS, SampleSource, TrainConfig, regularization_weight, train

log = logging.getLogger(__name__)

PSNR_CAP = 99.0


# --------------------------------------------------------------------------
# spirals

@dataclass
class SpiralDataset:
    clean: np.ndarray
    noisy: np.ndarray
    labels: np.ndarray
    sigma: float
    seed: int
    theta: np.ndarray = field(repr=False, default=None)


def spiral_point(u, label=0):
    """Clean spiral position for uniform draw ``u``: ``theta = sqrt(u) 2 pi``, ``r = 2 theta + pi``."""
    theta = np.sqrt(np.asarray(u, dtype=np.float64)) * 2.0 * math.pi
    r = 2.0 * theta + math.pi
    sign = np.where(np.asarray(label) == 0, 1.0, -1.0)  # second spiral: rotation by pi
    pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
    return pts * sign[..., None] if np.ndim(sign) else pts * sign


def gen_spiral(count: int = 1000, sigma: float = 1.0, seed: int = 0) -> SpiralDataset:
    """Two interleaved spirals with ``count // 2`` points each, plus noise."""
    if count < 2 or count % 2:
        raise ValueError("count must be a positive even number")
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], count // 2)
    u = rng.uniform(0.0, 1.0, count)
    clean = spiral_point(u, labels)
    noisy = clean + sigma * rng.standard_normal(clean.shape)
    theta = np.sqrt(u) * 2.0 * math.pi
    return SpiralDataset(clean, noisy, labels, float(sigma), seed, theta)


def distance_to_manifold(clean, X, chunk: int = 4096) -> np.ndarray:
    """Distance from each row of ``X`` to the nearest clean point (brute force)."""
    P = np.atleast_2d(np.asarray(clean, dtype=np.float64))
    if len(P) == 0:
        raise ValueError("clean set is empty")
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    out = np.empty(len(X))
    for s in range(0, len(X), chunk):
        B = X[s:s + chunk]
        d2 = np.sum(B * B, 1)[:, None] - 2.0 * B @ P.T + np.sum(P * P, 1)[None, :]
        # the expanded form picks the nearest point; recompute its distance exactly
        j = np.argmin(d2, axis=1)
        out[s:s + chunk] = np.linalg.norm(B - P[j], axis=1)
    return out[0] if single else out


@dataclass(frozen=True)
class GridSpec:
    lo: float = -20.0
    hi: float = 20.0
    res: int = 81

    def points(self) -> np.ndarray:
        g = np.linspace(self.lo, self.hi, self.res)
        XX, YY = np.meshgrid(g, g)
        return np.column_stack([XX.ravel(), YY.ravel()])


def _standardize(v, what):
    sd = float(np.std(v))
    if not sd > 1e-12 * max(1.0, float(np.max(np.abs(v)))):
        raise ValueError(f"{what} field is constant on the grid")
    return (v - np.mean(v)) / sd


def field_fit_error(values, clean, grid: GridSpec = GridSpec()) -> float:
    pts = grid.points()
    dist = distance_to_manifold(clean, pts)
    a = _standardize(np.asarray(values, dtype=np.float64), "regularizer")
    b = _standardize(dist, "distance")
    return float(np.mean((a - b) ** 2))


def regularizer_fit_error(r, data, grid: GridSpec = GridSpec()) -> float:
    """MSE between the standardized regularizer and distance fields on ``grid``.

    ``r`` is a :class:`DcRegularizer` or any callable on ``(n, 2)`` arrays;
    ``data`` a :class:`SpiralDataset` or an array of clean points.
    """
    clean = data.clean if isinstance(data, SpiralDataset) else data
    pts = grid.points()
    vals = dc_eval_batch(r, pts) if isinstance(r, DcRegularizer) else r(pts)
    return field_fit_error(vals, clean, grid)


# --------------------------------------------------------------------------
# metrics

def psnr(x, ref, peak: float = 1.0) -> float:
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError("shape mismatch")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def _gauss_window(size=11, sigma=1.5):
    k = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-0.5 * (k / sigma) ** 2)
    return w / w.sum()


def _filter_valid(img, w):
    h = len(w) // 2
    out = correlate1d(correlate1d(img, w, axis=0, mode="constant"), w, axis=1, mode="constant")
    return out[h:img.shape[0] - h, h:img.shape[1] - h]


def ssim(x, ref, peak: float = 1.0, k1: float = 0.01, k2: float = 0.03, win: int = 11,
         sigma: float = 1.5) -> float:
    """Mean single-scale SSIM over valid 11x11 Gaussian windows."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape or x.ndim != 2:
        raise ValueError("ssim needs two images of equal 2-D shape")
    if min(x.shape) < win:
        raise ValueError(f"images must be at least {win}x{win}")
    w = _gauss_window(win, sigma)
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    mx, my = _filter_valid(x, w), _filter_valid(ref, w)
    sxx = _filter_valid(x * x, w) - mx * mx
    syy = _filter_valid(ref * ref, w) - my * my
    sxy = _filter_valid(x * ref, w) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(np.mean(s))


# --------------------------------------------------------------------------
# phantoms

def _ellipse_mask(n, cx, cy, a, b, theta):
    yy, xx = np.mgrid[-1:1:n * 1j, -1:1:n * 1j]
    c, s = math.cos(theta), math.sin(theta)
    X = (xx - cx) * c + (yy - cy) * s
    Y = -(xx - cx) * s + (yy - cy) * c
    return (X / a) ** 2 + (Y / b) ** 2 <= 1.0


def shepp_logan_like(n: int = 32) -> np.ndarray:
    ellipses = [  # (value, cx, cy, a, b, theta)
        (1.0, 0.0, 0.0, 0.69, 0.92, 0.0),
        (-0.8, 0.0, -0.0184, 0.6624, 0.874, 0.0),
        (-0.2, 0.22, 0.0, 0.11, 0.31, -0.314),
        (-0.2, -0.22, 0.0, 0.16, 0.41, 0.314),
        (0.1, 0.0, 0.35, 0.21, 0.25, 0.0),
        (0.1, 0.0, 0.1, 0.046, 0.046, 0.0),
        (0.1, 0.0, -0.605, 0.046, 0.023, 0.0),
    ]
    img = np.zeros((n, n))
    for v, cx, cy, a, b, t in ellipses:
        img[_ellipse_mask(n, cx, -cy, a, b, t)] += v
    return np.clip(img, 0.0, 1.0)


def random_ellipses(n: int = 32, seed=0) -> np.ndarray:
    """Body ellipse plus 3-6 random inner ellipses, clipped to [0, 1]."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    img = np.zeros((n, n))
    img[_ellipse_mask(n, 0.0, 0.0, rng.uniform(0.75, 0.9), rng.uniform(0.85, 0.95), 0.0)] = 0.3
    for _ in range(int(rng.integers(3, 7))):
        cx, cy = rng.uniform(-0.5, 0.5, 2)
        a, b = rng.uniform(0.08, 0.35, 2)
        img[_ellipse_mask(n, cx, cy, a, b, rng.uniform(0, math.pi))] += rng.uniform(-0.2, 0.6)
    return np.clip(img, 0.0, 1.0)


# --------------------------------------------------------------------------
# CT experiment

METHODS = ("pseudo-inverse", "TV", "ADCR-GD", "ADCR-DCA", "ADCR-PSM")
TABLE_HEADER = ("method", "limited-psnr", "limited-ssim", "sparse-psnr", "sparse-ssim")


@dataclass
class CtConfig:
    """Desk-scale CT protocol.

    Iteration counts of the iterative methods (and the TV weight) are picked
    on ``val_count`` validation phantoms, disjoint from the test phantoms:
    each method runs up to its cap and stops at the iteration with the best
    mean validation PSNR.
    """

    n: int = 32
    angles: int = 30
    wedge: float = 0.0
    noise_rel: float = 0.01
    ridge: float = 1e-3
    train_count: int = 1000
    val_count: int = 5
    test_count: int = 10
    seed: int = 0
    widths: tuple = (128, 128)
    beta: float = 10.0
    lambda_gp: float = 10.0
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    T: int = 800
    T_dca: int = 200
    N_dca: int = 6
    N_psm: int = 1
    tv_weights: tuple = (0.01, 0.03, 0.1, 0.3)
    mu_scale: float = 1.0

    @property
    def setting(self) -> str:
        return "limited" if self.wedge > 0 else "sparse"

    def digest(self) -> str:
        return hashlib.sha256(repr(sorted(asdict(self).items())).encode()).hexdigest()


@dataclass
class CtData:
    A: LinearOp
    sigma: float
    train_clean: np.ndarray
    train_noisy: np.ndarray
    val_clean: np.ndarray
    val_y: np.ndarray
    val_init: np.ndarray
    test_clean: np.ndarray
    test_y: np.ndarray
    test_init: np.ndarray


def make_ct_data(cfg: CtConfig) -> CtData:
    """Phantoms, operator, noise level and pseudo-inverse reconstructions."""
    A = build_radon(RadonGeometry(cfg.n, cfg.angles, missing_wedge=cfg.wedge))
    s_ph, s_noise = np.random.SeedSequence(cfg.seed).spawn(2)
    ph_rng = np.random.default_rng(s_ph)
    total = cfg.train_count + cfg.val_count + cfg.test_count
    phantoms = np.array([random_ellipses(cfg.n, ph_rng).ravel() for _ in range(total)])
    sigma = cfg.noise_rel * float(np.mean([A.apply(x).mean() for x in phantoms]))
    noise_rng = np.random.default_rng(s_noise)
    ys = np.array([simulate(A, x, sigma, noise_rng).y for x in phantoms])
    pinv = RidgeSolver(A, cfg.ridge)
    inits = np.array([pinv(y) for y in ys])
    k, v = cfg.train_count, cfg.train_count + cfg.val_count
    half = k // 2
    # clean and noisy training sets come from disjoint phantoms (unpaired)
    return CtData(A, sigma, phantoms[:half], inits[half:k],
                  phantoms[k:v], ys[k:v], inits[k:v], phantoms[v:], ys[v:], inits[v:])


def _seeds(seed, tag, k):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence([seed, tag]).spawn(k)]


def train_ct_regularizer(cfg: CtConfig, data: CtData):
    d = cfg.n * cfg.n
    s1, s2, s3 = _seeds(cfg.seed, 1, 3)
    r = DcRegularizer(init_icnn(d, cfg.widths, "softplus", cfg.beta, s1),
                      init_icnn(d, cfg.widths, "softplus", cfg.beta, s2), mode="dc")
    tc = TrainConfig(lambda_gp=cfg.lambda_gp, lr=cfg.lr, batch_size=cfg.batch_size,
                     epochs=cfg.epochs, seed=s3)
    r, trlog = train(r, SampleSource(data.train_clean, data.train_noisy), tc)
    return r, ct_weight(cfg, data), trlog


def ct_weight(cfg: CtConfig, data: CtData) -> float:
    return cfg.mu_scale * regularization_weight(data.A, data.train_clean, data.sigma, seed=_seeds(cfg.seed, 2, 1)[0])


class CtSolvers:
    """Builds the objective and solver settings of each reconstruction method."""

    def __init__(self, cfg: CtConfig, data: CtData, reg: DcRegularizer, mu: float):
        self.cfg, self.data, self.reg, self.mu = cfg, data, reg, mu
        box = (0.0, 1.0)
        self.L1 = estimate_smoothness(reg.r1, box, 200, cfg.seed).L_hat
        self.L2 = estimate_smoothness(reg.r2, box, 200, cfg.seed).L_hat if reg.mode == "dc" else None

    def run(self, method, y, x0, T, N=None, tv_weight=None, store=False):
        cfg = self.cfg
        if method == "TV":
            obj = Objective(self.data.A, y, TotalVariation((cfg.n, cfg.n)), Zero(), tv_weight)
            sc = SolverConfig("psm", T=T, alpha="auto", x0_policy="custom", x0=x0,
                              store_iterates=store, timing=False)
            return solve(obj, sc)
        obj = Objective.from_regularizer(self.data.A, y, self.reg, self.mu, self.L1, self.L2)
        alg = {"ADCR-GD": "gd", "ADCR-DCA": "dca", "ADCR-PSM": "psm"}[method]
        if N is None:
            N = {"gd": 1, "dca": cfg.N_dca, "psm": cfg.N_psm}[alg]
        sc = SolverConfig(alg, T=T, N=N, alpha="auto" if alg == "psm" else None, x0_policy="custom",
                          x0=x0, store_iterates=store, timing=False)
        return solve(obj, sc)

    def cap(self, method):
        return self.cfg.T_dca if method == "ADCR-DCA" else self.cfg.T

    def select(self, method, N=None):
        """Best iteration count (and TV weight) on the validation phantoms.

        Returns ``(T, tv_weight, mean validation psnr)``; ties go to the
        earliest iteration.
        """
        d, n = self.data, self.cfg.n
        weights = self.cfg.tv_weights if method == "TV" else (None,)
        best = (0, None, -math.inf)
        for w in weights:
            curves = []
            for y, x0, xt in zip(d.val_y, d.val_init, d.val_clean):
                tr = self.run(method, y, x0, self.cap(method), N, w, store=True)
                curves.append([psnr(x.reshape(n, n), xt.reshape(n, n)) for x in tr.iterates])
            mean = np.mean(np.array(curves), axis=0)
            t = int(np.argmax(mean[1:])) + 1
            if mean[t] > best[2]:
                best = (t, w, float(mean[t]))
        return best


def reconstruct_all(cfg: CtConfig, data: CtData, reg: DcRegularizer, mu: float, methods=METHODS):
    """Test reconstructions per method plus the validated schedule of each."""
    solvers = CtSolvers(cfg, data, reg, mu)
    out = {m: [] for m in methods}
    schedule = {}
    for m in methods:
        if m == "pseudo-inverse":
            out[m] = list(data.test_init)
            schedule[m] = (0, None, math.nan)
            continue
        schedule[m] = T, w, _ = solvers.select(m)
        out[m] = [solvers.run(m, y, x0, T, tv_weight=w).x for y, x0 in zip(data.test_y, data.test_init)]
    return out, schedule


def score(recons, truth, n):
    rows = {}
    for m, imgs in recons.items():
        p = [psnr(x.reshape(n, n), t.reshape(n, n)) for x, t in zip(imgs, truth)]
        s = [ssim(x.reshape(n, n), t.reshape(n, n)) for x, t in zip(imgs, truth)]
        rows[m] = (float(np.mean(p)), float(np.mean(s)), p, s)
    return rows


def table_rows(setting: str, scores: dict):
    rows = []
    for m in METHODS:
        if m not in scores:
            continue
        p, s = scores[m][0], scores[m][1]
        rows.append([m, p, s, "", ""] if setting == "limited" else [m, "", "", p, s])
    return rows


def _load_or_train(cfg, data, reg, mu, checkpoint):
    trlog, ckpt_hash = None, ""
    if checkpoint is not None:
        if not Path(checkpoint).exists():
            raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
        reg = load_checkpoint(checkpoint)
        ckpt_hash = hashlib.sha256(Path(checkpoint).read_bytes()).hexdigest()
    if reg is None:
        reg, _, trlog = train_ct_regularizer(cfg, data)
    if mu is None:
        mu = ct_weight(cfg, data)
    return reg, mu, trlog, ckpt_hash


def run_ct_experiment(cfg: CtConfig, out_dir=None, reg: DcRegularizer | None = None, mu: float | None = None,
                      checkpoint=None):
    """Train (or load) a regularizer, reconstruct the test set, score every method.

    Returns a dict with ``scores`` (method -> (mean psnr, mean ssim, per-case
    psnr, per-case ssim)), ``table`` rows, ``schedule`` (validated iteration
    counts), ``mu`` and ``sigma``. With ``out_dir`` the metrics table,
    per-case PGMs, the schedule and a manifest are written there.
    """
    data = make_ct_data(cfg)
    reg, mu, trlog, ckpt_hash = _load_or_train(cfg, data, reg, mu, checkpoint)
    recons, schedule = reconstruct_all(cfg, data, reg, mu)
    scores = score(recons, data.test_clean, cfg.n)
    table = table_rows(cfg.setting, scores)
    report = {"scores": scores, "table": table, "schedule": schedule, "mu": mu, "sigma": data.sigma,
              "trlog": trlog, "reg": reg}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        io.write_csv(out / "metrics.csv", TABLE_HEADER, table)
        per_case = [[m, i, scores[m][2][i], scores[m][3][i]] for m in scores for i in range(len(data.test_y))]
        io.write_csv(out / "per-case.csv", ["method", "case", "psnr", "ssim"], per_case)
        io.write_csv(out / "schedule.csv", ["method", "T", "tv-weight", "val-psnr"],
                     [[m, t, "" if w is None else w, v] for m, (t, w, v) in schedule.items()])
        if trlog is not None:
            io.write_csv(out / "train-log.csv", LOG_COLUMNS, trlog.as_rows())
            ckpt_hash = save_checkpoint(out / "regularizer.ckpt", reg)
        for m, imgs in recons.items():
            for i, x in enumerate(imgs):
                io.write_pgm(out / f"{m}-{i:02d}.pgm", x.reshape(cfg.n, cfg.n))
        write_manifest(out / "manifest.txt", {"kind": "ct", "seed": cfg.seed, "config-hash": cfg.digest(),
                                              "checkpoint-hash": ckpt_hash, "mu": repr(mu),
                                              "sigma": repr(data.sigma)})
    return report


ABLATE_HEADER = ("N", "T", "mean-psnr", "mean-ssim", "mean-final-F")


def run_ablation(cfg: CtConfig, Ns=range(1, 9), T: int = 50, reg=None, mu=None, checkpoint=None):
    """DCA inner-iteration sweep at a fixed outer budget ``T``; one row per N."""
    Ns = list(Ns)
    if not Ns:
        raise ValueError("empty sweep")
    data = make_ct_data(cfg)
    reg, mu, _, _ = _load_or_train(cfg, data, reg, mu, checkpoint)
    solvers = CtSolvers(cfg, data, reg, mu)
    rows = []
    for N in Ns:
        p, s, F = [], [], []
        for y, x0, xt in zip(data.test_y, data.test_init, data.test_clean):
            tr = solvers.run("ADCR-DCA", y, x0, T, N=N)
            p.append(psnr(tr.x.reshape(cfg.n, cfg.n), xt.reshape(cfg.n, cfg.n)))
            s.append(ssim(tr.x.reshape(cfg.n, cfg.n), xt.reshape(cfg.n, cfg.n)))
            F.append(tr.F[-1])
        rows.append([N, T, float(np.mean(p)), float(np.mean(s)), float(np.mean(F))])
    return rows, reg, mu


def write_manifest(path, entries: dict) -> None:
    from . import __version__

    lines = [f"version = {__version__}"] + [f"{k} = {v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# spiral experiment

@dataclass
class SpiralConfig:
    count: int = 1000
    sigma: float = 1.0
    seed: int = 0
    widths: tuple = (32, 32)
    activation: str = "softplus"
    act_param: float = 1.0
    rho: float = 0.1
    lambda_gp: float = 10.0
    lr: float = 3e-3
    batch_size: int = 100
    epochs: int = 1500
    grid: GridSpec = GridSpec()


def spiral_regularizer(kind: str, cfg: SpiralConfig, seed: int) -> DcRegularizer:
    ss = np.random.SeedSequence([seed, {"icnn": 0, "weakly_convex": 1, "dc": 2}[kind]])
    s1, s2 = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    r1 = init_icnn(2, cfg.widths, cfg.activation, cfg.act_param, s1)
    if kind == "icnn":
        return DcRegularizer(r1, mode="convex")
    if kind == "weakly_convex":
        return DcRegularizer(r1, mode="weakly_convex", rho=cfg.rho)
    return DcRegularizer(r1, init_icnn(2, cfg.widths, cfg.activation, cfg.act_param, s2), mode="dc")


def run_spiral(cfg: SpiralConfig, kinds=("icnn", "weakly_convex", "dc")):
    """Train each regularizer kind on one spiral dataset; returns kind -> (fit error, reg, log)."""
    data = gen_spiral(cfg.count, cfg.sigma, cfg.seed)
    out = {}
    for kind in kinds:
        r = spiral_regularizer(kind, cfg, cfg.seed)
        tc = TrainConfig(lambda_gp=cfg.lambda_gp, lr=cfg.lr, batch_size=cfg.batch_size,
                         epochs=cfg.epochs, seed=cfg.seed)
        r, trlog = train(r, SampleSource(data.clean, data.noisy), tc)
        out[kind] = (regularizer_fit_error(r, data, cfg.grid), r, trlog)
    return out, data
