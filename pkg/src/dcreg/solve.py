"""Variational reconstruction with difference-of-convex regularizers.

Minimizes ``F(x) = 0.5 ||A x - y||^2 + mu * (R1(x) - R2(x))`` with
subgradient descent, DCA or the proximal subgradient method (PSM), and
checks the averaged-rate inequalities those methods satisfy.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as sopt

from .icnn import DcRegularizer, IcnnParams, icnn_eval, icnn_grad_x, icnn_value_and_grad
from .linops import NORM_SAFETY, LinearOp, op_norm, pseudo_inverse_init

__all__ = [
    "SolverError",
    "ConvexTerm",
    "Zero",
    "IcnnTerm",
    "L1Norm",
    "L2Norm",
    "Quadratic",
    "HuberL1",
    "TotalVariation",
    "Objective",
    "SolverConfig",
    "SolverTrace",
    "RateReport",
    "data_fidelity",
    "solve",
    "solve_gd",
    "solve_dca",
    "solve_psm",
    "check_dca_rate",
    "check_psm_rates",
    "check_monotone",
    "check_sufficient_decrease",
    "check_majorization",
]


class SolverError(RuntimeError):
    """Numerical failure inside a solver; ``trace`` holds the iterations so far."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


# --------------------------------------------------------------------------
# convex terms

class ConvexTerm:
    """A convex function with a subgradient selection.

    ``smooth_L`` is a gradient-Lipschitz constant when one is known.
    ``prox(v, tau)`` returns ``argmin_z 0.5 ||z - v||^2 + tau * R(z)`` when a
    closed form (or a dedicated solver) exists, else ``None``.
    """

    smooth_L: float | None = None

    def value(self, x) -> float:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError

    def value_and_grad(self, x):
        return self.value(x), self.grad(x)

    def prox(self, v, tau):
        return None

    def subgradients(self, x) -> list:
        """Candidate subgradients at ``x``; more than one only at kinks."""
        return [self.grad(x)]


class Zero(ConvexTerm):
    smooth_L = 0.0

    def value(self, x):
        return 0.0

    def grad(self, x):
        return np.zeros_like(x)

    def prox(self, v, tau):
        return np.array(v, dtype=np.float64)


class IcnnTerm(ConvexTerm):
    def __init__(self, params: IcnnParams, smooth_L: float | None = None):
        self.params = params
        self.smooth_L = smooth_L

    def value(self, x):
        return icnn_eval(self.params, x)

    def grad(self, x):
        return icnn_grad_x(self.params, x)

    def value_and_grad(self, x):
        return icnn_value_and_grad(self.params, x)


class L1Norm(ConvexTerm):
    def value(self, x):
        return float(np.sum(np.abs(x)))

    def grad(self, x):
        return np.sign(x)

    def prox(self, v, tau):
        return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


class L2Norm(ConvexTerm):
    """``scale * ||x||_2`` (subgradient 0 at the origin)."""

    def __init__(self, scale: float = 1.0):
        self.scale = scale

    def value(self, x):
        return self.scale * float(np.linalg.norm(x))

    def grad(self, x):
        n = np.linalg.norm(x)
        return self.scale * x / n if n > 0 else np.zeros_like(x)

    def prox(self, v, tau):
        n = np.linalg.norm(v)
        t = tau * self.scale
        return v * max(0.0, 1.0 - t / n) if n > 0 else np.zeros_like(v)

    def subgradients(self, x):
        if np.linalg.norm(x) > 0:
            return [self.grad(x)]
        # signed unit coordinate vectors: extreme points of the unit ball that
        # the l1 geometry can exploit
        eye = np.eye(np.size(x)).reshape((-1,) + np.shape(x))
        return [self.scale * e for e in eye] + [-self.scale * e for e in eye]


class Quadratic(ConvexTerm):
    """``(rho / 2) ||x||^2``."""

    def __init__(self, rho: float):
        self.rho = rho
        self.smooth_L = rho

    def value(self, x):
        return 0.5 * self.rho * float(x @ x)

    def grad(self, x):
        return self.rho * x

    def prox(self, v, tau):
        return v / (1.0 + tau * self.rho)


class HuberL1(ConvexTerm):
    """Coordinate-wise Huber smoothing of ``||x||_1`` with width ``delta``."""

    def __init__(self, delta: float):
        self.delta = delta
        self.smooth_L = 1.0 / delta

    def value(self, x):
        a = np.abs(x)
        return float(np.sum(np.where(a <= self.delta, 0.5 * x * x / self.delta, a - 0.5 * self.delta)))

    def grad(self, x):
        return np.clip(x / self.delta, -1.0, 1.0)


class TotalVariation(ConvexTerm):
    """Anisotropic TV ``||D_h x||_1 + ||D_v x||_1`` on an image of ``shape``.

    Forward differences with a zero last row/column. The prox is computed
    by accelerated projected gradient on the dual box problem.
    """

    def __init__(self, shape, prox_iters: int = 200):
        self.shape = tuple(shape)
        self.prox_iters = prox_iters

    def _D(self, x):
        u = x.reshape(self.shape)
        gh = np.zeros_like(u)
        gv = np.zeros_like(u)
        gh[:, :-1] = u[:, 1:] - u[:, :-1]
        gv[:-1, :] = u[1:, :] - u[:-1, :]
        return gh, gv

    def _DT(self, ph, pv):
        out = np.zeros(self.shape)
        out[:, :-1] -= ph[:, :-1]
        out[:, 1:] += ph[:, :-1]
        out[:-1, :] -= pv[:-1, :]
        out[1:, :] += pv[:-1, :]
        return out.ravel()

    def value(self, x):
        gh, gv = self._D(x)
        return float(np.abs(gh).sum() + np.abs(gv).sum())

    def grad(self, x):
        gh, gv = self._D(x)
        return self._DT(np.sign(gh), np.sign(gv))

    def prox(self, v, tau):
        if tau == 0:
            return np.array(v, dtype=np.float64)
        ph = np.zeros(self.shape)
        pv = np.zeros(self.shape)
        qh, qv = ph.copy(), pv.copy()
        t = 1.0
        step = 1.0 / 8.0
        for _ in range(self.prox_iters):
            z = v - self._DT(qh, qv)
            gh, gv = self._D(z)
            nh = np.clip(qh + step * gh, -tau, tau)
            nv = np.clip(qv + step * gv, -tau, tau)
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            w = (t - 1.0) / t_new
            qh, qv = nh + w * (nh - ph), nv + w * (nv - pv)
            ph, pv, t = nh, nv, t_new
        return v - self._DT(ph, pv)


def _as_term(t) -> ConvexTerm:
    if t is None:
        return Zero()
    if isinstance(t, ConvexTerm):
        return t
    if isinstance(t, IcnnParams):
        return IcnnTerm(t)
    raise TypeError(f"cannot use {type(t).__name__} as a convex term")


# --------------------------------------------------------------------------
# objective

def data_fidelity(A: LinearOp, y, x):
    """``(0.5 ||A x - y||^2, A^T (A x - y))``."""
    r = A.apply(x) - y
    return 0.5 * float(r @ r), A.adjoint(r)


@dataclass
class Objective:
    A: LinearOp
    y: np.ndarray
    r1: ConvexTerm = field(default_factory=Zero)
    r2: ConvexTerm = field(default_factory=Zero)
    mu: float = 1.0
    _norm: float | None = field(default=None, repr=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.r1 = _as_term(self.r1)
        self.r2 = _as_term(self.r2)
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.y.shape != (self.A.out_dim,):
            raise ValueError("measurement length does not match operator")

    @classmethod
    def from_regularizer(cls, A, y, reg: DcRegularizer, mu: float = 1.0, L1=None, L2=None):
        r1 = IcnnTerm(reg.r1, L1)
        if reg.mode == "dc":
            r2 = IcnnTerm(reg.r2, L2)
        elif reg.mode == "weakly_convex":
            r2 = Quadratic(reg.rho)
        else:
            r2 = Zero()
        return cls(A, y, r1, r2, mu)

    @property
    def A_norm(self) -> float:
        """``||A||_2``: exact for explicit dense matrices, power iteration otherwise."""
        if self._norm is None:
            M = self.A.matrix
            if isinstance(M, np.ndarray) and M.size <= 4_000_000:
                self._norm = float(np.linalg.norm(M, 2))
            elif self.A.kind == "identity":
                self._norm = 1.0
            else:
                self._norm = op_norm(self.A, 300)
        return self._norm

    def value(self, x) -> float:
        L, _ = data_fidelity(self.A, self.y, x)
        return L + self.mu * (self.r1.value(x) - self.r2.value(x))

    def parts(self, x):
        """Value and the selection ``(grad L, mu g1, mu g2)``."""
        L, gL = data_fidelity(self.A, self.y, x)
        v1, g1 = self.r1.value_and_grad(x)
        v2, g2 = self.r2.value_and_grad(x)
        return L + self.mu * (v1 - v2), gL, self.mu * g1, self.mu * g2

    def grad(self, x) -> np.ndarray:
        _, gL, g1, g2 = self.parts(x)
        return gL + g1 - g2

    def smooth_bound(self) -> float | None:
        """``||A||^2 + mu L1`` with the safety factor on ``||A||``; ``None`` if L1 unknown."""
        if self.r1.smooth_L is None:
            return None
        return (NORM_SAFETY * self.A_norm) ** 2 + self.mu * self.r1.smooth_L


# --------------------------------------------------------------------------
# configuration and traces

ALGORITHMS = ("gd", "dca", "psm")


@dataclass
class SolverConfig:
    """Solver settings.

    ``alpha``: step of gd, inner step of dca (auto when ``None``), forward
    step of psm. ``gamma``: prox strength of psm, whose prox subproblem is
    ``min_z (gamma / 2) ||v - z||^2 + mu R1(z)``. With ``strict`` (default)
    psm requires ``gamma == 1 / alpha``; the bound ``alpha <= 1 / ||A||^2``
    is checked against the objective when the solve starts (or here when
    ``A_norm`` is given). ``alpha='auto'`` picks ``1 / (1.01 ||A||)^2``.

    ``inner``: ``gd`` runs N inner gradient steps; ``exact`` solves the
    inner problem to ``inner_tol``.
    """

    algorithm: str = "gd"
    T: int = 100
    N: int = 1
    alpha: float | str | None = None
    gamma: float | None = None
    x0_policy: str = "pseudo-inverse"
    x0: np.ndarray | None = None
    ridge: float = 1e-3
    inner: str = "gd"
    inner_tol: float = 1e-10
    strict: bool = True
    A_norm: float | None = None
    early_stop: bool = False
    store_iterates: bool = False
    timing: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.T < 1 or self.N < 1:
            raise ValueError("T and N must be >= 1")
        if self.x0_policy not in ("pseudo-inverse", "zeros", "custom"):
            raise ValueError(f"unknown x0 policy {self.x0_policy!r}")
        if self.x0_policy == "custom" and self.x0 is None:
            raise ValueError("x0_policy 'custom' needs x0")
        if self.inner not in ("gd", "exact"):
            raise ValueError(f"unknown inner mode {self.inner!r}")
        if isinstance(self.alpha, str) and self.alpha != "auto":
            raise ValueError("alpha must be a number, 'auto' or None")
        if isinstance(self.alpha, (int, float)) and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.algorithm == "psm":
            if self.A_norm is not None:
                self.resolve(self.A_norm)
            elif isinstance(self.alpha, (int, float)):
                self._check_gamma(float(self.alpha))

    def _check_gamma(self, alpha):
        if self.gamma is None:
            self.gamma = 1.0 / alpha
        elif self.strict and not math.isclose(self.gamma * alpha, 1.0, rel_tol=1e-12):
            raise ValueError(f"psm requires gamma = 1/alpha (got gamma={self.gamma}, alpha={alpha})")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    def resolve(self, A_norm: float) -> float:
        """Fix ``alpha`` (and ``gamma`` for psm) against ``||A||``; returns alpha."""
        if self.algorithm != "psm":
            return self.alpha
        if self.alpha in (None, "auto"):
            self.alpha = 1.0 / (NORM_SAFETY * A_norm) ** 2
            if self.strict:
                self.gamma = None
        alpha = float(self.alpha)
        if self.strict and A_norm > 0 and alpha > (1.0 + 1e-12) / A_norm ** 2:
            raise ValueError(f"psm requires alpha <= 1/||A||^2 = {1.0 / A_norm ** 2:.6g}, got {alpha:.6g}")
        self._check_gamma(alpha)
        return alpha


@dataclass
class SolverTrace:
    """Per-iteration records for ``t = 0..T`` and the final iterate."""

    t: list = field(default_factory=list)
    F: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    step_norm: list = field(default_factory=list)
    time_ms: list = field(default_factory=list)
    x: np.ndarray | None = None
    iterates: list | None = None
    surrogate: list = field(default_factory=list)   # dca: (q(x_t;x_t), q(x_{t+1};x_t), F(x_{t+1}))
    algorithm: str = ""
    alpha: float | None = None
    gamma: float | None = None
    A_norm: float | None = None

    def __len__(self):
        return len(self.t)

    def rows(self, timing: bool = True):
        for i in range(len(self.t)):
            row = [self.t[i], self.F[i], self.grad_norm[i], self.step_norm[i]]
            if timing:
                row.append(self.time_ms[i])
            yield row

    def header(self, timing: bool = True):
        h = ["t", "F", "grad-norm", "step-norm"]
        return h + ["time-ms"] if timing else h


def _initial_point(obj: Objective, cfg: SolverConfig):
    if cfg.x0_policy == "custom":
        return np.array(cfg.x0, dtype=np.float64)
    if cfg.x0_policy == "zeros":
        return np.zeros(obj.A.in_dim)
    return pseudo_inverse_init(obj.A, obj.y, cfg.ridge)


class _Recorder:
    def __init__(self, obj, cfg, algorithm):
        self.obj, self.cfg = obj, cfg
        self.trace = SolverTrace(algorithm=algorithm)
        if cfg.store_iterates:
            self.trace.iterates = []
        self.t0 = time.perf_counter()
        self.prev = None

    def record(self, t, x):
        F, gL, g1, g2 = self.obj.parts(x)
        gn = float(np.linalg.norm(gL + g1 - g2))
        sn = float(np.linalg.norm(x - self.prev)) if self.prev is not None else 0.0
        if not (math.isfinite(F) and math.isfinite(gn)) or not np.all(np.isfinite(x)):
            raise SolverError(f"non-finite iterate at t={t}", self.trace)
        if F < -1e12:
            raise SolverError(f"objective unbounded below at t={t}", self.trace)
        tr = self.trace
        tr.t.append(t)
        tr.F.append(F)
        tr.grad_norm.append(gn)
        tr.step_norm.append(sn)
        tr.time_ms.append((time.perf_counter() - self.t0) * 1e3 if self.cfg.timing else 0.0)
        if tr.iterates is not None:
            tr.iterates.append(x.copy())
        self.prev = x.copy()
        tr.x = x
        return F, gL, g1, g2

    def converged(self, x):
        if not self.cfg.early_stop or self.prev is None or len(self.trace.step_norm) < 2:
            return False
        nx = np.linalg.norm(x)
        return nx > 0 and self.trace.step_norm[-1] / nx < 1e-7


# --------------------------------------------------------------------------
# algorithms

def solve_gd(obj: Objective, cfg: SolverConfig) -> SolverTrace:
    """``x <- x - alpha (grad L + mu g1 - mu g2)``.

    Default step ``1 / ((1.01 ||A||)^2 + mu L1)`` needs ``r1.smooth_L``;
    otherwise ``cfg.alpha`` must be set.
    """
    alpha = cfg.alpha if isinstance(cfg.alpha, (int, float)) else None
    if alpha is None:
        bound = obj.smooth_bound()
        if bound is None:
            raise ValueError("gd needs alpha or a smoothness constant for R1")
        alpha = 1.0 / bound
    rec = _Recorder(obj, cfg, "gd")
    rec.trace.alpha = alpha
    x = _initial_point(obj, cfg)
    _, gL, g1, g2 = rec.record(0, x)
    for t in range(1, cfg.T + 1):
        x = x - alpha * (gL + g1 - g2)
        _, gL, g1, g2 = rec.record(t, x)
        if rec.converged(x):
            break
    return rec.trace


def _surrogate(obj, g, xt, Ft, R2t):
    """DCA majorizer ``q(.; x_t)`` as ``(value, grad)`` callables."""

    def val(x):
        L, _ = data_fidelity(obj.A, obj.y, x)
        return L + obj.mu * obj.r1.value(x) - R2t - g @ (x - xt)

    def vgrad(x):
        L, gL = data_fidelity(obj.A, obj.y, x)
        v1, g1 = obj.r1.value_and_grad(x)
        return L + obj.mu * v1 - R2t - g @ (x - xt), gL + obj.mu * g1 - g

    return val, vgrad


def _dca_inner_gd(obj, vgrad, x, step, N):
    for _ in range(N):
        _, gq = vgrad(x)
        x = x - step * gq
    return x


def _dca_inner_prox(obj, g, x, step, N, tol=0.0):
    # proximal gradient on q: smooth part L - <g, x>, prox on mu * R1
    for _ in range(N):
        _, gL = data_fidelity(obj.A, obj.y, x)
        x_new = obj.r1.prox(x - step * (gL - g), step * obj.mu)
        # fixed point of the prox-gradient map is the surrogate minimizer
        done = np.linalg.norm(x_new - x) <= tol * (1.0 + np.linalg.norm(x))
        x = x_new
        if done:
            break
    return x


def _dca_inner_exact(obj, val, vgrad, x, step, tol):
    # one majorized gradient step, then polish; keep whichever is lower
    _, gq = vgrad(x)
    x1 = x - step * gq
    q1 = val(x1)
    res = sopt.minimize(vgrad, x1, jac=True, method="L-BFGS-B",
                        options={"gtol": tol, "ftol": 1e-16, "maxiter": 20000, "maxcor": 30})
    if np.all(np.isfinite(res.x)) and res.fun <= q1:
        return res.x
    return x1


def solve_dca(obj: Objective, cfg: SolverConfig) -> SolverTrace:
    """Difference-of-convex algorithm.

    Each outer step takes ``g_t = mu * grad R2(x_t)`` and approximately
    minimizes ``q(x; x_t) = L(x) + mu R1(x) - mu R2(x_t) - <g_t, x - x_t>``
    from ``x_t``: N gradient steps (or proximal-gradient steps when R1 has
    a prox), or an exact solve with ``cfg.inner='exact'``.
    """
    rec = _Recorder(obj, cfg, "dca")
    use_prox = obj.r1.prox(np.zeros(obj.A.in_dim), 0.0) is not None and not isinstance(obj.r1, Zero)
    if isinstance(cfg.alpha, (int, float)):
        step = float(cfg.alpha)
    elif use_prox:
        step = 1.0 / (NORM_SAFETY * obj.A_norm) ** 2
    else:
        bound = obj.smooth_bound()
        if bound is None:
            raise ValueError("dca needs alpha or a smoothness constant for R1")
        step = 1.0 / bound
    rec.trace.alpha = step
    x = _initial_point(obj, cfg)
    Ft, _, _, _ = rec.record(0, x)
    for t in range(1, cfg.T + 1):
        R2t = obj.mu * obj.r2.value(x)
        best = None
        # at a kink of R2 every subgradient gives a valid majorizer; keep the
        # candidate step with the lowest objective
        cands = obj.r2.subgradients(x)
        for g in cands:
            g = obj.mu * g
            val, vgrad = _surrogate(obj, g, x, Ft, R2t)
            if use_prox:
                if cfg.inner == "gd":
                    x_new = _dca_inner_prox(obj, g, x, step, cfg.N)
                else:
                    x_new = _dca_inner_prox(obj, g, x, step, 10 * cfg.N + 5000, cfg.inner_tol)
            elif cfg.inner == "exact":
                x_new = _dca_inner_exact(obj, val, vgrad, x, step, cfg.inner_tol)
            else:
                x_new = _dca_inner_gd(obj, vgrad, x, step, cfg.N)
            if not np.all(np.isfinite(x_new)):
                raise SolverError(f"dca inner solve diverged at t={t}", rec.trace)
            F_new = obj.value(x_new) if len(cands) > 1 else 0.0
            if best is None or F_new < best[0]:
                best = (F_new, x_new, val)
        _, x_new, val = best
        q_t, q_new = val(x), val(x_new)
        x = x_new
        Ft, _, _, _ = rec.record(t, x)
        rec.trace.surrogate.append((q_t, q_new, Ft))
        if rec.converged(x):
            break
    return rec.trace


def _prox_inner(obj, v, gamma, N, step, exact, tol):
    """``argmin_z (gamma/2)||z - v||^2 + mu R1(z)`` by gradient steps from ``v``."""
    z = v.copy()
    if not exact:
        for _ in range(N):
            z = z - step * (gamma * (z - v) + obj.mu * obj.r1.grad(z))
        return z

    def phi(z):
        val, g = obj.r1.value_and_grad(z)
        d = z - v
        return 0.5 * gamma * float(d @ d) + obj.mu * val, gamma * d + obj.mu * g

    scale = max(1.0, np.linalg.norm(gamma * v))
    if obj.r1.smooth_L is None:
        # no smoothness constant for a fixed step: quasi-Newton instead
        res = sopt.minimize(phi, z, jac=True, method="L-BFGS-B",
                            options={"gtol": tol * scale, "ftol": 1e-16, "maxiter": 20000, "maxcor": 30})
        return res.x
    f, g = phi(z)
    s = step
    for _ in range(100000):
        if np.linalg.norm(g) <= tol * scale:
            break
        # strongly convex and smooth: the 1/(gamma + mu L1) step contracts;
        # halve it if an underestimated L1 makes it overshoot
        zn = z - s * g
        fn, gn = phi(zn)
        if fn > f + 1e-12 * (1.0 + abs(f)):
            s *= 0.5
            if s < 1e-20:
                return z
            continue
        z, f, g = zn, fn, gn
    return z


def solve_psm(obj: Objective, cfg: SolverConfig) -> SolverTrace:
    """Proximal subgradient method.

    ``x_{t+1} = argmin_z (gamma/2)||z - v_t||^2 + mu R1(z)`` with
    ``v_t = x_t - alpha (grad L(x_t) - mu grad R2(x_t))``. Closed-form
    proxes (l1, TV, ...) are used when available; ICNN proxes are
    approximated by N gradient steps from ``v_t`` (or solved to
    ``inner_tol`` with ``inner='exact'``).
    """
    alpha = cfg.resolve(obj.A_norm)
    gamma = float(cfg.gamma)
    rec = _Recorder(obj, cfg, "psm")
    rec.trace.alpha, rec.trace.gamma, rec.trace.A_norm = alpha, gamma, obj.A_norm
    L1 = obj.r1.smooth_L
    step = 1.0 / (gamma + obj.mu * L1) if L1 is not None else 1.0 / gamma
    x = _initial_point(obj, cfg)
    _, gL, _, g2 = rec.record(0, x)
    for t in range(1, cfg.T + 1):
        v = x - alpha * (gL - g2)
        z = obj.r1.prox(v, obj.mu / gamma)
        if z is None:
            z = _prox_inner(obj, v, gamma, cfg.N, step, cfg.inner == "exact", cfg.inner_tol)
        if not np.all(np.isfinite(z)):
            raise SolverError(f"psm prox diverged at t={t}", rec.trace)
        x = z
        _, gL, _, g2 = rec.record(t, x)
        if rec.converged(x):
            break
    return rec.trace


def solve(obj: Objective, cfg: SolverConfig) -> SolverTrace:
    fn = {"gd": solve_gd, "dca": solve_dca, "psm": solve_psm}[cfg.algorithm]
    trace = fn(obj, cfg)
    trace.A_norm = obj.A_norm
    return trace


# --------------------------------------------------------------------------
# certificates

@dataclass
class RateReport:
    name: str
    lhs: float
    rhs: float
    passed: bool
    horizon: int
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: lhs={self.lhs:.6e} rhs={self.rhs:.6e} (T={self.horizon})"


def _gap(trace):
    F = np.asarray(trace.F)
    return F[0] - F.min()


def check_dca_rate(trace: SolverTrace, L1_hat: float, A_norm: float) -> RateReport:
    """Averaged squared-gradient bound for DCA.

    Checks ``(1/T) sum_{t<T} ||grad F(x_t)||^2 <= 2 (||A||^2 + L1)(F(x_0) - min_t F(x_t)) / T``
    for a trace ``x_0..x_T``, i.e. the bound at horizon ``T - 1``, the last
    one whose decrease the trace has realised. ``L1_hat`` is the smoothness
    constant of the regularizer part ``mu R1`` as it enters F.
    """
    T = len(trace) - 1
    g = np.asarray(trace.grad_norm[:T])
    lhs = float(np.mean(g ** 2))
    rhs = 2.0 * (A_norm ** 2 + L1_hat) * _gap(trace) / T
    return RateReport("dca-rate", lhs, rhs, lhs <= rhs, T - 1, {"L1": L1_hat, "A_norm": A_norm})


def check_psm_rates(trace: SolverTrace, L2_hat: float | None, A_norm: float, alpha: float):
    """Averaged step and (when ``L2_hat`` is given) gradient bounds for PSM.

    Part 1: ``(1/T) sum_{t=1..T} ||x_t - x_{t-1}||^2 <= 2 alpha (F(x_0) - min F) / T``.
    Part 2: ``(1/T) sum_{t=1..T} ||grad F(x_t)||^2 <= 2 alpha (||A||^2 + L2 + 1/alpha)^2 (F(x_0) - min F) / T``.
    ``L2_hat`` is the smoothness constant of ``mu R2``; pass ``None`` when R2
    is not smooth to skip part 2.
    """
    T = len(trace) - 1
    gap = _gap(trace)
    steps = np.asarray(trace.step_norm[1:])
    lhs1 = float(np.mean(steps ** 2))
    rhs1 = 2.0 * alpha * gap / T
    reports = [RateReport("psm-step-rate", lhs1, rhs1, lhs1 <= rhs1, T - 1, {"alpha": alpha})]
    if L2_hat is not None:
        g = np.asarray(trace.grad_norm[1:])
        lhs2 = float(np.mean(g ** 2))
        rhs2 = 2.0 * alpha * (A_norm ** 2 + L2_hat + 1.0 / alpha) ** 2 * gap / T
        reports.append(RateReport("psm-grad-rate", lhs2, rhs2, lhs2 <= rhs2, T - 1,
                                  {"alpha": alpha, "L2": L2_hat, "A_norm": A_norm}))
    return reports


def check_monotone(trace: SolverTrace, rtol: float = 1e-8) -> RateReport:
    """``F(x_{t+1}) <= F(x_t) + rtol (1 + |F(x_t)|)`` for all t."""
    F = np.asarray(trace.F)
    excess = F[1:] - F[:-1] - rtol * (1.0 + np.abs(F[:-1]))
    worst = float(excess.max()) if excess.size else -math.inf
    return RateReport("monotone", worst, 0.0, worst <= 0.0, len(F) - 1)


def check_sufficient_decrease(trace: SolverTrace, alpha: float, atol: float = 1e-8) -> RateReport:
    """PSM per-step ``F(x_t) - F(x_{t+1}) >= ||x_t - x_{t+1}||^2 / (2 alpha) - atol``."""
    F = np.asarray(trace.F)
    s = np.asarray(trace.step_norm[1:])
    slack = (F[:-1] - F[1:]) - s ** 2 / (2.0 * alpha) + atol
    worst = float(slack.min()) if slack.size else math.inf
    return RateReport("psm-sufficient-decrease", -worst, 0.0, worst >= 0.0, len(F) - 1)


def check_majorization(trace: SolverTrace, atol: float = 1e-10) -> RateReport:
    """DCA: ``q(x_t; x_t) = F(x_t)`` and ``q(x_{t+1}; x_t) >= F(x_{t+1})``."""
    worst = 0.0
    F = trace.F
    for t, (q_t, q_new, F_new) in enumerate(trace.surrogate):
        scale = 1.0 + abs(F[t])
        worst = max(worst, abs(q_t - F[t]) / scale, (F_new - q_new) / scale)
    return RateReport("dca-majorization", worst, atol, worst <= atol, len(F) - 1)
