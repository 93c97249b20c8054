"""Planar star bodies, radial summaries of densities, and gauge identities.

A :class:`StarBody` stores radial samples ``r_j = rho_K(u_j)`` on ``M``
uniformly spaced directions ``u_j = (cos 2 pi j / M, sin 2 pi j / M)``.
Between nodes the boundary is the chord joining consecutive boundary
points, so the gauge is linear in ``x`` on each angular cone. This keeps
the body positive and, when the samples come from a convex body, exactly
convex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad_vec

__all__ = [
    "D",
    "StarBody",
    "RadialDensity",
    "Gaussian",
    "Mixture",
    "disc",
    "lp_ball",
    "ellipse",
    "from_gauge",
    "radial_moment",
    "rho_p_alpha",
    "optimal_star_body",
    "gauge",
    "harmonic_combination",
    "harmonic_difference",
    "dual_mixed_volume",
    "lutwak_check",
    "jensen_check",
    "dc_witness_check",
    "objective_identity_check",
    "dc_objective",
    "perturbation_sweep",
    "contour_field",
]

D = 2  # ambient dimension


# --------------------------------------------------------------------------
# star bodies

@dataclass(frozen=True)
class StarBody:
    radii: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=np.float64)
        if r.ndim != 1 or r.size < 3:
            raise ValueError("need at least 3 radial samples")
        if not np.all(np.isfinite(r)) or np.any(r <= 0):
            raise ValueError("radial samples must be positive and finite")
        object.__setattr__(self, "radii", r)

    @property
    def M(self) -> int:
        return self.radii.size

    @property
    def step(self) -> float:
        return 2.0 * math.pi / self.M

    def angles(self) -> np.ndarray:
        return np.arange(self.M) * self.step

    def directions(self) -> np.ndarray:
        a = self.angles()
        return np.column_stack([np.cos(a), np.sin(a)])

    def gauge_nodes(self) -> np.ndarray:
        """Gauge on the grid directions; ``gauge_nodes() * radii == 1`` there."""
        return 1.0 / self.radii

    def gauge(self, X) -> np.ndarray:
        """Gauge at points ``X`` (shape ``(2,)`` or ``(n, 2)``); 0 at the origin."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        phi = np.mod(np.arctan2(X[:, 1], X[:, 0]), 2.0 * math.pi)
        h = self.step
        j = np.minimum((phi // h).astype(np.int64), self.M - 1)
        k = (j + 1) % self.M
        a = phi - j * h
        s = math.sin(h)
        norm = np.hypot(X[:, 0], X[:, 1])
        # chord from r_j u_j to r_k u_k: gauge(u) = [sin(h - a)/r_j + sin(a)/r_k] / sin(h)
        g = (np.sin(h - a) / self.radii[j] + np.sin(a) / self.radii[k]) / s
        out = norm * g
        return out[0] if single else out

    def radial(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        n = np.hypot(X[..., 0], X[..., 1])
        return n / self.gauge(X)

    def scaled(self, c: float) -> "StarBody":
        return StarBody(c * self.radii)

    def volume(self) -> float:
        """``(1/2) sum r_j^2 h``, the trapezoid rule for ``(1/d) int rho^d``."""
        return dual_mixed_volume(self, self, 0.0)

    def to_csv_rows(self):
        return zip(self.angles(), self.radii)


def _grid(M):
    a = np.arange(M) * (2.0 * math.pi / M)
    return np.column_stack([np.cos(a), np.sin(a)])


def from_gauge(fn: Callable[[np.ndarray], np.ndarray], M: int = 4096) -> StarBody:
    """Sample ``rho = 1 / gauge`` of a positively homogeneous function."""
    return StarBody(1.0 / np.asarray(fn(_grid(M)), dtype=np.float64))


def disc(radius: float = 1.0, M: int = 4096) -> StarBody:
    return StarBody(np.full(M, float(radius)))


def lp_ball(p: float, radius: float = 1.0, M: int = 4096) -> StarBody:
    """``{x : ||x||_p <= radius}``; ``p = inf`` allowed, ``p < 1`` gives a non-convex star body."""
    U = _grid(M)
    if math.isinf(p):
        n = np.max(np.abs(U), axis=1)
    else:
        n = np.sum(np.abs(U) ** p, axis=1) ** (1.0 / p)
    return StarBody(radius / n)


def ellipse(a: float, b: float, rotation: float = 0.0, M: int = 4096) -> StarBody:
    U = _grid(M)
    c, s = math.cos(rotation), math.sin(rotation)
    x = c * U[:, 0] + s * U[:, 1]
    y = -s * U[:, 0] + c * U[:, 1]
    return StarBody(1.0 / np.sqrt((x / a) ** 2 + (y / b) ** 2))


def gauge(K: StarBody, x) -> float:
    return float(K.gauge(np.asarray(x, dtype=np.float64)))


def _aligned(K, C):
    if K.M != C.M:
        raise ValueError(f"angular grids differ ({K.M} vs {C.M})")


def harmonic_combination(K: StarBody, C: StarBody, alpha: float) -> StarBody:
    """Body ``M`` with ``rho_M^-alpha = rho_K^-alpha + rho_C^-alpha`` node-wise."""
    _aligned(K, C)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return StarBody((K.radii ** -alpha + C.radii ** -alpha) ** (-1.0 / alpha))


def harmonic_difference(Mb: StarBody, C: StarBody, alpha: float) -> StarBody:
    """Body ``K`` with ``gauge_K^alpha = gauge_M^alpha - gauge_C^alpha``.

    Requires ``M`` strictly inside ``C`` in every grid direction.
    """
    _aligned(Mb, C)
    diff = Mb.radii ** -alpha - C.radii ** -alpha
    if np.any(diff <= 0):
        j = int(np.argmin(diff))
        raise ValueError(f"M is not strictly inside C at direction {j} (angle {j * Mb.step:.6f} rad)")
    return StarBody(diff ** (-1.0 / alpha))


def dual_mixed_volume(C: StarBody, K: StarBody, i: float) -> float:
    """``(1/d) int rho_C^(d-i) rho_K^i du`` by the periodic trapezoid rule."""
    _aligned(C, K)
    f = C.radii ** (D - i) * K.radii ** i
    return float(np.sum(f) * C.step / D)


def lutwak_check(C: StarBody, K: StarBody, alpha: float, eq_tol: float = 1e-6) -> CheckReport:
    """``V_-alpha(C, K) >= vol(C)^((d+alpha)/d) vol(K)^(-alpha/d)``, equality iff dilates.

    ``value`` is the relative excess of the left side. ``detail['equality']``
    flags excess below ``eq_tol``; ``detail['dilate']`` flags ``K`` being a
    dilate of ``C`` on the grid (radius ratio constant to ``eq_tol``).
    The check passes when the inequality holds and the two flags agree.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    lhs = dual_mixed_volume(C, K, -alpha)
    rhs = C.volume() ** ((D + alpha) / D) * K.volume() ** (-alpha / D)
    excess = (lhs - rhs) / rhs
    ratio = K.radii / C.radii
    dilate = bool(np.ptp(ratio) <= eq_tol * ratio.mean())
    equality = bool(excess <= eq_tol)
    ok = excess >= -1e-12 and equality == dilate
    return CheckReport("lutwak", ok, float(excess), {"equality": equality, "dilate": dilate})


# --------------------------------------------------------------------------
# densities

class RadialDensity:
    """A density on the plane that can be evaluated and sampled."""

    tag = "custom"

    def pdf(self, X) -> np.ndarray:
        raise NotImplementedError

    def sample(self, n: int, rng) -> np.ndarray:
        raise NotImplementedError

    def scale_hint(self) -> float:
        return 1.0


@dataclass
class Gaussian(RadialDensity):
    mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    cov: np.ndarray = field(default_factory=lambda: np.eye(2))
    tag = "gaussian"

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if np.isscalar(self.cov) or self.cov.ndim == 0:
            self.cov = float(self.cov) * np.eye(2)
        self._prec = np.linalg.inv(self.cov)
        self._norm = 1.0 / (2.0 * math.pi * math.sqrt(np.linalg.det(self.cov)))
        self._chol = np.linalg.cholesky(self.cov)

    def pdf(self, X):
        Z = np.asarray(X, dtype=np.float64) - self.mean
        q = np.einsum("...i,ij,...j->...", Z, self._prec, Z)
        return self._norm * np.exp(-0.5 * q)

    def sample(self, n, rng):
        return self.mean + rng.standard_normal((n, 2)) @ self._chol.T

    def scale_hint(self):
        return float(np.linalg.norm(self.mean) + math.sqrt(np.max(np.linalg.eigvalsh(self.cov))))


@dataclass
class Mixture(RadialDensity):
    weights: np.ndarray
    components: list
    tag = "mixture"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-12):
            raise ValueError("mixture weights must be non-negative and sum to 1")
        self.weights = w

    def pdf(self, X):
        return sum(w * c.pdf(X) for w, c in zip(self.weights, self.components))

    def sample(self, n, rng):
        idx = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty((n, 2))
        for k, comp in enumerate(self.components):
            sel = idx == k
            out[sel] = comp.sample(int(sel.sum()), rng)
        return out

    def scale_hint(self):
        return max(c.scale_hint() for c in self.components)


CONVENTIONS = ("identity", "displayed")


def _exponent(alpha, convention):
    if convention == "identity":
        # t^(d+alpha-1): homogeneous of degree -1 and matches spherical coordinates
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        return D + alpha - 1
    if convention == "displayed":
        # t^(d+1-alpha): integrable at 0 only for alpha < d+2
        if not 0 < alpha < D + 2:
            raise ValueError(f"alpha must lie in (0, {D + 2}) for a finite radial integral")
        return D + 1 - alpha
    raise ValueError(f"unknown convention {convention!r}")


def radial_moment(p: RadialDensity, alpha: float, dirs, rtol: float = 1e-10,
                  convention: str = "identity") -> np.ndarray:
    """``int_0^inf t^e p(t u) dt`` for each row ``u`` of ``dirs``.

    ``e = d + alpha - 1`` (default) so that ``E ||x||_K^alpha`` equals
    ``int moment(u) rho_K(u)^-alpha du``; ``convention='displayed'`` uses
    ``e = d + 1 - alpha``. The two agree at ``alpha = 1``.

    Integrates adaptively over ``[0, s], [s, 2s], ...`` until the last
    segment is below ``1e-12`` of the accumulated value in every direction.
    """
    expo = _exponent(alpha, convention)
    U = np.atleast_2d(np.asarray(dirs, dtype=np.float64))

    def integrand(t):
        if t == 0.0:
            return p.pdf(0.0 * U) if expo == 0 else np.zeros(len(U))
        return t ** expo * p.pdf(t * U)

    s = max(p.scale_hint(), 1e-3)
    total, _ = quad_vec(integrand, 0.0, s, epsrel=rtol, epsabs=0.0, limit=2000)
    lo = s
    prev = math.inf
    rising = 0
    for _ in range(80):
        seg, _ = quad_vec(integrand, lo, 2.0 * lo, epsrel=rtol, epsabs=0.0, limit=2000)
        total = total + seg
        lo *= 2.0
        if np.all(seg <= 1e-12 * total):
            return total
        rel = float(np.max(seg / np.maximum(total, 1e-300)))
        rising = rising + 1 if rel >= prev else 0
        if rising >= 8:
            break
        prev = rel
    raise ValueError("radial integral appears divergent (tail not decreasing)")


def rho_p_alpha(p: RadialDensity, alpha: float, u, rtol: float = 1e-10, convention: str = "identity"):
    """``(int_0^inf t^e p(t u) dt)^(1/(d+alpha))``, see :func:`radial_moment`.

    ``u`` is a direction (2-vector, normalised here) or an ``(n, 2)`` array
    of directions.
    """
    U = np.asarray(u, dtype=np.float64)
    single = U.ndim == 1
    U = np.atleast_2d(U)
    U = U / np.linalg.norm(U, axis=1, keepdims=True)
    out = radial_moment(p, alpha, U, rtol, convention) ** (1.0 / (D + alpha))
    return float(out[0]) if single else out


def optimal_star_body(p_r: RadialDensity, p_n: RadialDensity | None, alpha: float,
                      M: int = 4096, unit_volume: bool = False) -> StarBody:
    """Star body whose gauge is ``(rho_r^(d+a) - rho_n^(d+a))^(-1/(d+a))``.

    ``p_n=None`` drops the second density. Raises when
    ``rho_r <= rho_n`` in some grid direction.
    """
    U = _grid(M)
    mr = radial_moment(p_r, alpha, U)
    mn = radial_moment(p_n, alpha, U) if p_n is not None else np.zeros(M)
    diff = mr - mn
    if np.any(diff <= 0) or np.any(mr <= 0):
        j = int(np.argmin(diff))
        raise ValueError(
            f"rho_r must exceed rho_n in every direction; fails at direction {j} "
            f"(angle {2 * math.pi * j / M:.6f} rad)"
        )
    K = StarBody(diff ** (1.0 / (D + alpha)))
    if unit_volume:
        K = K.scaled(K.volume() ** (-1.0 / D))
    return K


# --------------------------------------------------------------------------
# checks

@dataclass
class CheckReport:
    name: str
    passed: bool
    value: float
    detail: dict = field(default_factory=dict)

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.value:.6e}"


def jensen_check(f: Callable[[np.ndarray], np.ndarray], box=(-3.0, 3.0), triples: int = 10_000,
                 seed: int = 0, tol: float = 1e-9, dim: int = D) -> CheckReport:
    """Random Jensen triples ``f(l x + (1-l) y) <= l f(x) + (1-l) f(y) + tol * max(1, |.|)``."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(box[0], box[1], (triples, dim))
    Y = rng.uniform(box[0], box[1], (triples, dim))
    lam = rng.uniform(0.0, 1.0, (triples, 1))
    fx, fy = f(X), f(Y)
    fz = f(lam * X + (1 - lam) * Y)
    rhs = lam[:, 0] * fx + (1 - lam[:, 0]) * fy
    scale = np.maximum(1.0, np.maximum.reduce([np.abs(fx), np.abs(fy), np.abs(fz)]))
    viol = (fz - rhs) / scale
    worst = float(viol.max())
    return CheckReport("jensen", worst <= tol, worst, {"violations": int(np.sum(viol > tol))})


def dc_witness_check(K: StarBody, C: StarBody, alpha: float, samples: int = 10_000,
                     seed: int = 0, tol: float = 1e-9) -> dict:
    """Verify ``gauge_K^a = gauge_M^a - gauge_C^a`` with both parts convex.

    ``M`` is the alpha-harmonic combination of ``K`` and ``C``. Returns a
    dict of :class:`CheckReport` keyed ``M-convex``, ``C-convex``,
    ``identity``, plus ``passed``.
    """
    if alpha < 1:
        raise ValueError("the DC witness needs alpha >= 1")
    Mb = harmonic_combination(K, C, alpha)
    fM = lambda X: Mb.gauge(X) ** alpha  # noqa: E731
    fC = lambda X: C.gauge(X) ** alpha  # noqa: E731
    rep = {
        "M-convex": jensen_check(fM, triples=samples, seed=seed, tol=tol),
        "C-convex": jensen_check(fC, triples=samples, seed=seed + 1, tol=tol),
    }
    # identity on the grid directions (exact by construction up to rounding)
    lhs = K.gauge_nodes() ** alpha
    rhs = Mb.gauge_nodes() ** alpha - C.gauge_nodes() ** alpha
    err = float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs))))
    rep["identity"] = CheckReport("identity", err <= 1e-12, err)
    rep["passed"] = all(r.passed for r in rep.values())
    rep["M"] = Mb
    return rep


def dc_objective(p_r, p_n, alpha: float, K: StarBody, moments=None) -> float:
    """``int (rho_r^(d+a) - rho_n^(d+a)) rho_K^-a du`` on the grid of ``K``."""
    if moments is None:
        U = K.directions()
        mr = radial_moment(p_r, alpha, U)
        mn = radial_moment(p_n, alpha, U) if p_n is not None else 0.0
        moments = mr - mn
    return float(np.sum(moments * K.radii ** -alpha) * K.step)


def perturbation_sweep(p_r, p_n, alpha: float, K: StarBody, trials: int = 50, amp: float = 0.01,
                       seed: int = 0, tol: float = 1e-12) -> CheckReport:
    """Radial +-``amp`` bumps of a unit-volume body, renormalised; the objective must not drop."""
    U = K.directions()
    mom = radial_moment(p_r, alpha, U) - (radial_moment(p_n, alpha, U) if p_n is not None else 0.0)
    K = K.scaled(K.volume() ** (-1.0 / D))
    base = dc_objective(p_r, p_n, alpha, K, mom)
    rng = np.random.default_rng(seed)
    ang = K.angles()
    worst = math.inf
    for _ in range(trials):
        c = rng.uniform(0, 2 * math.pi)
        w = rng.uniform(0.05, 0.5)
        sign = rng.choice([-1.0, 1.0])
        dist = np.angle(np.exp(1j * (ang - c)))
        bump = 1.0 + sign * amp * np.exp(-0.5 * (dist / w) ** 2)
        Kp = StarBody(K.radii * bump)
        Kp = Kp.scaled(Kp.volume() ** (-1.0 / D))
        worst = min(worst, dc_objective(p_r, p_n, alpha, Kp, mom) - base)
    return CheckReport("perturbation", worst >= -tol * abs(base), worst, {"base": base})


def objective_identity_check(p: RadialDensity, alpha: float, K: StarBody, mc_samples: int = 1_000_000,
                             seed: int = 0):
    """Monte-Carlo ``E ||x||_K^alpha`` against ``int rho_p^(d+a) rho_K^-a du``.

    Returns ``(mc_mean, mc_stderr, quadrature, n_stderr)``.
    """
    U = K.directions()
    mom = radial_moment(p, alpha, U)  # alpha = 0 integrates the total mass
    quad_val = float(np.sum(mom * K.radii ** -alpha) * K.step)
    rng = np.random.default_rng(seed)
    X = p.sample(mc_samples, rng)
    vals = K.gauge(X) ** alpha
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(mc_samples))
    nse = abs(mean - quad_val) / se if se > 0 else (0.0 if mean == quad_val else math.inf)
    return mean, se, quad_val, nse


def contour_field(K: StarBody, lo: float = -3.0, hi: float = 3.0, res: int = 121, alpha: float = 1.0):
    """Gauge^alpha on a ``res x res`` grid; returns ``(xs, ys, values)``."""
    xs = np.linspace(lo, hi, res)
    XX, YY = np.meshgrid(xs, xs)
    pts = np.column_stack([XX.ravel(), YY.ravel()])
    return xs, xs, (K.gauge(pts) ** alpha).reshape(res, res)
