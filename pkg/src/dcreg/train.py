"""Adversarial-regularization training of difference-of-ICNN regularizers.

The critic loss over a clean batch ``xc``, an artifact batch ``xn`` and
penalty points ``xp`` is::

    mean R(xc) - mean R(xn) + lam * mean (||grad_x R(xp)|| - 1)_+^2

Its parameter gradient is computed without reverse-over-reverse: a first
pass gets ``g_k = grad_x R(xp_k)``; then, freezing ``v_k = g_k / ||g_k||``
and ``c_k = 2 lam (||g_k|| - 1)_+ / B``, the penalty gradient equals the
parameter gradient of ``sum_k c_k <grad_x R(xp_k), v_k>``, a tangent
(directional-derivative) pass through the network.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .icnn import DcRegularizer, build_graph, icnn_grad_x_batch, dc_eval_batch
from .linops import LinearOp

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "SampleSource",
    "TrainLog",
    "TrainingDiverged",
    "ar_loss",
    "train",
    "separation",
    "regularization_weight",
    "Adam",
]

LOG_COLUMNS = ("epoch", "loss", "clean-term", "noisy-term", "penalty-term", "val-psnr")


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, log_rows):
        super().__init__(msg)
        self.log_rows = log_rows


@dataclass
class TrainConfig:
    lambda_gp: float = 10.0
    lr: float = 5e-5
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    optimizer: str = "adam"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    penalty_points: str = "interpolate"   # interpolate | clean | noisy
    mu: float | None = None               # variational weight override

    def __post_init__(self):
        if self.lambda_gp <= 0:
            raise ValueError("lambda_gp must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.penalty_points not in ("interpolate", "clean", "noisy"):
            raise ValueError(f"unknown penalty sampling {self.penalty_points!r}")


@dataclass
class SampleSource:
    """Unpaired clean samples and pseudo-inverse reconstructions (rows)."""

    clean: np.ndarray
    noisy: np.ndarray

    def __post_init__(self):
        self.clean = np.atleast_2d(np.asarray(self.clean, dtype=np.float64))
        self.noisy = np.atleast_2d(np.asarray(self.noisy, dtype=np.float64))
        if len(self.clean) == 0 or len(self.noisy) == 0:
            raise ValueError("both sample sets must be nonempty")
        if self.clean.shape[1] != self.noisy.shape[1]:
            raise ValueError("clean and noisy samples differ in dimension")


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    best_epoch: int | None = None

    def as_rows(self):
        return [[r[c] for c in LOG_COLUMNS] for r in self.rows]


# --------------------------------------------------------------------------
# loss

_LOSS_GRAPHS: dict = {}


def _loss_graph(r: DcRegularizer):
    key = tuple((pfx, n.depth, n.activation, n.act_param) for pfx, n in r.networks().items())
    g = _LOSS_GRAPHS.get(key)
    if g is not None:
        return g
    sign = {"r1.": 1.0, "r2.": -1.0}
    clean_terms, noisy_terms, tan_terms = [], [], []
    for pfx, net in r.networks().items():
        vc, _ = build_graph(net, pfx, "xc")
        vn, _ = build_graph(net, pfx, "xn")
        _, tp = build_graph(net, pfx, "xp", "v")
        s = sign[pfx]
        clean_terms.append(dc.scale(dc.reduce_sum(vc), s))
        noisy_terms.append(dc.scale(dc.reduce_sum(vn), s))
        tan_terms.append(dc.scale(tp, s))

    def total(nodes):
        out = nodes[0]
        for n in nodes[1:]:
            out = dc.add(out, n)
        return out

    clean = total(clean_terms)
    noisy = total(noisy_terms)
    tangent = total(tan_terms)
    # leaves wc, wn carry 1/Bc and -1/Bn so the graph is batch-size agnostic
    surrogate = dc.add(
        dc.add(dc.mul(clean, dc.var("wc")), dc.mul(noisy, dc.var("wn"))),
        dc.reduce_sum(dc.mul(tangent, dc.var("c"))),
    )
    g = (surrogate, clean, noisy)
    _LOSS_GRAPHS[key] = g
    return g


def input_grad_batch(r: DcRegularizer, X) -> np.ndarray:
    g = icnn_grad_x_batch(r.r1, X)
    if r.mode == "dc":
        g = g - icnn_grad_x_batch(r.r2, X)
    elif r.mode == "weakly_convex":
        g = g - r.rho * X
    return g


def penalty_points(xc, xn, how: str, rng) -> np.ndarray:
    if how == "clean":
        return xc.copy()
    if how == "noisy":
        return xn.copy()
    k = min(len(xc), len(xn))
    u = rng.uniform(size=(k, 1))
    return u * xc[:k] + (1.0 - u) * xn[:k]


def ar_loss(r: DcRegularizer, xc, xn, lam: float, rng=None, xp=None, how: str = "interpolate"):
    """Critic loss and its parameter gradients.

    Returns ``(loss, grads, terms)`` with ``grads`` keyed like
    :meth:`DcRegularizer.named` and ``terms`` holding the clean, noisy and
    penalty parts.
    """
    xc = np.atleast_2d(np.asarray(xc, dtype=np.float64))
    xn = np.atleast_2d(np.asarray(xn, dtype=np.float64))
    if xc.shape[1] != xn.shape[1] or xc.shape[1] != r.input_dim:
        raise dc.ShapeError("batch dimensions do not match the regularizer")
    if xp is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        xp = penalty_points(xc, xn, how, rng)
    g = input_grad_batch(r, xp)
    gn = np.linalg.norm(g, axis=1)
    hinge = np.maximum(gn - 1.0, 0.0)
    B = len(xp)
    pen = lam * float(np.mean(hinge ** 2))
    v = np.divide(g, gn[:, None], out=np.zeros_like(g), where=gn[:, None] > 0)
    c = 2.0 * lam * hinge / B

    surrogate, clean_node, noisy_node = _loss_graph(r)
    tape = dc.Tape()
    inputs = {"xc": xc, "xn": xn, "xp": xp, "v": v, "c": c,
              "wc": np.array(1.0 / len(xc)), "wn": np.array(-1.0 / len(xn)), **r.named()}
    tape.forward(surrogate, inputs)
    grads = tape.backward()
    clean_term = float(tape.value(clean_node)) / len(xc)
    noisy_term = float(tape.value(noisy_node)) / len(xn)
    if r.mode == "weakly_convex":
        clean_term -= 0.5 * r.rho * float(np.mean(np.einsum("ij,ij->i", xc, xc)))
        noisy_term -= 0.5 * r.rho * float(np.mean(np.einsum("ij,ij->i", xn, xn)))
    loss = clean_term - noisy_term + pen
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite AR loss")
    params = set(r.named())
    grads = {k: v for k, v in grads.items() if k in params}
    return loss, grads, {"clean": clean_term, "noisy": noisy_term, "penalty": pen}


# --------------------------------------------------------------------------
# optimisation

class Adam:
    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m.get(k, 0.0) * self.b1 + (1 - self.b1) * g
            v = self.v.get(k, 0.0) * self.b2 + (1 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            out[k] = p - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return out


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        return {k: p - self.lr * grads[k] for k, p in params.items()}


def separation(r: DcRegularizer, clean, noisy) -> float:
    """``mean R(noisy) - mean R(clean)``; positive for a useful critic."""
    return float(np.mean(dc_eval_batch(r, noisy)) - np.mean(dc_eval_batch(r, clean)))


def train(r: DcRegularizer, src: SampleSource, cfg: TrainConfig,
          validate: Callable[[DcRegularizer], float] | None = None):
    """Train ``r`` on ``src``; returns ``(best_regularizer, TrainLog)``.

    Weights are projected onto the non-negative orthant after every step.
    When ``validate`` is given it is called after each epoch (higher is
    better) and the best epoch's parameters are returned; otherwise the
    final parameters are.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.lr, cfg.betas, cfg.eps) if cfg.optimizer == "adam" else SGD(cfg.lr)
    cur = r.projected() if cfg.epochs else r
    trlog = TrainLog()
    best, best_score = cur, -math.inf
    nc, nn = len(src.clean), len(src.noisy)
    steps = max(1, min(nc, nn) // cfg.batch_size)
    for epoch in range(cfg.epochs):
        pc = rng.permutation(nc)
        pn = rng.permutation(nn)
        acc = np.zeros(4)
        for s in range(steps):
            ic = pc[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            inn = pn[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            xc, xn = src.clean[ic], src.noisy[inn]
            try:
                loss, grads, terms = ar_loss(cur, xc, xn, cfg.lambda_gp, rng, how=cfg.penalty_points)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", trlog.rows) from exc
            if abs(loss) > 1e12:
                raise TrainingDiverged(f"epoch {epoch}: loss {loss:.3e} diverged", trlog.rows)
            cur = cur.with_named(opt.step(cur.named(), grads)).projected()
            acc += (loss, terms["clean"], terms["noisy"], terms["penalty"])
        acc /= steps
        score = validate(cur) if validate is not None else math.nan
        trlog.rows.append(dict(zip(LOG_COLUMNS, (epoch, *acc, score))))
        log.debug("epoch %d loss %.5g val %.4g", epoch, acc[0], score)
        if validate is not None and score > best_score:
            best, best_score = cur, score
            trlog.best_epoch = epoch
    if validate is None or cfg.epochs == 0:
        best = cur
        trlog.best_epoch = cfg.epochs - 1 if cfg.epochs else None
    return best, trlog


def regularization_weight(A: LinearOp, clean: Sequence[np.ndarray], sigma: float, seed=0) -> float:
    """Variational weight ``mu = E ||A^T (A x - y)||`` for ``y = A x + noise``.

    Equals ``E ||A^T eta||``, the data-fit gradient magnitude at the clean
    signal, which a 1-Lipschitz regularizer can just balance.
    """
    rng = np.random.default_rng(seed)
    vals = [np.linalg.norm(A.adjoint(sigma * rng.standard_normal(A.out_dim))) for _ in clean]
    return float(np.mean(vals))
