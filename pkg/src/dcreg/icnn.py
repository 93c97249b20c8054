"""Input-convex networks, their differences, and checkpoint files.

Layer recursion (weights stored input-major so batches multiply on the left)::

    z_1 = act(x @ Wt[0] + b[0])
    z_i = act(z_{i-1} @ W[i] + x @ Wt[i] + b[i]),   W[i] >= 0
    R(x) = z_D @ w_out,                              w_out >= 0

With a convex non-decreasing activation the map ``x -> R(x)`` is convex.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diffcore as dc

__all__ = [
    "IcnnParams",
    "DcRegularizer",
    "SmoothnessEstimate",
    "init_icnn",
    "icnn_eval",
    "icnn_eval_batch",
    "icnn_grad_x",
    "icnn_grad_x_batch",
    "project_nonneg",
    "dc_eval",
    "dc_eval_batch",
    "dc_grad",
    "estimate_smoothness",
    "quadratic_icnn",
    "build_graph",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_bytes",
]

ACT_TAGS = {"relu": 0, "leaky_relu": 1, "softplus": 2}
MODES = ("dc", "convex", "weakly_convex")


@dataclass
class IcnnParams:
    Wt: list            # input weights, each (d, h_i)
    W: list             # hidden weights, W[0] is None, W[i] is (h_{i-1}, h_i) and >= 0
    b: list             # biases, each (h_i,)
    w_out: np.ndarray   # (h_D,) and >= 0
    activation: str = "leaky_relu"
    act_param: float = 0.2

    def __post_init__(self):
        if self.activation not in ACT_TAGS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0.0 < self.act_param <= 1.0:
            raise ValueError("leaky-ReLU slope must lie in (0, 1] to stay convex and non-decreasing")
        if self.activation == "softplus" and self.act_param <= 0.0:
            raise ValueError("softplus beta must be positive")
        if len(self.Wt) != len(self.W) or len(self.Wt) != len(self.b):
            raise ValueError("layer lists must have equal length")
        if self.W[0] is not None:
            raise ValueError("first layer has no hidden weight (W[0] must be None)")

    @property
    def input_dim(self) -> int:
        return self.Wt[0].shape[0]

    @property
    def depth(self) -> int:
        return len(self.Wt)

    @property
    def widths(self) -> list[int]:
        return [w.shape[1] for w in self.Wt]

    def named(self, prefix: str = "") -> dict[str, np.ndarray]:
        """Parameter arrays keyed by the leaf names used in :func:`build_graph`."""
        out = {}
        for i in range(self.depth):
            out[f"{prefix}Wt{i}"] = self.Wt[i]
            if i > 0:
                out[f"{prefix}W{i}"] = self.W[i]
            out[f"{prefix}b{i}"] = self.b[i]
        out[f"{prefix}out"] = self.w_out
        return out

    def with_named(self, arrays: dict, prefix: str = "") -> "IcnnParams":
        D = self.depth
        return replace(
            self,
            Wt=[arrays[f"{prefix}Wt{i}"] for i in range(D)],
            W=[None] + [arrays[f"{prefix}W{i}"] for i in range(1, D)],
            b=[arrays[f"{prefix}b{i}"] for i in range(D)],
            w_out=arrays[f"{prefix}out"],
        )

    def constrained_names(self, prefix: str = "") -> list[str]:
        return [f"{prefix}W{i}" for i in range(1, self.depth)] + [f"{prefix}out"]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.named().values()])

    def copy(self) -> "IcnnParams":
        return self.with_named({k: v.copy() for k, v in self.named().items()})


def init_icnn(d: int, widths, activation: str = "leaky_relu", act_param: float = 0.2,
              seed=0) -> IcnnParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; constrained weights take |.|."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    widths = list(widths)
    Wt, W, b = [], [None], []
    for i, h in enumerate(widths):
        a = 1.0 / np.sqrt(d)
        Wt.append(rng.uniform(-a, a, size=(d, h)))
        b.append(rng.uniform(-a, a, size=h))
        if i > 0:
            a2 = 1.0 / np.sqrt(widths[i - 1])
            W.append(np.abs(rng.uniform(-a2, a2, size=(widths[i - 1], h))))
    a = 1.0 / np.sqrt(widths[-1])
    w_out = np.abs(rng.uniform(-a, a, size=widths[-1]))
    return IcnnParams(Wt, W, b, w_out, activation, act_param)


def quadratic_icnn(d: int, beta: float = 0.01) -> IcnnParams:
    """Softplus network approximating ``0.5 * ||x||^2`` near the origin.

    Uses ``c * (sp(x_i) + sp(-x_i))`` with ``c = 2 / beta``; its Hessian is
    ``I`` at 0 and stays within ``(beta * |x|)^2 / 8`` of it elsewhere.
    """
    Wt = np.hstack([np.eye(d), -np.eye(d)])
    w_out = np.full(2 * d, 2.0 / beta)
    return IcnnParams([Wt], [None], [np.zeros(2 * d)], w_out, "softplus", beta)


# --------------------------------------------------------------------------
# graphs

def build_graph(p: IcnnParams, prefix: str = "", x_name: str = "x",
                tangent_name: str | None = None):
    """Symbolic ICNN graph.

    Returns ``(value, tangent)``. ``tangent`` is the directional derivative
    ``<grad_x R(x), v>`` along the bound input ``tangent_name`` (``None`` if
    not requested); differentiating it w.r.t. the parameters yields the
    parameter gradient of input-gradient penalties.
    """
    x = dc.var(x_name)
    v = dc.var(tangent_name) if tangent_name else None
    act, prm = p.activation, p.act_param
    z = dz = None
    for i in range(p.depth):
        pre = dc.matmul(x, dc.var(f"{prefix}Wt{i}"))
        dpre = dc.matmul(v, dc.var(f"{prefix}Wt{i}")) if v is not None else None
        if i > 0:
            Wi = dc.var(f"{prefix}W{i}")
            pre = dc.add(dc.matmul(z, Wi), pre)
            if v is not None:
                dpre = dc.add(dc.matmul(dz, Wi), dpre)
        pre = dc.add(pre, dc.var(f"{prefix}b{i}"))
        z = dc.activation(pre, act, prm)
        if v is not None:
            dz = dc.mul(dc.activation_deriv(pre, act, prm), dpre)
    out = dc.var(f"{prefix}out")
    value = dc.matmul(z, out)
    tangent = dc.matmul(dz, out) if v is not None else None
    return value, tangent


_GRAPHS: dict = {}


def _graph(p: IcnnParams):
    key = (p.depth, p.activation, p.act_param)
    g = _GRAPHS.get(key)
    if g is None:
        g = build_graph(p)[0]
        _GRAPHS[key] = g
    return g


def _check_x(p, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.input_dim:
        raise dc.ShapeError(f"input has dimension {x.shape[-1]}, network expects {p.input_dim}")
    return x


def icnn_eval(p: IcnnParams, x) -> float:
    x = _check_x(p, x)
    if x.ndim != 1:
        raise dc.ShapeError("icnn_eval takes a single vector; use icnn_eval_batch")
    tape = dc.Tape()
    return float(tape.forward(_graph(p), {"x": x, **p.named()}).data[0])


def icnn_eval_batch(p: IcnnParams, X) -> np.ndarray:
    X = _check_x(p, X)
    tape = dc.Tape()
    return tape.forward(_graph(p), {"x": np.atleast_2d(X), **p.named()}).array()


def icnn_grad_x(p: IcnnParams, x) -> np.ndarray:
    """One subgradient of ``R`` at ``x`` (ReLU derivative at 0 taken as 0)."""
    x = _check_x(p, x)
    tape = dc.Tape()
    tape.forward(_graph(p), {"x": x, **p.named()})
    return tape.backward()["x"]


def icnn_grad_x_batch(p: IcnnParams, X) -> np.ndarray:
    X = np.atleast_2d(_check_x(p, X))
    tape = dc.Tape()
    tape.forward(_graph(p), {"x": X, **p.named()})
    # rows are independent, so d(sum)/dX stacks the per-row gradients
    return tape.backward()["x"]


def icnn_value_and_grad(p: IcnnParams, x):
    x = _check_x(p, x)
    tape = dc.Tape()
    val = tape.forward(_graph(p), {"x": x, **p.named()})
    return float(val.data[0]), tape.backward()["x"]


def project_nonneg(p: IcnnParams) -> IcnnParams:
    """Clamp every constrained weight at zero; unconstrained arrays are shared."""
    arrays = dict(p.named())
    for name in p.constrained_names():
        w = arrays[name]
        if np.any(w < 0):
            arrays[name] = np.where(w < 0, 0.0, w)
    return p.with_named(arrays)


# --------------------------------------------------------------------------
# difference of ICNNs

@dataclass
class DcRegularizer:
    """``R = R1 - R2``.

    ``mode='convex'`` drops ``R2``; ``mode='weakly_convex'`` fixes
    ``R2(x) = (rho / 2) ||x||^2``.
    """

    r1: IcnnParams
    r2: IcnnParams | None = None
    mode: str = "dc"
    rho: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "dc" and self.r2 is None:
            raise ValueError("dc mode needs a second network")
        if self.mode != "dc":
            self.r2 = None
        if self.mode == "weakly_convex" and self.rho < 0:
            raise ValueError("rho must be non-negative")

    @property
    def input_dim(self) -> int:
        return self.r1.input_dim

    def networks(self) -> dict[str, IcnnParams]:
        nets = {"r1.": self.r1}
        if self.r2 is not None:
            nets["r2."] = self.r2
        return nets

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, net in self.networks().items():
            out.update(net.named(prefix))
        return out

    def with_named(self, arrays) -> "DcRegularizer":
        r1 = self.r1.with_named(arrays, "r1.")
        r2 = self.r2.with_named(arrays, "r2.") if self.r2 is not None else None
        return DcRegularizer(r1, r2, self.mode, self.rho)

    def projected(self) -> "DcRegularizer":
        r2 = project_nonneg(self.r2) if self.r2 is not None else None
        return DcRegularizer(project_nonneg(self.r1), r2, self.mode, self.rho)

    def copy(self) -> "DcRegularizer":
        return self.with_named({k: v.copy() for k, v in self.named().items()})


def _r2_value(r: DcRegularizer, x):
    if r.mode == "dc":
        return icnn_eval(r.r2, x)
    if r.mode == "weakly_convex":
        return 0.5 * r.rho * float(x @ x)
    return 0.0


def dc_eval(r: DcRegularizer, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return icnn_eval(r.r1, x) - _r2_value(r, x)


def dc_eval_batch(r: DcRegularizer, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    v = icnn_eval_batch(r.r1, X)
    if r.mode == "dc":
        return v - icnn_eval_batch(r.r2, X)
    if r.mode == "weakly_convex":
        return v - 0.5 * r.rho * np.einsum("ij,ij->i", X, X)
    return v - 0.0


def dc_grad(r: DcRegularizer, x):
    """Subgradient selections ``(g1, g2)`` of the two convex parts."""
    x = np.asarray(x, dtype=np.float64)
    g1 = icnn_grad_x(r.r1, x)
    if r.mode == "dc":
        g2 = icnn_grad_x(r.r2, x)
    elif r.mode == "weakly_convex":
        g2 = r.rho * x
    else:
        g2 = np.zeros_like(x)
    return g1, g2


# --------------------------------------------------------------------------
# smoothness

@dataclass
class SmoothnessEstimate:
    L_hat: float
    num_pairs: int
    ratios: np.ndarray = field(repr=False, default=None)


def estimate_smoothness(p: IcnnParams, box, pairs: int = 200, seed: int = 0,
                        near_scale: float = 1e-3) -> SmoothnessEstimate:
    """Empirical gradient-Lipschitz constant over a box.

    ``L_hat = max ||grad R(x) - grad R(x')|| / ||x - x'||`` over sampled
    pairs. Odd-indexed pairs are near pairs (``x' = x + near_scale * width * u``)
    so the estimate also probes local curvature. Pair ``i`` depends only on
    ``(seed, i)``, so the estimate is non-decreasing in ``pairs``.
    """
    if p.activation != "softplus":
        raise ValueError("estimate_smoothness needs a smooth network; use softplus activations")
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    lo, hi = (np.broadcast_to(np.asarray(v, dtype=np.float64), (p.input_dim,)) for v in box)
    width = float(np.max(hi - lo))
    X = np.empty((pairs, p.input_dim))
    Y = np.empty_like(X)
    for i in range(pairs):
        rng = np.random.default_rng((seed, i))
        X[i] = rng.uniform(lo, hi)
        if i % 2:
            u = rng.standard_normal(p.input_dim)
            Y[i] = X[i] + near_scale * width * u / np.linalg.norm(u)
        else:
            Y[i] = rng.uniform(lo, hi)
    gx = icnn_grad_x_batch(p, X)
    gy = icnn_grad_x_batch(p, Y)
    ratios = np.linalg.norm(gx - gy, axis=1) / np.linalg.norm(X - Y, axis=1)
    return SmoothnessEstimate(float(np.max(ratios)), pairs, ratios)


# --------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"DCRGCKPT"
CKPT_VERSION = 1


def _net_header(p: IcnnParams) -> bytes:
    return struct.pack(
        f"<IIBd{p.depth}I", p.input_dim, p.depth, ACT_TAGS[p.activation], p.act_param, *p.widths
    )


def checkpoint_bytes(r: DcRegularizer) -> bytes:
    """Serialized regularizer: header, float64 parameter block, 64-bit checksum."""
    nets = list(r.networks().values())
    head = CKPT_MAGIC + struct.pack("<IBBd", CKPT_VERSION, MODES.index(r.mode), len(nets), r.rho)
    head += b"".join(_net_header(p) for p in nets)
    block = np.concatenate([p.flat() for p in nets]).astype("<f8").tobytes()
    body = head + block
    digest = hashlib.blake2b(body, digest_size=8).digest()
    return body + digest


def save_checkpoint(path, r: DcRegularizer) -> str:
    data = checkpoint_bytes(r)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> DcRegularizer:
    raw = Path(path).read_bytes()
    body, digest = raw[:-8], raw[-8:]
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise ValueError(f"{path}: checksum mismatch")
    version, mode_idx, n_nets, rho = struct.unpack_from("<IBBd", body, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 8 + struct.calcsize("<IBBd")
    tags = {v: k for k, v in ACT_TAGS.items()}
    shapes = []
    for _ in range(n_nets):
        d, depth, tag, prm = struct.unpack_from("<IIBd", body, pos)
        pos += struct.calcsize("<IIBd")
        widths = struct.unpack_from(f"<{depth}I", body, pos)
        pos += 4 * depth
        shapes.append((d, list(widths), tags[tag], prm))
    flat = np.frombuffer(body, dtype="<f8", offset=pos).astype(np.float64)
    nets, off = [], 0
    for d, widths, act, prm in shapes:
        template = init_icnn(d, widths, act, prm, seed=0)
        arrays = {}
        for name, arr in template.named().items():
            arrays[name] = flat[off:off + arr.size].reshape(arr.shape).copy()
            off += arr.size
        nets.append(template.with_named(arrays))
    if off != flat.size:
        raise ValueError(f"{path}: parameter block size mismatch")
    r2 = nets[1] if len(nets) > 1 else None
    return DcRegularizer(nets[0], r2, MODES[mode_idx], rho)
