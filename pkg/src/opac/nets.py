"""MLP actor/critic networks, Adam, Polyak target updates and checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .diffcore import Node, ShapeError, Tape

LOGSTD_MIN = -20.0
LOGSTD_MAX = 2.0
DEFAULT_HIDDEN = (256, 256)

CHECKPOINT_MAGIC = b"OPAC1"


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all MLP dims must be >= 1, got {dims}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)


@dataclass
class ParamSet:
    """Ordered (weight, bias) pairs backed by one contiguous float64 buffer.

    ``layers`` holds views into ``flat`` so optimizers and Polyak blends can
    work on the whole set at once.  ``grad_steps`` and ``polyak_steps`` count
    how often the set was changed by an optimizer step or a Polyak blend;
    tests use them to check that target networks only move by Polyak
    averaging.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    grad_steps: int = 0
    polyak_steps: int = 0
    flat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        arrays = [np.asarray(x, dtype=np.float64) for pair in self.layers for x in pair]
        self.flat = np.concatenate([a.ravel() for a in arrays]) if arrays else np.zeros(0)
        views, k = [], 0
        for a in arrays:
            views.append(self.flat[k : k + a.size].reshape(a.shape))
            k += a.size
        self.layers = list(zip(views[0::2], views[1::2]))

    def arrays(self) -> list[np.ndarray]:
        return [x for pair in self.layers for x in pair]

    def copy(self) -> "ParamSet":
        return ParamSet([(w, b) for w, b in self.layers])

    @property
    def size(self) -> int:
        return self.flat.size

    def with_flat(self, vec: np.ndarray) -> "ParamSet":
        """New ParamSet with the same shapes holding ``vec``."""
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size != self.flat.size:
            raise ValueError(f"expected {self.flat.size} values, got {vec.size}")
        out = self.copy()
        out.flat[:] = vec
        return out

    def same_shapes(self, other: "ParamSet") -> bool:
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.shape == y.shape for x, y in zip(a, b))


def init_params(spec: MLPSpec, seed, extra_heads: int = 0) -> ParamSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    ``extra_heads`` appends further output layers fed by the last hidden
    layer (the actor's log-std head).
    """
    rng = np.random.default_rng(seed)
    dims = spec.dims
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append((rng.uniform(-bound, bound, (fan_in, fan_out)), np.zeros(fan_out)))
    last_hidden = dims[-2]
    for _ in range(extra_heads):
        bound = 1.0 / np.sqrt(last_hidden)
        layers.append(
            (rng.uniform(-bound, bound, (last_hidden, spec.output_dim)), np.zeros(spec.output_dim))
        )
    return ParamSet(layers)


@dataclass
class ActorNet:
    """Trunk plus two heads: mean and (clamped) log standard deviation.

    Layer layout in ``params``: trunk layers, then the mean head, then the
    log-std head.
    """

    spec: MLPSpec
    params: ParamSet

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN, seed=0):
        spec = MLPSpec(obs_dim, tuple(hidden), act_dim)
        return cls(spec, init_params(spec, seed, extra_heads=1))

    @classmethod
    def from_params(cls, params: ParamSet) -> "ActorNet":
        ws = [w for w, _ in params.layers]
        hidden = tuple(w.shape[1] for w in ws[:-2])
        return cls(MLPSpec(ws[0].shape[0], hidden, ws[-1].shape[1]), params)

    def copy(self) -> "ActorNet":
        return ActorNet(self.spec, self.params.copy())


@dataclass
class CriticNet:
    """Maps concatenated (state, action) rows to one Q value per row."""

    spec: MLPSpec
    obs_dim: int
    act_dim: int
    params: ParamSet

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN, seed=0):
        spec = MLPSpec(obs_dim + act_dim, tuple(hidden), 1)
        return cls(spec, obs_dim, act_dim, init_params(spec, seed))

    @classmethod
    def from_params(cls, params: ParamSet, obs_dim: int) -> "CriticNet":
        ws = [w for w, _ in params.layers]
        spec = MLPSpec(ws[0].shape[0], tuple(w.shape[1] for w in ws[:-1]), 1)
        return cls(spec, obs_dim, ws[0].shape[0] - obs_dim, params)

    def copy(self) -> "CriticNet":
        return CriticNet(self.spec, self.obs_dim, self.act_dim, self.params.copy())


# ---------------------------------------------------------------------------
# forward passes


def _act_np(x, kind):
    return np.maximum(x, 0.0) if kind == "relu" else np.tanh(x)


def _check_batch(op: str, x: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(op, x.shape, (None, dim))
    return x


def forward_actor(net: ActorNet, states) -> tuple[np.ndarray, np.ndarray]:
    """Numpy forward pass; returns (mu, log_std) with log_std clamped."""
    h = _check_batch("forward_actor", states, net.spec.input_dim)
    layers = net.params.layers
    for w, b in layers[:-2]:
        h = _act_np(h @ w + b, net.spec.activation)
    (wm, bm), (ws, bs) = layers[-2], layers[-1]
    return h @ wm + bm, np.clip(h @ ws + bs, LOGSTD_MIN, LOGSTD_MAX)


def forward_critic(net: CriticNet, states, actions) -> np.ndarray:
    s = _check_batch("forward_critic", states, net.obs_dim)
    a = _check_batch("forward_critic", actions, net.act_dim)
    if s.shape[0] != a.shape[0]:
        raise ShapeError("forward_critic", s.shape, a.shape)
    h = np.concatenate([s, a], axis=1)
    layers = net.params.layers
    for w, b in layers[:-1]:
        h = _act_np(h @ w + b, net.spec.activation)
    w, b = layers[-1]
    return (h @ w + b)[:, 0]


def bind(params: ParamSet, tape: Tape, requires_grad: bool = True) -> list[tuple[Node, Node]]:
    """Record a ParamSet's arrays as tape leaves."""
    return [(tape.leaf(w, requires_grad), tape.leaf(b, requires_grad)) for w, b in params.layers]


def _act_node(x: Node, kind: str) -> Node:
    return x.relu() if kind == "relu" else x.tanh()


def actor_graph(net: ActorNet, bound, states: Node) -> tuple[Node, Node]:
    if states.shape[-1] != net.spec.input_dim:
        raise ShapeError("actor_graph", states.shape, (None, net.spec.input_dim))
    h = states
    for w, b in bound[:-2]:
        h = _act_node(h @ w + b, net.spec.activation)
    (wm, bm), (ws, bs) = bound[-2], bound[-1]
    return h @ wm + bm, (h @ ws + bs).clamp(LOGSTD_MIN, LOGSTD_MAX)


def critic_graph(net: CriticNet, bound, states: Node, actions: Node) -> Node:
    if states.shape[-1] != net.obs_dim or actions.shape[-1] != net.act_dim:
        raise ShapeError("critic_graph", states.shape, actions.shape)
    h = states.tape.concat([states, actions], axis=1)
    for w, b in bound[:-1]:
        h = _act_node(h @ w + b, net.spec.activation)
    w, b = bound[-1]
    out = h @ w + b
    return out.reshape(out.shape[0])


# ---------------------------------------------------------------------------
# parameter updates


def polyak_update(target: ParamSet, model: ParamSet, tau: float) -> ParamSet:
    """In place: target <- tau * target + (1 - tau) * model.

    ``tau`` is the retention coefficient, so tau=1 leaves the target alone.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if not target.same_shapes(model):
        raise ShapeError(
            "polyak_update",
            tuple(a.shape for a in target.arrays()),
            tuple(a.shape for a in model.arrays()),
        )
    target.flat *= tau
    target.flat += (1.0 - tau) * model.flat
    target.polyak_steps += 1
    return target


@dataclass
class Adam:
    """Bias-corrected adaptive moment estimation over a ParamSet, in place."""

    params: ParamSet
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros_like(self.params.flat)
            self.v = np.zeros_like(self.params.flat)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        arrays = self.params.arrays()
        if len(grads) != len(arrays):
            raise ValueError(f"expected {len(arrays)} gradients, got {len(grads)}")
        g = np.concatenate([np.ravel(x) for x in grads])
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        m, v = self.m, self.v
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        g *= g
        v += (1.0 - self.beta2) * g
        denom = np.sqrt(v)
        denom += self.eps * np.sqrt(c2)
        self.params.flat -= (self.lr * np.sqrt(c2) / c1) * m / denom
        self.params.grad_steps += 1


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little endian):
#   magic "OPAC1" | u32 n_sets | per set: u32 n_arrays | per array:
#   u32 ndim | u32 dims[ndim] | f64 data[prod(dims)]
#   then f64 alpha | u64 step


def encode_checkpoint(sets: Sequence[ParamSet], alpha: float, step: int) -> bytes:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(sets))]
    for ps in sets:
        arrays = ps.arrays()
        chunks.append(struct.pack("<I", len(arrays)))
        for a in arrays:
            chunks.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
            chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    chunks.append(struct.pack("<dQ", float(alpha), int(step)))
    return b"".join(chunks)


def decode_checkpoint(blob: bytes) -> tuple[list[ParamSet], float, int]:
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not an OPAC1 checkpoint")
    off = len(CHECKPOINT_MAGIC)

    def take(fmt):
        nonlocal off
        vals = struct.unpack_from(fmt, blob, off)
        off += struct.calcsize(fmt)
        return vals

    (n_sets,) = take("<I")
    sets = []
    for _ in range(n_sets):
        (n_arrays,) = take("<I")
        if n_arrays % 2:
            raise ValueError("corrupt checkpoint: odd array count")
        arrays = []
        for _ in range(n_arrays):
            (ndim,) = take("<I")
            shape = take(f"<{ndim}I")
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
            off += 8 * count
            arrays.append(data.astype(np.float64).reshape(shape))
        sets.append(ParamSet(list(zip(arrays[0::2], arrays[1::2]))))
    alpha, step = take("<dQ")
    if off != len(blob):
        raise ValueError("corrupt checkpoint: trailing bytes")
    return sets, alpha, step


def save_checkpoint(path, sets: Sequence[ParamSet], alpha: float, step: int) -> None:
    Path(path).write_bytes(encode_checkpoint(sets, alpha, step))


def load_checkpoint(path) -> tuple[list[ParamSet], float, int]:
    return decode_checkpoint(Path(path).read_bytes())
