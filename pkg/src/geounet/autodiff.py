"""Small dense-tensor reverse-mode autodiff on top of numpy.

Operations performed while a :class:`Tape` is active are recorded in
execution order; :meth:`Tape.backward` replays the record in reverse.
Outside a tape every op is a plain numpy computation (inference mode).

All storage is float64.
"""

from __future__ import annotations

import json
import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ParamStore",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "hadamard",
    "concat",
    "segment_sum",
    "silu",
    "l2_norm_rows",
    "scale",
    "gather_rows",
    "reshape",
    "channel_mix",
    "sum_all",
    "log_softmax",
    "backward",
    "adam_step",
    "Linear",
    "MLP",
]

_ACTIVE: list["Tape"] = []


class Tensor:
    """A float64 array that may participate in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return hadamard(self, other)

    def __rmul__(self, other):
        return hadamard(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive ops for one backward pass.

    Each record holds the output tensor, its inputs and a closure mapping the
    output cotangent to input cotangents.  Records are appended in execution
    order, which is already a topological order.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every tracked leaf.

        Returns the cotangent map keyed by ``id(tensor)``.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        cot: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        produced = {id(out) for out, _, _ in self.records}
        for out, inputs, vjp in reversed(self.records):
            g = cot.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in cot:
                    cot[key] = cot[key] + gi
                else:
                    cot[key] = gi
                if key not in produced:
                    leaves[key] = inp
        for key, leaf in leaves.items():
            leaf.grad = cot[key] if leaf.grad is None else leaf.grad + cot[key]
        if id(loss) not in produced and loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
        return cot


def _record(out: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite value produced in forward pass")
    track = bool(_ACTIVE) and any(t.requires_grad for t in inputs)
    res = Tensor(out, requires_grad=track)
    if track:
        _ACTIVE[-1].records.append((res, tuple(inputs), vjp))
    return res


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- primitives --------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _record(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "hadamard")
    A, B = a.data, b.data
    return _record(
        A * B, (a, b), lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape))
    )


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _record(x.data * c, (x,), lambda g: (g * c,))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat: nothing to concatenate")
    ndim = ts[0].data.ndim
    ax = axis % ndim
    for t in ts:
        if t.data.ndim != ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise ValueError(f"concat: incompatible shapes {[t.shape for t in ts]}")
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]
    out = np.concatenate([t.data for t in ts], axis=ax)
    return _record(out, ts, lambda g: tuple(np.split(g, splits, axis=ax)))


def segment_sum(values, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``values`` sharing a segment id into ``num_segments`` rows."""
    x = as_tensor(values)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] != x.shape[0]:
        raise ValueError(f"segment_sum: {ids.shape[0]} ids for {x.shape[0]} rows")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise ValueError(f"segment_sum: segment id out of range [0, {num_segments})")
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, ids, x.data)
    return _record(out, (x,), lambda g: (g[ids],))


def gather_rows(x, index) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"gather_rows: index out of range [0, {n})")
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _record(x.data[idx], (x,), vjp)


def silu(x) -> Tensor:
    x = as_tensor(x)
    X = x.data
    sig = 0.5 * (1.0 + np.tanh(0.5 * X))
    return _record(X * sig, (x,), lambda g: (g * (sig * (1.0 + X * (1.0 - sig))),))


def l2_norm_rows(x) -> Tensor:
    """Euclidean norm over the last axis.  The subgradient at 0 is taken as 0."""
    x = as_tensor(x)
    X = x.data
    n = np.sqrt(np.sum(X * X, axis=-1))
    safe = np.where(n > 0.0, n, 1.0)

    def vjp(g):
        return ((g / safe)[..., None] * X * (n > 0.0)[..., None],)

    return _record(n, (x,), vjp)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def channel_mix(v, w) -> Tensor:
    """Linear map over the channel axis of an (N, c_in, d) array: (N, c_out, d)."""
    v, w = as_tensor(v), as_tensor(w)
    if v.data.ndim != 3 or w.data.ndim != 2 or v.shape[1] != w.shape[0]:
        raise ValueError(f"channel_mix: incompatible shapes {v.shape} and {w.shape}")
    V, W = v.data, w.data
    out = np.einsum("ncd,ce->ned", V, W)
    return _record(
        out,
        (v, w),
        lambda g: (np.einsum("ned,ce->ncd", g, W), np.einsum("ncd,ned->ce", V, g)),
    )


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _record(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def log_softmax(x) -> Tensor:
    """Row-wise log-softmax of a 2-D tensor."""
    x = as_tensor(x)
    X = x.data
    m = X.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(X - m).sum(axis=-1, keepdims=True))
    out = X - lse
    p = np.exp(out)
    return _record(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


# -- parameters and optimisation ---------------------------------------------


class ParamStore:
    """Named trainable tensors plus Adam moment buffers and a step counter."""

    def __init__(self, seed: int = 0):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        self.rng = np.random.default_rng(seed)

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self.params.values()])

    def set_flat(self, vec: np.ndarray) -> None:
        off = 0
        for t in self.params.values():
            n = t.data.size
            t.data[...] = vec[off : off + n].reshape(t.data.shape)
            off += n

    def to_json(self) -> str:
        return json.dumps(
            {k: {"shape": list(t.shape), "values": t.data.ravel().tolist()} for k, t in self.params.items()}
        )

    def load_json(self, text: str) -> None:
        blob = json.loads(text)
        for k, t in self.params.items():
            entry = blob[k]
            if tuple(entry["shape"]) != t.shape:
                raise ValueError(f"checkpoint shape mismatch for {k!r}")
            t.data[...] = np.asarray(entry["values"], dtype=np.float64).reshape(t.shape)


def backward(loss: Tensor, tape: Tape, store: ParamStore | None = None) -> dict[str, np.ndarray]:
    """Run ``tape`` backwards from ``loss``; return named grads for ``store``.

    Parameters that the loss does not reach get a zero gradient.
    """
    if store is not None:
        store.zero_grad()
    tape.backward(loss)
    if store is None:
        return {}
    return {
        k: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for k, t in store.params.items()
    }


def adam_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if g.shape != store.params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape for {name!r}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        store.params[name].data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# -- building blocks ----------------------------------------------------------


class Linear:
    """Dense layer; weights ~ N(0, gain / fan_in), biases zero.

    ``gain=2`` (He) suits layers followed by SiLU, ``gain=1`` output layers.
    """

    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, bias: bool = True, gain: float = 2.0):
        std = math.sqrt(gain / max(n_in, 1))
        self.n_in, self.n_out = n_in, n_out
        self.weight = store.add(f"{name}.weight", store.rng.normal(0.0, std, size=(n_in, n_out)))
        self.bias = store.add(f"{name}.bias", np.zeros(n_out)) if bias else None

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"Linear expects width {self.n_in}, got {x.shape[-1]}")
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


class MLP:
    """Linear -> SiLU -> ... -> Linear.  ``layers=2`` gives one hidden layer."""

    def __init__(
        self,
        store: ParamStore,
        name: str,
        n_in: int,
        n_out: int,
        hidden: int = 64,
        layers: int = 2,
    ):
        widths = [n_in] + [hidden] * (layers - 1) + [n_out]
        self.n_in, self.n_out = n_in, n_out
        self.linears = [
            Linear(store, f"{name}.{i}", widths[i], widths[i + 1], gain=2.0 if i < layers - 1 else 1.0)
            for i in range(layers)
        ]

    def __call__(self, x) -> Tensor:
        h = as_tensor(x)
        for i, lin in enumerate(self.linears):
            h = lin(h)
            if i < len(self.linears) - 1:
                h = silu(h)
        return h


def numeric_grad(f: Callable[[], float], params: Iterable[Tensor], h: float = 1e-6) -> list[np.ndarray]:
    """Central finite differences of ``f`` w.r.t. every entry of ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            gf[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out
