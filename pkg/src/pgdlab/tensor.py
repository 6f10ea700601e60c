"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the small operator vocabulary needed by the classifier and the attack is
provided: elementwise arithmetic, matmul, 2-D convolution (NHWC layout),
relu, 2x2 max-pooling, flatten, softmax, softmax-cross-entropy and two
reductions used to build the attack objective (``pick`` and ``total``).

Operations record themselves on the innermost active :class:`Tape`::

    x = Tensor([3.0])
    with Tape() as tape:
        y = total(x * x)
    grads = backward(tape, y)     # {x: array([6.])}
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "TapeError",
    "backward",
    "tensor_op",
    "add",
    "sub",
    "scale",
    "mul",
    "matmul",
    "conv2d",
    "relu",
    "max_pool2",
    "flatten",
    "softmax",
    "softmax_cross_entropy",
    "pick",
    "total",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""

    def __init__(self, kind: str, *shapes: tuple[int, ...], detail: str = ""):
        self.kind = kind
        self.shapes = shapes
        msg = f"{kind}: incompatible shapes " + " and ".join(str(s) for s in shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


class TapeError(RuntimeError):
    """Misuse of :func:`backward` (non-scalar seed, seed not recorded)."""


class Tensor:
    """Immutable float64 array, optionally a leaf of a differentiable pass.

    ``requires_grad=False`` marks a constant: the tape still records ops on
    it but :func:`backward` neither computes nor returns its gradient.
    """

    __slots__ = ("data", "requires_grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = True):
        arr = np.array(data, dtype=np.float64)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError("tensor", arr.shape, detail="dimensions must be positive")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor: non-finite entries in input data")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # fast path for op outputs: already float64, already checked
        t = object.__new__(cls)
        arr = np.asarray(arr)  # 0-d arithmetic yields numpy scalars
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = requires_grad
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Writable copy of the data."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item(): tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={np.array2string(self.data, threshold=8)})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return add(scale(self, -1.0), _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=False)


# --------------------------------------------------------------------------
# tape

BackwardFn = Callable[[np.ndarray, tuple[bool, ...]], Sequence["np.ndarray | None"]]


@dataclass(frozen=True)
class Record:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered log of the primitive operations of one forward pass.

    A tape is bound to the thread that entered it; separate threads may run
    independent tapes over the same (read-only) parameter tensors.
    """

    _local = threading.local()

    def __init__(self):
        self.records: list[Record] = []

    def __enter__(self) -> "Tape":
        stack = getattr(self._local, "stack", None)
        if stack is None:
            stack = self._local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        self._local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def active(cls) -> "Tape | None":
        stack = getattr(cls._local, "stack", None)
        return stack[-1] if stack else None


def _emit(kind: str, inputs: tuple[Tensor, ...], out: np.ndarray, bwd: BackwardFn) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{kind}: produced non-finite values")
    tape = Tape.active()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, needs)
    if needs:
        tape.records.append(Record(kind, inputs, result, bwd))
    return result


def backward(tape: Tape, output: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of the scalar ``output`` w.r.t. every leaf it depends on.

    Leaves are tensors the tape did not produce (parameters, inputs).
    Each record is visited once, newest first; gradients sum at fan-out.
    """
    if output.size != 1:
        raise TapeError(f"backward: seed output must be scalar, got shape {output.shape}")
    position = next((i for i, r in enumerate(tape.records) if r.output is output), None)
    if position is None:
        raise TapeError("backward: seed output was not produced on this tape")

    produced = {id(r.output) for r in tape.records[: position + 1]}
    grads: dict[int, np.ndarray] = {id(output): np.ones(output.shape)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records[: position + 1]):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        needs = tuple(t.requires_grad for t in rec.inputs)
        for t, gi in zip(rec.inputs, rec.backward(g, needs)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = t
    return {t: grads[k] for k, t in leaves.items()}


# --------------------------------------------------------------------------
# elementwise


def _bias_compatible(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    return len(b) <= len(a) and a[len(a) - len(b):] == b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.reshape((-1,) + shape).sum(axis=0)


def _binary_shapes(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and not _bias_compatible(a.shape, b.shape):
        raise ShapeError(kind, a.shape, b.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    """``a + b``; ``b`` may also be a trailing-dims bias broadcast over ``a``."""
    _binary_shapes("add", a, b)
    sb = b.shape

    def bwd(g, needs):
        return g, _unbroadcast(g, sb) if needs[1] else None

    return _emit("add", (a, b), a.data + b.data, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("sub", a, b)
    sb = b.shape

    def bwd(g, needs):
        return g, -_unbroadcast(g, sb) if needs[1] else None

    return _emit("sub", (a, b), a.data - b.data, bwd)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a scalar constant."""
    c = float(c)
    return _emit("scalar-mul", (a,), a.data * c, lambda g, needs: (g * c,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("elementwise-mul", a, b)
    ad, bd, sb = a.data, b.data, b.shape

    def bwd(g, needs):
        ga = g * bd if needs[0] else None
        gb = _unbroadcast(g * ad, sb) if needs[1] else None
        return ga, gb

    return _emit("elementwise-mul", (a, b), ad * bd, bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bwd(g, needs):
        return (g @ bd.T if needs[0] else None, ad.T @ g if needs[1] else None)

    return _emit("matmul", (a, b), ad @ bd, bwd)


def relu(a: Tensor) -> Tensor:
    """max(x, 0); the derivative at exactly 0 is taken as 0."""
    mask = a.data > 0
    return _emit("relu", (a,), np.where(mask, a.data, 0.0), lambda g, needs: (g * mask,))


def flatten(a: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    if a.data.ndim < 2:
        raise ShapeError("flatten", a.shape, detail="need a batch axis")
    shape = a.shape
    out = a.data.reshape(shape[0], -1).copy()
    return _emit("flatten", (a,), out, lambda g, needs: (g.reshape(shape),))


# --------------------------------------------------------------------------
# convolution and pooling


def _same_padding(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total_pad = max((out - 1) * stride + k - size, 0)
    return total_pad // 2, total_pad - total_pad // 2


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of NHWC ``x`` with HWIO kernel ``w`` plus bias ``b``.

    ``padding`` is "same" (output ceil(H/stride)) or "valid"; stride 1 or 2.
    """
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    if padding not in ("same", "valid"):
        raise ValueError(f"conv2d: padding must be 'same' or 'valid', got {padding!r}")
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError("conv2d", x.shape, w.shape)
    if b.shape != (w.shape[3],):
        raise ShapeError("conv2d", w.shape, b.shape, detail="bias must match output channels")

    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    if padding == "same":
        ph, pw = _same_padding(h, kh, stride), _same_padding(wd, kw, stride)
    else:
        ph = pw = (0, 0)
    xp = np.pad(x.data, ((0, 0), ph, pw, (0, 0))) if padding == "same" else x.data
    hp, wp = xp.shape[1], xp.shape[2]
    if hp < kh or wp < kw:
        raise ShapeError("conv2d", x.shape, w.shape, detail="kernel larger than input")

    # (n, hp-kh+1, wp-kw+1, cin, kh, kw) -> strided -> (n, ho, wo, kh, kw, cin)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(n, ho, wo, cout) + b.data

    def bwd(g, needs):
        g2 = g.reshape(-1, cout)
        gx = gw = gb = None
        if needs[0]:
            dcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
            dxp = np.zeros((n, hp, wp, cin))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
            gx = dxp[:, ph[0]:ph[0] + h, pw[0]:pw[0] + wd, :]
        if needs[1]:
            gw = (cols.T @ g2).reshape(kh, kw, cin, cout)
        if needs[2]:
            gb = g2.sum(axis=0)
        return gx, gw, gb

    return _emit("conv2d", (x, w, b), out, bwd)


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max-pooling with stride 2 over NHWC; an odd trailing row/column is dropped.

    On ties the gradient goes to the first maximum in row-major window order.
    """
    if x.data.ndim != 4 or x.shape[1] < 2 or x.shape[2] < 2:
        raise ShapeError("max-pool", x.shape, detail="need NHWC with H, W >= 2")
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    blocks = x.data[:, : 2 * ho, : 2 * wo, :].reshape(n, ho, 2, wo, 2, c)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bwd(g, needs):
        spread = np.zeros((n, ho, wo, c, 4))
        np.put_along_axis(spread, arg[..., None], g[..., None], axis=-1)
        spread = spread.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * ho, 2 * wo, c)
        gx = np.zeros((n, h, w, c))
        gx[:, : 2 * ho, : 2 * wo, :] = spread
        return (gx,)

    return _emit("max-pool", (x,), out, bwd)


# --------------------------------------------------------------------------
# probabilities and reductions


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax over the last axis (max-subtracted)."""
    if logits.data.ndim not in (1, 2) or logits.shape[-1] < 2:
        raise ShapeError("softmax", logits.shape, detail="need (C,) or (N, C) with C >= 2")
    s = _softmax(logits.data)

    def bwd(g, needs):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (logits,), s, bwd)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("softmax-cross-entropy", logits.shape, labels.shape)
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"softmax-cross-entropy: labels outside 0..{c - 1}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.array(np.mean(logsum - z[rows, labels]))

    def bwd(g, needs):
        d = _softmax(logits.data)
        d[rows, labels] -= 1.0
        return (d * (float(g) / n),)

    return _emit("softmax-cross-entropy", (logits,), loss, bwd)


def pick(x: Tensor, index) -> Tensor:
    """Per-row selection ``x[i, index[i]]`` from an (N, C) tensor."""
    index = np.asarray(index, dtype=np.int64)
    if x.data.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError("pick", x.shape, index.shape)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def bwd(g, needs):
        gx = np.zeros(shape)
        gx[rows, index] = g
        return (gx,)

    return _emit("pick", (x,), x.data[rows, index].copy(), bwd)


def total(x: Tensor) -> Tensor:
    """Sum of all entries, as a 0-d tensor."""
    shape = x.shape
    return _emit("total", (x,), np.array(x.data.sum()), lambda g, needs: (np.full(shape, float(g)),))


_KINDS = {
    "add": add,
    "sub": sub,
    "scalar-mul": scale,
    "elementwise-mul": mul,
    "matmul": matmul,
    "conv2d": conv2d,
    "relu": relu,
    "max-pool": max_pool2,
    "flatten": flatten,
    "softmax": softmax,
    "softmax-cross-entropy": softmax_cross_entropy,
    "pick": pick,
    "total": total,
}


def tensor_op(kind: str, *operands, **options) -> Tensor:
    """Dispatch an operation by its kind name, e.g. ``tensor_op("relu", x)``."""
    try:
        fn = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; expected one of {sorted(_KINDS)}") from None
    return fn(*operands, **options)
