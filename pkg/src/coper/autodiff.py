"""Reverse-mode automatic differentiation over dense rank-<=3 float arrays.

Just enough machinery for a small decoder transformer: a Tensor wrapper, a
Tape that records operations in execution order, and analytic backward
rules for each primitive.  Ops run tape-free (pure numpy forward) when no
tape is active, which is how inference and generation stay cheap.

Gradient flow is single-threaded per tape; reductions that feed losses
(softmax normalizers, norms, cross-entropy) accumulate in float64 while the
bulk matmuls stay in the array dtype so BLAS runs at full speed.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes that a primitive cannot combine."""


class NumericalError(RuntimeError):
    """Non-finite values where finite ones are required."""


class Tensor:
    """Dense float array (rank <= 3) with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        if arr.ndim > 3:
            raise ShapeError(f"tensors are rank <= 3, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


_TAPES: list["Tape"] = []


class Tape:
    """Execution-ordered operation record; backward walks it once, reversed.

    Nodes are appended as ops execute, so the list is already a topological
    order of the forward graph.
    """

    def __init__(self):
        self._nodes = []
        self._produced = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPES.pop()
        return False

    def _record(self, out: Tensor, inputs: tuple, backward_fn) -> None:
        self._nodes.append((out, inputs, backward_fn))
        self._produced.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into .grad of every requiring leaf."""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        holders = {id(loss): loss}
        for out, inputs, backward_fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            holders.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward_fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                holders[key] = inp
        for key, t in holders.items():
            if key in self._produced:
                continue
            g = grads.get(key)
            if g is not None:
                t.grad = g if t.grad is None else t.grad + g


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _wrap(data, inputs: tuple, backward_fn) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(i.requires_grad for i in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape._record(out, inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back down to a broadcast operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports 2D @ 2D, 3D @ 2D, and batched 3D @ 3D."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"cannot matmul shapes {ad.shape} and {bd.shape}")
    if ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ShapeError(f"batch sizes differ: {ad.shape} vs {bd.shape}")
    data = ad @ bd

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ _swap_last(bd)
        if b.requires_grad:
            if bd.ndim == 2 and g.ndim == 3:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _swap_last(ad) @ g
        return ga, gb

    return _wrap(data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    try:
        data = ad + bd
    except ValueError as exc:
        raise ShapeError(f"cannot add shapes {ad.shape} and {bd.shape}") from exc

    def backward(g):
        ga = _unbroadcast(g, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _wrap(data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        return (g * s,)

    return _wrap(a.data * s, (a,), backward)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    try:
        data = ad * bd
    except ValueError as exc:
        raise ShapeError(f"cannot multiply shapes {ad.shape} and {bd.shape}") from exc

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _wrap(data, (a, b), backward)


_GELU_C = 0.7978845608028654  # sqrt(2 / pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU; the backward differentiates the approximation.

    Powers are spelled as products: numpy's float32 pow ufunc takes a scalar
    libm path that is orders of magnitude slower than multiplication.
    """
    xd = x.data
    x_sq = xd * xd
    t = np.tanh(_GELU_C * xd * (1.0 + _GELU_A * x_sq))
    data = 0.5 * xd * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C + (3.0 * _GELU_C * _GELU_A) * x_sq
        dx = (1.0 - t * t) * d_inner
        dx *= xd
        dx += 1.0 + t
        dx *= 0.5 * g
        return (dx,)

    return _wrap(data, (x,), backward)


def softmax(x: Tensor, additive_mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, optionally after adding a constant mask.

    The mask broadcasts against x and may contain -inf to zero positions
    out entirely (each row must keep at least one finite entry).
    """
    scores = x.data if additive_mask is None else x.data + additive_mask
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=-1, keepdims=True, dtype=np.float64)  # 64-bit accumulation
    p = e * np.asarray(1.0 / denom, dtype=x.data.dtype)

    def backward(g):
        dot = (g * p).sum(axis=-1, keepdims=True, dtype=np.float64).astype(x.data.dtype)
        return (p * (g - dot),)

    return _wrap(p, (x,), backward)


def rmsnorm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """Root-mean-square normalization over the last axis with a learned gain."""
    xd = x.data
    if gain.data.shape != (xd.shape[-1],):
        raise ShapeError(f"gain shape {gain.data.shape} does not match feature dim {xd.shape[-1]}")
    x64 = xd.astype(np.float64)
    ms = (x64 * x64).mean(axis=-1, keepdims=True)
    inv = np.asarray(1.0 / np.sqrt(ms + eps), dtype=xd.dtype)
    xhat = xd * inv
    data = xhat * gain.data

    def backward(g):
        gx = ggain = None
        if x.requires_grad:
            gg = g * gain.data
            dot = (gg * xhat).sum(axis=-1, keepdims=True, dtype=np.float64).astype(xd.dtype)
            n = xd.shape[-1]
            gx = inv * (gg - xhat * (dot / n))
        if gain.requires_grad:
            ggain = (g * xhat).reshape(-1, xd.shape[-1]).sum(axis=0, dtype=np.float64).astype(gain.data.dtype)
        return gx, ggain

    return _wrap(data, (x, gain), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather from an embedding table; backward is a scatter-add."""
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() >= table.data.shape[0]:
        raise ShapeError(f"ids outside table of {table.data.shape[0]} rows")
    data = table.data[ids]

    def backward(g):
        if not table.requires_grad:
            return (None,)
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        return (gt,)

    return _wrap(data, (table,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean token cross-entropy over the unmasked positions (float64 scalar)."""
    ld = logits.data
    targets = np.asarray(targets)
    mask = np.asarray(mask)
    if targets.shape != ld.shape[:-1] or mask.shape != ld.shape[:-1]:
        raise ShapeError(
            f"targets {targets.shape} / mask {mask.shape} do not match logits {ld.shape}")
    m = mask.astype(np.float64)
    n_active = m.sum()
    if n_active <= 0:
        raise ShapeError("cross_entropy needs at least one unmasked position")

    shifted = ld - ld.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, dtype=np.float64))
    picked = np.take_along_axis(shifted, targets[..., None], axis=-1)[..., 0]
    losses = lse - picked
    loss = (losses * m).sum() / n_active

    def backward(g):
        p = np.exp(shifted - lse[..., None].astype(ld.dtype))
        p[(*np.indices(targets.shape), targets)] -= 1.0
        w = (m / n_active * float(g)).astype(ld.dtype)
        return (p * w[..., None],)

    return _wrap(np.float64(loss), (logits,), backward)


def transpose_last(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise ShapeError(f"need rank >= 2 to transpose, got {x.shape}")

    def backward(g):
        return (_swap_last(g),)

    return _wrap(_swap_last(x.data), (x,), backward)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    old = x.data.shape

    def backward(g):
        return (g.reshape(old),)

    return _wrap(x.data.reshape(shape), (x,), backward)


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(B, S, D) -> (B * H, S, D / H), keeping head blocks contiguous."""
    b, s, d = x.data.shape
    if d % n_heads != 0:
        raise ShapeError(f"d_model {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    data = x.data.reshape(b, s, n_heads, dh).transpose(0, 2, 1, 3).reshape(b * n_heads, s, dh)

    def backward(g):
        return (g.reshape(b, n_heads, s, dh).transpose(0, 2, 1, 3).reshape(b, s, d),)

    return _wrap(data, (x,), backward)


def merge_heads(x: Tensor, n_heads: int) -> Tensor:
    """(B * H, S, D / H) -> (B, S, D); inverse of split_heads."""
    bh, s, dh = x.data.shape
    if bh % n_heads != 0:
        raise ShapeError(f"leading dim {bh} not divisible by {n_heads} heads")
    b = bh // n_heads
    data = x.data.reshape(b, n_heads, s, dh).transpose(0, 2, 1, 3).reshape(b, s, n_heads * dh)

    def backward(g):
        return (g.reshape(b, s, n_heads, dh).transpose(0, 2, 1, 3).reshape(bh, s, dh),)

    return _wrap(data, (x,), backward)


def rope_rotate(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate adjacent coordinate pairs by position-dependent angles.

    cos/sin have shape (S, d/2) and broadcast over the leading batch axis;
    the backward rotates the gradient by the opposite angles (rotations are
    orthogonal, so no extra terms appear).
    """
    xd = x.data
    if xd.shape[-1] % 2 != 0:
        raise ShapeError(f"rotary pairs need an even last dim, got {xd.shape}")
    x1, x2 = xd[..., 0::2], xd[..., 1::2]
    data = np.empty_like(xd)
    data[..., 0::2] = x1 * cos - x2 * sin
    data[..., 1::2] = x1 * sin + x2 * cos

    def backward(g):
        g1, g2 = g[..., 0::2], g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = g1 * cos + g2 * sin
        gx[..., 1::2] = -g1 * sin + g2 * cos
        return (gx,)

    return _wrap(data, (x,), backward)


def grad_check(f, params, epsilon: float = 1e-3) -> float:
    """Max relative disagreement between analytic and central-difference grads.

    `f` is a closure returning a scalar Tensor from the current values of
    `params`.  The analytic pass runs once under a tape; the numeric pass
    re-evaluates f tape-free with each parameter element nudged by epsilon.
    """
    if not 1e-5 <= epsilon <= 1e-2:
        raise ValueError(f"epsilon must be in [1e-5, 1e-2], got {epsilon}")
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericalError("loss is not finite")
    tape.backward(loss)

    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(analytic).all():
            raise NumericalError("analytic gradient is not finite")
        flat = p.data.reshape(-1)
        ga = np.asarray(analytic, dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = float(f().data)
            flat[i] = orig - epsilon
            f_minus = float(f().data)
            flat[i] = orig
            gn = (f_plus - f_minus) / (2.0 * epsilon)
            if not np.isfinite(gn):
                raise NumericalError("numeric gradient is not finite")
            rel = abs(ga[i] - gn) / (abs(ga[i]) + abs(gn) + 1e-8)
            worst = max(worst, rel)
    return worst
