"""Dense float32 tensors with reverse-mode differentiation on an explicit tape.

The primitive set is deliberately small and fused where it pays off
(layer norm, multi-head attention, grouped max-pool) so that a full
encoder forward stays at a few dozen tape records. There is no
broadcasting; the only shape coupling beyond elementwise is matmul,
row-bias addition and the row reductions.

Conventions:
  - all data is float32, row-major
  - any primitive producing NaN/Inf raises NumericsError immediately
  - ops are recorded only while a GradTape is active and at least one
    operand requires grad; everything else is a plain numpy forward
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

LAYER_NORM_VAR_FLOOR = 1e-5
L2_NORM_FLOOR = 1e-12

# Finite checks catch divergence at the op that produced it. Cheap at desk
# scale; flip off only for profiling.
CHECK_FINITE = True


class NumericsError(RuntimeError):
    pass


class ShapeError(NumericsError):
    """Raised on operand dimension mismatch; names both shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible operand shapes {self.shapes}")


class Tensor:
    """A dense float32 array plus a grad-tracking flag."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float32)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


_ACTIVE_TAPE: Optional["GradTape"] = None


class GradTape:
    """Ordered record of primitive applications for one backward pass.

    Records are appended in execution order, which is a topological order
    of the computation graph, so the backward pass is a single reverse
    sweep. One tape per training step; never shared across threads.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "GradTape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise NumericsError("a GradTape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, output: Tensor) -> dict[Tensor, np.ndarray]:
        """Gradient of a scalar output w.r.t. every requires_grad leaf.

        Returns {leaf: grad} for each requires_grad leaf that took part in
        a recorded op, with zeros for leaves the output does not depend
        on. Frozen tensors never receive an entry.
        """
        if output.size != 1:
            raise NumericsError(
                f"backward requires a scalar output, got shape {output.shape}"
            )
        produced = {id(out) for out, _, _ in self._records}
        if id(output) not in produced:
            raise NumericsError("output was not produced on this tape")

        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        leaves: dict[int, Tensor] = {}
        for out, inputs, grad_fn in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for t, gt in zip(inputs, grad_fn(g)):
                if gt is None or not t.requires_grad:
                    continue
                if id(t) not in produced:
                    leaves[id(t)] = t
                prev = grads.get(id(t))
                grads[id(t)] = gt if prev is None else prev + gt

        # Leaves that participated forward but got no backward flow.
        for _, inputs, _ in self._records:
            for t in inputs:
                if t.requires_grad and id(t) not in produced and id(t) not in leaves:
                    leaves[id(t)] = t
                    grads[id(t)] = np.zeros_like(t.data)

        result = {t: grads[i].astype(np.float32, copy=False) for i, t in leaves.items()}
        if not result:
            raise NumericsError("no requires_grad leaf reachable from output")
        return result


def _finish(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn: Callable) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericsError(f"{op} produced non-finite values")
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    if requires and _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE._records.append((out, inputs, grad_fn))
    return out


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. (n,k)@(k,m), (n,k)@(k,) or (k,)@(k,m)."""
    ad, bd = a.data, b.data
    inner_a = ad.shape[-1]
    inner_b = bd.shape[0]
    if inner_a != inner_b or ad.ndim > 2 or bd.ndim > 2:
        raise ShapeError("matmul", ad.shape, bd.shape)
    out = ad @ bd

    def grad_fn(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return bd @ g, np.outer(ad, g)  # (k,)@(k,m)

    return _finish("matmul", out, (a, b), grad_fn)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError("transpose", x.shape)
    return _finish("transpose", x.data.T.copy(), (x,), lambda g: (g.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)
    return _finish("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("sub", a.shape, b.shape)
    return _finish("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _finish("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _finish("scale", x.data * np.float32(c), (x,), lambda g: (g * np.float32(c),))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _finish("add_scalar", x.data + np.float32(c), (x,), lambda g: (g,))


def add_row(x: Tensor, row: Tensor) -> Tensor:
    """Add a (d,) vector to every row of an (n,d) matrix."""
    if x.ndim != 2 or row.ndim != 1 or x.shape[1] != row.shape[0]:
        raise ShapeError("add_row", x.shape, row.shape)
    return _finish("add_row", x.data + row.data, (x, row), lambda g: (g, g.sum(axis=0)))


def row_softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis of a vector or matrix; rows sum to 1."""
    xd = x.data
    shifted = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _finish("row_softmax", s, (x,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Per-row layer normalization with affine terms.

    Variance is floored at LAYER_NORM_VAR_FLOOR, so a constant row
    normalizes to zero instead of dividing by ~0.
    """
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError("layer_norm", x.shape, gamma.shape, beta.shape)
    xd = x.data
    d = xd.shape[1]
    mean = xd.mean(axis=1, keepdims=True)
    centered = xd - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    floored = var <= LAYER_NORM_VAR_FLOOR
    inv = 1.0 / np.sqrt(np.maximum(var, LAYER_NORM_VAR_FLOOR))
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def grad_fn(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * gamma.data
        mean_dxhat = dxhat.mean(axis=1, keepdims=True)
        # Below the floor inv is constant, so the variance path vanishes.
        var_term = xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        dx = inv * np.where(floored, dxhat - mean_dxhat, dxhat - mean_dxhat - var_term)
        return dx.astype(np.float32), dgamma, dbeta

    return _finish("layer_norm", out.astype(np.float32), (x, gamma, beta), grad_fn)


_GELU_C = np.float32(np.sqrt(2.0 / np.pi))
_GELU_A = np.float32(0.044715)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    u = _GELU_C * (xd + _GELU_A * xd * xd * xd)
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def grad_fn(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * xd * xd)
        dx = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du
        return ((g * dx).astype(np.float32),)

    return _finish("gelu", out.astype(np.float32), (x,), grad_fn)


def mean_pool_rows(x: Tensor) -> Tensor:
    """(n,d) -> (d,) mean over rows."""
    if x.ndim != 2:
        raise ShapeError("mean_pool_rows", x.shape)
    n = x.shape[0]
    return _finish(
        "mean_pool_rows",
        x.data.mean(axis=0),
        (x,),
        lambda g: (np.tile(g / np.float32(n), (n, 1)),),
    )


def l2_normalize(x: Tensor) -> Tensor:
    """Unit-normalize a vector, or every row of a matrix.

    Rows with norm below L2_NORM_FLOOR pass through scaled by 1/floor
    direction-free (they stay ~zero); gradients treat the norm as constant
    there.
    """
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=-1, keepdims=True))
    floored = norm <= L2_NORM_FLOOR
    safe = np.maximum(norm, L2_NORM_FLOOR)
    y = xd / safe

    def grad_fn(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        dx = np.where(floored, g / safe, (g - y * dot) / safe)
        return (dx.astype(np.float32),)

    return _finish("l2_normalize", y.astype(np.float32), (x,), grad_fn)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError("concat_rows", a.shape, b.shape)
    na = a.shape[0]
    return _finish(
        "concat_rows",
        np.concatenate([a.data, b.data], axis=0),
        (a, b),
        lambda g: (g[:na], g[na:]),
    )


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim != 2 or not (0 <= start <= stop <= x.shape[0]):
        raise ShapeError("slice_rows", x.shape, (start, stop))

    def grad_fn(g):
        dx = np.zeros_like(x.data)
        dx[start:stop] = g
        return (dx,)

    return _finish("slice_rows", x.data[start:stop].copy(), (x,), grad_fn)


def take(x: Tensor, indices) -> Tensor:
    """Gather entries of a vector, or rows of a matrix, by index."""
    idx = np.asarray(indices, dtype=np.int64)

    def grad_fn(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        return (dx,)

    return _finish("take", x.data[idx].copy(), (x,), grad_fn)


def flatten(x: Tensor) -> Tensor:
    shape = x.shape
    return _finish("flatten", x.data.reshape(-1).copy(), (x,), lambda g: (g.reshape(shape),))


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack B vectors of dim d into a (B,d) matrix."""
    if not tensors:
        raise ShapeError("stack_rows", ())
    d = tensors[0].shape
    for t in tensors:
        if t.ndim != 1 or t.shape != d:
            raise ShapeError("stack_rows", d, t.shape)
    data = np.stack([t.data for t in tensors], axis=0)
    return _finish("stack_rows", data, tuple(tensors), lambda g: tuple(g[i] for i in range(len(tensors))))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _finish("log", np.log(xd), (x,), lambda g: (g / xd,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _finish("exp", out, (x,), lambda g: (g * out,))


def clamp_min(x: Tensor, c: float) -> Tensor:
    xd = x.data
    c32 = np.float32(c)
    mask = xd > c32
    return _finish("clamp_min", np.maximum(xd, c32), (x,), lambda g: (g * mask,))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _finish("sum_all", np.asarray(x.data.sum(), dtype=np.float32), (x,), lambda g: (np.full(shape, g, dtype=np.float32),))


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _finish(
        "mean_all",
        np.asarray(x.data.mean(), dtype=np.float32),
        (x,),
        lambda g: (np.full(shape, g / np.float32(n), dtype=np.float32),),
    )


def max_pool_groups(x: Tensor, group_size: int) -> Tensor:
    """(g*s, d) -> (g, d), max over each consecutive group of s rows.

    Gradient routes to the first occurrence of each per-column maximum.
    """
    if x.ndim != 2 or group_size < 1 or x.shape[0] % group_size != 0:
        raise ShapeError("max_pool_groups", x.shape, (group_size,))
    g_count = x.shape[0] // group_size
    grouped = x.data.reshape(g_count, group_size, x.shape[1])
    argmax = grouped.argmax(axis=1)
    out = np.take_along_axis(grouped, argmax[:, None, :], axis=1)[:, 0, :]

    def grad_fn(g):
        dg = np.zeros_like(grouped)
        np.put_along_axis(dg, argmax[:, None, :], g[:, None, :], axis=1)
        return (dg.reshape(x.shape),)

    return _finish("max_pool_groups", out.copy(), (x,), grad_fn)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Scaled dot-product attention over rows, fused across heads.

    q: (nq,d), k/v: (nk,d), d divisible by heads. Scores are scaled by
    1/sqrt(d/heads) and row-softmaxed per head.
    """
    d = q.shape[-1]
    if (
        q.ndim != 2
        or k.ndim != 2
        or v.ndim != 2
        or k.shape != v.shape
        or k.shape[1] != d
        or d % heads != 0
    ):
        raise ShapeError("multi_head_attention", q.shape, k.shape, v.shape)
    nq, nk = q.shape[0], k.shape[0]
    dh = d // heads
    sc = np.float32(1.0 / np.sqrt(dh))

    def split(x):
        return x.reshape(-1, heads, dh).transpose(1, 0, 2)  # (h, n, dh)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scores = (qh @ kh.transpose(0, 2, 1)) * sc  # (h, nq, nk)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)
    out = (attn @ vh).transpose(1, 0, 2).reshape(nq, d)

    def grad_fn(g):
        gh = g.reshape(nq, heads, dh).transpose(1, 0, 2)
        d_attn = gh @ vh.transpose(0, 2, 1)
        dv = attn.transpose(0, 2, 1) @ gh
        ds = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        dq = (ds @ kh) * sc
        dk = (ds.transpose(0, 2, 1) @ qh) * sc

        def merge(x, n):
            return x.transpose(1, 0, 2).reshape(n, d)

        return merge(dq, nq), merge(dk, nk), merge(dv, nk)

    return _finish("multi_head_attention", out, (q, k, v), grad_fn)
