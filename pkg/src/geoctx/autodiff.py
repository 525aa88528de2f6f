"""Minimal reverse-mode autodiff over dense 2-D float64 tensors.

Operations execute eagerly on numpy arrays and append a backward closure to
the active :class:`Tape`; ``Tape.backward`` replays the records in reverse
execution order (a reverse topological order), accumulating gradients
additively so shared subexpressions receive contributions from every
consumer. Every op validates shapes and rejects non-finite outputs.
"""

from __future__ import annotations

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        # grad buffers exist only for grad-requiring tensors and are
        # allocated on first use (touched tensors only)
        self.grad = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad[...] = 0.0

    def grad_or_zeros(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


_ACTIVE_TAPE: Optional["Tape"] = None


class Tape:
    """Ordered record of executed ops with their backward closures."""

    def __init__(self):
        self._records: List[Tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self):
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        return False

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        self._records.append((out, backward))

    def backward(self, loss: Tensor) -> None:
        if loss.shape != (1, 1):
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ValueError("loss does not require grad (was it computed on this tape?)")
        loss.zero_grad()
        loss.grad[...] = 1.0
        for out, backward in reversed(self._records):
            if out.grad is not None:  # untouched outputs received no gradient
                backward(out.grad)


def _emit(data: np.ndarray, inputs: Sequence[Tensor],
          make_backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    tape = _ACTIVE_TAPE
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(out, make_backward(out))
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise and linear ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    def bw(out):
        def run(g):
            _acc(a, g)
            _acc(b, g)
        return run
    return _emit(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    def bw(out):
        def run(g):
            _acc(a, g)
            _acc(b, -g)
        return run
    return _emit(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    def bw(out):
        def run(g):
            _acc(a, g * b.data)
            _acc(b, g * a.data)
        return run
    return _emit(a.data * b.data, (a, b), bw, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    def bw(out):
        def run(g):
            _acc(a, g @ b.data.T)
            _acc(b, a.data.T @ g)
        return run
    return _emit(a.data @ b.data, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    def bw(out):
        def run(g):
            _acc(a, g.T)
        return run
    return _emit(a.data.T.copy(), (a,), bw, "transpose")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    def bw(out):
        def run(g):
            _acc(a, g * s)
        return run
    return _emit(a.data * s, (a,), bw, "scale")


def add_bias(a: Tensor, bias: Tensor) -> Tensor:
    if bias.shape != (1, a.shape[1]):
        raise ShapeError(f"add_bias: bias shape {bias.shape} does not broadcast over {a.shape}")
    def bw(out):
        def run(g):
            _acc(a, g)
            _acc(bias, g.sum(axis=0, keepdims=True))
        return run
    return _emit(a.data + bias.data, (a, bias), bw, "add_bias")


def scale_rows(a: Tensor, s: Tensor) -> Tensor:
    """Multiply each row of a by the matching entry of column vector s."""
    if s.shape != (a.shape[0], 1):
        raise ShapeError(f"scale_rows: scales shape {s.shape} does not match rows of {a.shape}")
    def bw(out):
        def run(g):
            _acc(a, g * s.data)
            _acc(s, (g * a.data).sum(axis=1, keepdims=True))
        return run
    return _emit(a.data * s.data, (a, s), bw, "scale_rows")


# ---------------------------------------------------------------------------
# structure ops


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    cols = tensors[0].shape[1]
    for t in tensors:
        if t.shape[1] != cols:
            raise ShapeError(f"concat_rows: column mismatch {t.shape} vs (*, {cols})")
    sizes = [t.shape[0] for t in tensors]
    def bw(out):
        def run(g):
            at = 0
            for t, n in zip(tensors, sizes):
                _acc(t, g[at:at + n])
                at += n
        return run
    return _emit(np.vstack([t.data for t in tensors]), tuple(tensors), bw, "concat_rows")


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    rows = tensors[0].shape[0]
    for t in tensors:
        if t.shape[0] != rows:
            raise ShapeError(f"concat_cols: row mismatch {t.shape} vs ({rows}, *)")
    sizes = [t.shape[1] for t in tensors]
    def bw(out):
        def run(g):
            at = 0
            for t, n in zip(tensors, sizes):
                _acc(t, g[:, at:at + n])
                at += n
        return run
    return _emit(np.hstack([t.data for t in tensors]), tuple(tensors), bw, "concat_cols")


def gather_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= a.shape[0])):
        raise ShapeError(f"gather_rows: bad indices for tensor of shape {a.shape}")
    def bw(out):
        def run(g):
            if a.requires_grad:
                if a.grad is None:
                    a.grad = np.zeros_like(a.data)
                np.add.at(a.grad, idx, g)
        return run
    return _emit(a.data[idx], (a,), bw, "gather_rows")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.shape[1]):
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for shape {a.shape}")
    def bw(out):
        def run(g):
            if a.requires_grad:
                if a.grad is None:
                    a.grad = np.zeros_like(a.data)
                a.grad[:, start:stop] += g
        return run
    return _emit(a.data[:, start:stop].copy(), (a,), bw, "slice_cols")


# ---------------------------------------------------------------------------
# nonlinearities and reductions


def sigmoid(a: Tensor) -> Tensor:
    s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.clip(a.data, None, 50))),
                 np.exp(np.clip(a.data, -50, None)) / (1.0 + np.exp(np.clip(a.data, -50, None))))
    def bw(out):
        def run(g):
            _acc(a, g * s * (1.0 - s))
        return run
    return _emit(s, (a,), bw, "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    def bw(out):
        def run(g):
            _acc(a, g * mask)
        return run
    return _emit(a.data * mask, (a,), bw, "relu")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # non-finite outputs rejected below
        e = np.exp(a.data)
    def bw(out):
        def run(g):
            _acc(a, g * e)
        return run
    return _emit(e, (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log of non-positive value")
    def bw(out):
        def run(g):
            _acc(a, g / a.data)
        return run
    return _emit(np.log(a.data), (a,), bw, "log")


def softmax_rows(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    def bw(out):
        def run(g):
            inner = (g * s).sum(axis=1, keepdims=True)
            _acc(a, s * (g - inner))
        return run
    return _emit(s, (a,), bw, "softmax_rows")


def logsumexp_rows(a: Tensor) -> Tensor:
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    tot = e.sum(axis=1, keepdims=True)
    def bw(out):
        def run(g):
            _acc(a, g * (e / tot))
        return run
    return _emit(np.log(tot) + m, (a,), bw, "logsumexp_rows")


def sum_all(a: Tensor) -> Tensor:
    def bw(out):
        def run(g):
            _acc(a, np.full_like(a.data, g[0, 0]))
        return run
    return _emit(np.array([[a.data.sum()]]), (a,), bw, "sum_all")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    def bw(out):
        def run(g):
            _acc(a, np.full_like(a.data, g[0, 0] / n))
        return run
    return _emit(np.array([[a.data.mean()]]), (a,), bw, "mean_all")


def l2_normalize_rows(a: Tensor, eps: float = 1e-12) -> Tensor:
    norms = np.sqrt((a.data ** 2).sum(axis=1, keepdims=True))
    norms = np.maximum(norms, eps)
    y = a.data / norms
    def bw(out):
        def run(g):
            inner = (g * y).sum(axis=1, keepdims=True)
            _acc(a, (g - y * inner) / norms)
        return run
    return _emit(y, (a,), bw, "l2_normalize_rows")


def layer_norm_rows(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    c = a.shape[1]
    if gain.shape != (1, c) or bias.shape != (1, c):
        raise ShapeError(f"layer_norm_rows: gain/bias {gain.shape}/{bias.shape} "
                         f"do not match columns of {a.shape}")
    mu = a.data.mean(axis=1, keepdims=True)
    xc = a.data - mu
    var = (xc ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    def bw(out):
        def run(g):
            _acc(gain, (g * xhat).sum(axis=0, keepdims=True))
            _acc(bias, g.sum(axis=0, keepdims=True))
            if a.requires_grad:
                gx = g * gain.data
                term = gx - gx.mean(axis=1, keepdims=True) \
                    - xhat * (gx * xhat).mean(axis=1, keepdims=True)
                _acc(a, term * inv)
        return run
    return _emit(xhat * gain.data + bias.data, (a, gain, bias), bw, "layer_norm_rows")


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in training mode."""
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    def bw(out):
        def run(g):
            _acc(a, g * mask)
        return run
    return _emit(a.data * mask, (a,), bw, "dropout")


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn: Callable[[], Tensor], tensors: Sequence[Tensor],
               eps: float = 1e-5, coords_per_tensor: Optional[int] = None,
               rng: Optional[np.random.Generator] = None,
               refine_eps: Sequence[float] = (), refine_above: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` must be a deterministic scalar-valued closure over ``tensors``.
    When ``coords_per_tensor`` is given, that many coordinates are sampled
    per tensor instead of sweeping every coordinate. A coordinate whose
    error exceeds ``refine_above`` is re-measured at each step in
    ``refine_eps`` and keeps its best value: finite differences straddling
    a relu/hinge kink recover at smaller steps, while a genuinely wrong
    analytic gradient stays wrong at every step.
    """
    tape = Tape()
    with tape:
        out = fn()
    if out.shape != (1, 1):
        raise ShapeError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    for t in tensors:
        if not t.requires_grad:
            raise ValueError("grad_check inputs must require grad")
        t.zero_grad()
    if out.requires_grad:
        tape.backward(out)
    # a constant output (no grad path) legitimately has zero gradients
    analytic = [t.grad_or_zeros().copy() for t in tensors]

    max_err = 0.0
    for t, g_an in zip(tensors, analytic):
        rows, cols = t.shape
        if coords_per_tensor is None or coords_per_tensor >= t.data.size:
            coords = [(i, j) for i in range(rows) for j in range(cols)]
        else:
            gen = rng or np.random.default_rng(0)
            flat = gen.choice(t.data.size, size=coords_per_tensor, replace=False)
            coords = [(int(k) // cols, int(k) % cols) for k in flat]
        def fd_error(i: int, j: int, step: float) -> float:
            orig = t.data[i, j]
            t.data[i, j] = orig + step
            f_plus = fn().item()
            t.data[i, j] = orig - step
            f_minus = fn().item()
            t.data[i, j] = orig
            g_fd = (f_plus - f_minus) / (2.0 * step)
            return abs(g_an[i, j] - g_fd) / max(1e-8, abs(g_an[i, j]) + abs(g_fd))

        for i, j in coords:
            err = fd_error(i, j, eps)
            for alt in refine_eps:
                if err <= refine_above:
                    break
                err = min(err, fd_error(i, j, alt))
            if err > max_err:
                max_err = err
    return max_err
