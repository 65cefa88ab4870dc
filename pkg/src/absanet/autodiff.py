"""Dense float64 tensors with reverse-mode differentiation.

A dynamic tape: every op returns a new Tensor holding a backward closure and
references to its parents; `backward(loss)` walks the graph in reverse
topological order and accumulates gradients with +=, so parameters shared by
several sites receive summed gradients. Graphs are rebuilt each step and are
confined to one thread from forward through backward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractViolation, NumericalError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; float/ndarray operands are treated as constants
    def __add__(self, other):
        return add(self, other if isinstance(other, Tensor) else Tensor(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def _result(data, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar loss; gradients accumulate into .grad."""
    if loss.data.size != 1:
        raise ContractViolation("backward() requires a scalar tensor")
    if not np.isfinite(loss.data):
        raise NumericalError("backward() called on a non-finite loss")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _result(out_data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(out_data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    def bwd(g):
        _accum(a, g * c)

    return _result(a.data * c, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy stacked-matmul broadcasting on leading dims."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ContractViolation("matmul requires tensors with >= 2 dims")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ContractViolation(f"matmul inner dims mismatch: {a.data.shape} x {b.data.shape}")
    out_data = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _result(out_data, (a, b), bwd)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = np.argsort(axes)

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _result(a.data.transpose(axes), (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.data.shape

    def bwd(g):
        _accum(a, g.reshape(orig))

    return _result(a.data.reshape(shape), (a,), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries from `start` along `axis`; backward zero-pads."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _result(a.data[idx], (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        _accum(a, g * mask)

    return _result(a.data * mask, (a,), bwd)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather weight[ids] for integer ids of any shape; backward scatter-adds."""
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() >= weight.data.shape[0]:
        raise ContractViolation("embedding ids out of range")
    out_data = weight.data[ids]

    def bwd(g):
        if not weight.requires_grad:
            return
        if weight.grad is None:
            weight.grad = np.zeros_like(weight.data)
        flat_ids = np.ascontiguousarray(ids.reshape(-1))
        flat_g = np.ascontiguousarray(g.reshape(-1, weight.data.shape[1]))
        kernels.embedding_bwd(flat_ids, flat_g, weight.grad)

    return _result(out_data, (weight,), bwd)


def softmax(a: Tensor, axis: int = -1, valid: np.ndarray | None = None) -> Tensor:
    """Softmax along `axis`, numerically stabilized by max subtraction.

    `valid` (broadcastable bool) marks positions allowed to carry mass; the
    rest come out exactly 0. A fully masked row is a contract violation.
    """
    if not np.all(np.isfinite(a.data)):
        raise NumericalError("softmax input contains non-finite values")
    axis = axis % a.data.ndim
    moved = np.moveaxis(a.data, axis, -1)
    lead_shape = moved.shape
    rows = moved.reshape(-1, lead_shape[-1])
    if valid is None:
        vmat = np.ones(rows.shape, dtype=bool)
    else:
        vmat = np.moveaxis(np.broadcast_to(valid, a.data.shape), axis, -1).reshape(rows.shape)
        if not vmat.any(axis=1).all():
            raise ContractViolation("softmax row with every position masked")
    y_rows = kernels.softmax_fwd(np.ascontiguousarray(rows), np.ascontiguousarray(vmat))
    out_data = np.moveaxis(y_rows.reshape(lead_shape), -1, axis)

    def bwd(g):
        g_rows = np.ascontiguousarray(np.moveaxis(g, axis, -1).reshape(rows.shape))
        dx_rows = kernels.softmax_bwd(y_rows, g_rows)
        _accum(a, np.moveaxis(dx_rows.reshape(lead_shape), -1, axis))

    return _result(out_data, (a,), bwd)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply gain and bias."""
    d = a.data.shape[-1]
    rows = np.ascontiguousarray(a.data.reshape(-1, d))
    y_rows, mean, rstd = kernels.layernorm_fwd(rows, gain.data, bias.data, eps)
    out_data = y_rows.reshape(a.data.shape)

    def bwd(g):
        g_rows = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgain, dbias = kernels.layernorm_bwd(rows, g_rows, gain.data, mean, rstd)
        _accum(a, dx.reshape(a.data.shape))
        _accum(gain, dgain)
        _accum(bias, dbias)

    return _result(out_data, (a, gain, bias), bwd)


def nll_loss(probs: Tensor, targets: np.ndarray, valid: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood over unmasked positions.

    probs has classes on the last axis and must be row-stochastic (softmax
    output); targets and valid share probs' leading shape.
    """
    n_classes = probs.data.shape[-1]
    targets = np.asarray(targets)
    if targets.shape != probs.data.shape[:-1]:
        raise ContractViolation(f"targets shape {targets.shape} != {probs.data.shape[:-1]}")
    flat_p = probs.data.reshape(-1, n_classes)
    flat_t = targets.reshape(-1)
    if valid is None:
        flat_v = np.ones(flat_t.shape, dtype=bool)
    else:
        flat_v = np.asarray(valid, dtype=bool).reshape(-1)
    if flat_t[flat_v].size and (flat_t[flat_v].min() < 0 or flat_t[flat_v].max() >= n_classes):
        raise ContractViolation("target index out of class range")
    count = int(flat_v.sum())
    if count == 0:
        raise ContractViolation("nll_loss with every position masked")
    rows = np.nonzero(flat_v)[0]
    picked = flat_p[rows, flat_t[rows]]
    out_data = -np.log(picked).sum() / count

    def bwd(g):
        gp = np.zeros_like(flat_p)
        gp[rows, flat_t[rows]] = -float(g) / (picked * count)
        _accum(probs, gp.reshape(probs.data.shape))

    return _result(out_data, (probs,), bwd)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when rate is 0 or no rng is given (eval)."""
    if rate <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)

    def bwd(g):
        _accum(a, g * keep)

    return _result(a.data * keep, (a,), bwd)


def dump_tensor(t: Tensor) -> str:
    """Debug text form: shape header then row-major values. Not a stable format."""
    header = " ".join(str(d) for d in t.shape)
    body = "\n".join(repr(v) for v in t.data.reshape(-1))
    return f"{header}\n{body}\n"


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradCheckReport:
    per_param: dict[str, float]  # max guarded relative error per parameter
    max_rel_err: float
    tol: float
    passed: bool
    kinks_skipped: int = 0

    def __str__(self) -> str:
        lines = [f"grad check: {'PASS' if self.passed else 'FAIL'} "
                 f"(max rel err {self.max_rel_err:.3e}, tol {self.tol:.1e}, "
                 f"{self.kinks_skipped} kink coordinates skipped)"]
        for name, err in sorted(self.per_param.items(), key=lambda kv: -kv[1]):
            lines.append(f"  {err:.3e}  {name}")
        return "\n".join(lines)


def grad_check(
    f,
    params: dict[str, Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    sample_per_tensor: int = 64,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar f() with central differences.

    f must be deterministic (rebuild the graph on each call, reading the
    current param values). For big tensors a seeded sample of >= 64
    coordinates per tensor is checked. Relative error is guarded:
    |a - b| / max(|a|, |b|, 1e-6).

    A coordinate that fails at the nominal step is re-probed at step/4: when
    the one-sided slope gap refuses to shrink with the step, the perturbation
    straddles a non-smooth point (a ReLU kink) where central differences say
    nothing about the gradient, and the coordinate is skipped and counted.
    Otherwise the better of the two estimates counts (the two step sizes trade
    truncation against rounding); a genuinely wrong gradient fails both.
    """
    zero_grads(params.values())
    loss = f()
    if not np.isfinite(loss.data):
        raise NumericalError("grad_check: loss is not finite")
    f0 = float(loss.data)
    backward(loss)
    analytic = {}
    for name, p in params.items():
        if p.grad is None:
            analytic[name] = np.zeros_like(p.data)
        else:
            if not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"grad_check: non-finite gradient in {name}")
            analytic[name] = p.grad.copy()

    rng = np.random.default_rng(seed)
    per_param: dict[str, float] = {}
    kinks = 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        size = flat.size
        if size <= sample_per_tensor:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=sample_per_tensor, replace=False)
        def probe(c: int, h: float) -> tuple[float, float]:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = float(f().data)
            flat[c] = orig - h
            f_minus = float(f().data)
            flat[c] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericalError(f"grad_check: non-finite loss while perturbing {name}")
            fd = (f_plus - f_minus) / (2.0 * h)
            slope_gap = abs((f0 - f_minus) / h - (f_plus - f0) / h)
            return fd, slope_gap

        def rel_err(an: float, fd: float) -> float:
            return abs(an - fd) / max(abs(an), abs(fd), 1e-6)

        worst = 0.0
        for c in coords:
            an = analytic[name].reshape(-1)[c]
            fd, gap = probe(c, step)
            err = rel_err(an, fd)
            if err > 0.5 * tol:
                fd2, gap2 = probe(c, step / 4.0)
                if err > tol and gap2 > 0.5 * gap:
                    kinks += 1
                    continue
                err = min(err, rel_err(an, fd2))
            worst = max(worst, err)
        per_param[name] = worst
    max_err = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(per_param, max_err, tol, max_err <= tol, kinks)
