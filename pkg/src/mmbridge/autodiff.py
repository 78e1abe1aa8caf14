"""Tape-based reverse-mode differentiation over numpy float64 arrays.

Every tensor records the operation that produced it together with an
adjoint rule. Calling :meth:`Tensor.backward` on a scalar walks the
recorded nodes in reverse creation order, which is a valid reverse
topological order because a node can only be created after its inputs.
Only leaves (tensors created directly with ``requires_grad=True``) keep
their ``grad``; intermediate cotangents are dropped once propagated.
"""
import contextlib
import itertools

import numpy as np

from . import kernels
from .errors import DimensionError, DomainError, GradCheckError

NORM_EPS = 1e-8
KL_EPS = 1e-12

_ids = itertools.count()
# op name -> multiplicative factor applied to that op's adjoint (test hook)
_corrupted = {}


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents",
                 "_backward", "_id")

    def __init__(self, data, requires_grad=False, *, _parents=(),
                 _backward=None, op="leaf"):
        self.data = np.array(data, dtype=np.float64, copy=None)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self._parents = _parents
        self._backward = _backward
        self._id = next(_ids)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    "backward() without a seed requires a scalar output")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in seen:
                continue
            seen.add(node._id)
            nodes.append(node)
            stack.extend(p for p in node._parents if p.requires_grad)
        nodes.sort(key=lambda t: t._id, reverse=True)

        grads = {self._id: np.asarray(grad, dtype=np.float64)}
        for node in nodes:
            g = grads.pop(node._id, None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            factor = _corrupted.get(node.op)
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if factor is not None:
                    pg = pg * factor
                prev = grads.get(parent._id)
                grads[parent._id] = pg if prev is None else prev + pg

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, op):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=tuple(parents),
                      _backward=backward, op=op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


@contextlib.contextmanager
def corrupt_adjoint(op, factor=1.5):
    """Scale the adjoint of every ``op`` node by ``factor`` (negative control)."""
    _corrupted[op] = factor
    try:
        yield
    finally:
        _corrupted.pop(op, None)


# elementwise and linear algebra


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                         _unbroadcast(g, b.shape)), "add")


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _node(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                         _unbroadcast(g * a.data, b.shape)),
                 "mul")


def matmul(a, b):
    """``a[..., n] @ b[n, m]``; ``b`` must be a matrix."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        da = g @ b.data.T
        a2 = a.data.reshape(-1, b.shape[0])
        db = a2.T @ g.reshape(-1, b.shape[1])
        return da, db

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def tanh(a):
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(out, tensors,
                 lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def sum_all(a):
    return _node(a.data.sum(), (a,),
                 lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def mean(a, axis=None):
    if axis is None:
        n = a.data.size
        return _node(a.data.mean(), (a,),
                     lambda g: (np.full(a.shape, g / n),), "mean")
    n = a.shape[axis]

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

    return _node(a.data.mean(axis=axis), (a,), backward, "mean")


def sum_squares(a):
    """Sum of squared entries, a scalar."""
    return _node(np.sum(a.data * a.data), (a,),
                 lambda g: (2.0 * g * a.data,), "sum_squares")


# the operations that make up the bridge losses


def cosine_similarity(a, b, eps=NORM_EPS):
    """Cosine similarity along the last axis.

    Norms are clamped from below at ``eps``; pass ``eps=None`` to disable the
    guard, in which case a zero-norm input raises :class:`DomainError`.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[-1] < 1:
        raise DimensionError("vectors must have at least one component")
    na = np.sqrt(np.sum(a.data * a.data, axis=-1))
    nb = np.sqrt(np.sum(b.data * b.data, axis=-1))
    if eps is None:
        if np.any(na == 0) or np.any(nb == 0):
            raise DomainError("zero-norm vector in cosine_similarity")
        ca, cb = na, nb
    else:
        ca, cb = np.maximum(na, eps), np.maximum(nb, eps)
    dot = np.sum(a.data * b.data, axis=-1)
    out = dot / (ca * cb)

    def backward(g):
        g = g[..., None]
        ia, ib = ca[..., None], cb[..., None]
        c = out[..., None]
        ma = (na > (eps or 0))[..., None]
        mb = (nb > (eps or 0))[..., None]
        da = g * (b.data / (ia * ib) - np.where(ma, c * a.data / (ia * ia), 0))
        db = g * (a.data / (ia * ib) - np.where(mb, c * b.data / (ib * ib), 0))
        return da, db

    return _node(out, (a, b), backward, "cosine_similarity")


def scaled_softmax(scores, r=1.0):
    """Softmax of ``r * scores`` along the last axis (max-subtracted)."""
    scores = as_tensor(scores)
    if r <= 0:
        raise DomainError(f"scale must be positive, got {r}")
    if not np.all(np.isfinite(scores.data)):
        raise DomainError("non-finite score passed to scaled_softmax")
    z = r * scores.data
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    w /= w.sum(axis=-1, keepdims=True)

    def backward(g):
        return (r * w * (g - np.sum(g * w, axis=-1, keepdims=True)),)

    return _node(w, (scores,), backward, "scaled_softmax")


def cosine_address(query, memory, r, eps=NORM_EPS):
    """Fused softmax(r * cos(memory_i, query)) over slots, batched over rows.

    ``query`` has shape ``(..., d)`` and ``memory`` ``(N, d)``; the result has
    shape ``(..., N)``.
    """
    query, memory = as_tensor(query), as_tensor(memory)
    if memory.ndim != 2 or query.shape[-1] != memory.shape[1]:
        raise DimensionError(
            f"query width {query.shape[-1]} does not match memory {memory.shape}")
    if r <= 0:
        raise DomainError(f"scale must be positive, got {r}")
    lead = query.shape[:-1]
    q2 = np.ascontiguousarray(query.data.reshape(-1, query.shape[-1]))
    mem = np.ascontiguousarray(memory.data)
    w, cos, qnorm, mnorm = kernels.address_forward(q2, mem, float(r), eps)

    def backward(g):
        g2 = np.ascontiguousarray(g.reshape(-1, mem.shape[0]))
        dq, dmem = kernels.address_backward(g2, w, cos, q2, mem, qnorm, mnorm,
                                            float(r), eps)
        return dq.reshape(query.shape), dmem

    return _node(w.reshape(lead + (mem.shape[0],)), (query, memory), backward,
                 "cosine_address")


def _check_distribution(x, name, tol=1e-6):
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise DomainError(f"{name} has negative or non-finite components")
    if np.any(np.abs(x.sum(axis=-1) - 1.0) > tol):
        raise DomainError(f"{name} does not sum to 1")


def kl_divergence(p, q, eps=KL_EPS, validate=True):
    """Sum over rows of KL(p_row || q_row) along the last axis.

    ``q`` is clamped to at least ``eps`` inside the logarithm and terms with
    ``p == 0`` contribute nothing. With ``eps=None`` a zero in ``q`` where
    ``p`` is positive raises :class:`DomainError`.
    """
    p, q = as_tensor(p), as_tensor(q)
    if p.shape != q.shape:
        raise DimensionError(f"shape mismatch {p.shape} vs {q.shape}")
    if validate:
        _check_distribution(p.data, "p")
        _check_distribution(q.data, "q")
    if eps is None:
        if np.any((q.data == 0) & (p.data > 0)):
            raise DomainError("q has a zero component where p is positive")
        eps = 0.0
    n = p.shape[-1]
    p2 = np.ascontiguousarray(p.data.reshape(-1, n))
    q2 = np.ascontiguousarray(q.data.reshape(-1, n))
    rows = kernels.kl_forward(p2, q2, eps)

    def backward(g):
        gr = np.full(p2.shape[0], float(g))
        dp, dq = kernels.kl_backward(gr, p2, q2, eps)
        return dp.reshape(p.shape), dq.reshape(q.shape)

    return _node(rows.sum(), (p, q), backward, "kl_divergence")


def cross_entropy(logits, labels):
    """Mean cross-entropy of ``logits[B, K]`` against integer ``labels[B]``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim == 1:
        logits2 = logits.data[None, :]
    else:
        logits2 = logits.data
    b, k = logits2.shape
    if labels.shape[0] != b:
        raise DimensionError(f"{labels.shape[0]} labels for {b} rows")
    if np.any(labels < 0) or np.any(labels >= k):
        raise DomainError(f"label out of range [0, {k})")
    z = logits2 - logits2.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z - logsum[:, None]
    loss = -logp[np.arange(b), labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[np.arange(b), labels] -= 1.0
        return ((g / b) * d).reshape(logits.shape),

    return _node(loss, (logits,), backward, "cross_entropy")


# finite-difference verification


def _rel_err(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(
        np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)


def _central_differences(f, data, h):
    numeric = np.empty_like(data)
    flat = data.reshape(-1)
    out = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return numeric


def _compare(analytic, numeric, label):
    bad = ~np.isfinite(analytic)
    if np.any(bad):
        idx = np.unravel_index(np.flatnonzero(bad)[0], analytic.shape)
        raise GradCheckError(f"non-finite analytic gradient of {label} at {idx}",
                             coordinate=(label, idx))
    bad = ~np.isfinite(numeric)
    if np.any(bad):
        idx = np.unravel_index(np.flatnonzero(bad)[0], numeric.shape)
        raise GradCheckError(f"non-finite numeric gradient of {label} at {idx}",
                             coordinate=(label, idx))
    if analytic.size == 0:
        return 0.0, None
    err = _rel_err(analytic, numeric)
    worst = int(np.argmax(err))
    return float(err.reshape(-1)[worst]), np.unravel_index(worst, err.shape)


def grad_check(op, point, h=1e-5):
    """Max relative error between the adjoint of scalar ``op`` and central
    finite differences at ``point``."""
    x = Tensor(np.array(as_tensor(point).data, dtype=np.float64), True)
    op(x).backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    probe = Tensor(x.data.copy())
    numeric = _central_differences(lambda: float(op(probe).data), probe.data, h)
    return _compare(analytic, numeric, "x")[0]


def grad_check_params(loss_fn, params, h=1e-5):
    """Check ``loss_fn()`` against finite differences for every named param.

    ``params`` maps names to leaf tensors that ``loss_fn`` reads; they are
    perturbed in place and restored. Returns ``{name: (max_rel_err, index)}``.
    """
    for t in params.values():
        t.zero_grad()
    loss_fn().backward()
    results = {}
    for name, t in params.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = _central_differences(lambda: float(loss_fn().data), t.data, h)
        results[name] = _compare(analytic, numeric, name)
        t.zero_grad()
    return results
