"""Pure numpy implementation of the hot addressing and KL kernels.

Every function here has a twin with the same signature in ``_ckernels``.
Inputs are 2-D C-contiguous float64 arrays; rows are independent queries.
"""
import numpy as np


def address_forward(q, mem, r, eps):
    """Scaled-cosine softmax of each query row against every memory row.

    Returns ``(weights, cos, qnorm, mnorm)``; norms are the raw L2 norms
    (before clamping at ``eps``) so the backward pass can tell which ones
    were clamped.
    """
    qnorm = np.sqrt(np.einsum("ij,ij->i", q, q))
    mnorm = np.sqrt(np.einsum("ij,ij->i", mem, mem))
    qn = np.maximum(qnorm, eps)
    mn = np.maximum(mnorm, eps)
    cos = (q @ mem.T) / qn[:, None] / mn[None, :]
    z = r * cos
    z -= z.max(axis=1, keepdims=True)
    w = np.exp(z)
    w /= w.sum(axis=1, keepdims=True)
    return w, cos, qnorm, mnorm


def address_backward(g, w, cos, q, mem, qnorm, mnorm, r, eps):
    """Adjoint of :func:`address_forward` with respect to ``q`` and ``mem``."""
    ds = r * w * (g - np.einsum("ij,ij->i", g, w)[:, None])
    qn = np.maximum(qnorm, eps)
    mn = np.maximum(mnorm, eps)
    coef = ds / qn[:, None] / mn[None, :]
    dscos = ds * cos
    qscale = np.where(qnorm > eps, dscos.sum(axis=1) / (qn * qn), 0.0)
    mscale = np.where(mnorm > eps, dscos.sum(axis=0) / (mn * mn), 0.0)
    dq = coef @ mem - qscale[:, None] * q
    dmem = coef.T @ q - mscale[:, None] * mem
    return dq, dmem


def kl_forward(p, q, eps):
    """Row-wise KL(p || max(q, eps)) with 0 log 0 = 0."""
    qc = np.maximum(q, eps)
    pos = p > 0
    safe_p = np.where(pos, p, 1.0)
    terms = np.where(pos, p * (np.log(safe_p) - np.log(qc)), 0.0)
    return terms.sum(axis=1)


def kl_backward(g, p, q, eps):
    """Adjoint of :func:`kl_forward`; ``g`` holds one cotangent per row."""
    qc = np.maximum(q, eps)
    pos = p > 0
    safe_p = np.where(pos, p, 1.0)
    dp = np.where(pos, np.log(safe_p) - np.log(qc) + 1.0, 0.0) * g[:, None]
    dq = np.where(q > eps, -p / qc, 0.0) * g[:, None]
    return dp, dq
