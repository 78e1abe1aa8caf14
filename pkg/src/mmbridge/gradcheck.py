"""Finite-difference checks over every differentiable path of the model."""
import time
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import (Tensor, corrupt_adjoint, cosine_similarity, cross_entropy,
                       grad_check_params, kl_divergence, scaled_softmax, sum_all)
from .encoders import encode, init_encoder
from .head import classify, fuse, init_head, task_loss
from .memory import (MemoryPair, address, bridge_forward, bridging_loss, recall,
                     reconstruct, saving_loss)
from .model import DataDims, ModelConfig, ParamStore, training_forward

TOLERANCE = 1e-4
SCALE = 2.0  # moderate sharpness keeps every slot's gradient well above FD noise


@dataclass
class CheckRow:
    op: str
    max_rel_err: float
    worst: str
    seeds: int

    @property
    def passed(self):
        return self.max_rel_err <= TOLERANCE


def _leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), True)


def _weights(rng, shape):
    return Tensor(rng.standard_normal(shape))


def _cases(rng, dims):
    """Yield ``(op_name, params, loss_fn)`` for one random draw."""
    d = n = dims
    steps = min(dims, 4)
    batch = 2
    k = max(dims, 2)

    a, b = _leaf(rng, d), _leaf(rng, d)
    yield "cosine_similarity", {"a": a, "b": b}, lambda: cosine_similarity(a, b)

    s, w = _leaf(rng, n), _weights(rng, (n,))
    yield "scaled_softmax", {"scores": s}, lambda: sum_all(scaled_softmax(s, SCALE) * w)

    x, y = _leaf(rng, n), _leaf(rng, n)
    yield "kl_divergence", {"p_logits": x, "q_logits": y}, \
        lambda: kl_divergence(scaled_softmax(x), scaled_softmax(y))

    q, mem, w2 = _leaf(rng, batch, steps, d), _leaf(rng, n, d), _weights(rng, (batch, steps, n))
    yield "address", {"query": q, "memory": mem}, \
        lambda: sum_all(address(mem, q, SCALE) * w2)

    f_src, m_src, m_tgt = _leaf(rng, batch, steps, d), _leaf(rng, n, d), _leaf(rng, n, d)
    head = init_head(2 * d, d, k, rng)
    labels = rng.integers(0, k, size=batch)
    params = {"f_src": f_src, "key": m_src, "value": m_tgt, **head.named("head")}

    def recall_path():
        v = recall(address(m_src, f_src, SCALE), m_tgt)
        return cross_entropy(classify(fuse(f_src, v, head), head), labels)
    yield "recall_path", params, recall_path

    f_tgt, m_val = _leaf(rng, batch, steps, d), _leaf(rng, n, d)
    yield "saving_loss", {"f_tgt": f_tgt, "value": m_val}, \
        lambda: saving_loss(f_tgt, reconstruct(address(m_val, f_tgt, SCALE), m_val))

    fs, ft, ks, vs = (_leaf(rng, batch, steps, d), _leaf(rng, batch, steps, d),
                      _leaf(rng, n, d), _leaf(rng, n, d))
    mp = MemoryPair(ks, vs, SCALE)

    def bridge(detach):
        out = bridge_forward(fs, ft, mp)
        return bridging_loss(out.a_tgt, out.a_src, detach_target=detach)
    yield "bridging_loss", {"f_src": fs, "f_tgt": ft, "key": ks, "value": vs}, \
        lambda: bridge(False)
    # with the target side detached only the source-side inputs are comparable
    yield "bridging_loss_detached", {"f_src": fs, "key": ks}, lambda: bridge(True)

    x_raw = 0.5 * rng.standard_normal((batch, steps, d))
    enc = init_encoder(d, d, d, rng)
    wt = _weights(rng, (batch, steps, d))
    yield "encoder", enc.named("enc"), lambda: sum_all(encode(x_raw, enc) * wt)

    lr_, lo_ = _leaf(rng, batch, k), _leaf(rng, batch, k)
    yield "task_loss", {"logits_recall": lr_, "logits_oracle": lo_}, \
        lambda: task_loss(lr_, lo_, labels)

    cfg = ModelConfig(slots=n, scale_r=SCALE, hidden_dim=d, src_feat_dim=d,
                      tgt_feat_dim=d, fusion_dim=d, detach_target_addressing=False)
    store = ParamStore.initialize(cfg, DataDims(d, d, k), int(rng.integers(1 << 31)))
    # half-scale raw inputs keep the tanh units away from saturation, where
    # gradients fall to the size of finite-difference roundoff
    xs = 0.5 * rng.standard_normal((batch, steps, d))
    xt = 0.5 * rng.standard_normal((batch, steps, d))
    yield "total_loss", dict(store.items()), \
        lambda: training_forward(store, xs, xt, labels).l_total

    base = ParamStore.initialize(replace(cfg, slots=0), DataDims(d, d, k),
                                 int(rng.integers(1 << 31)))
    yield "baseline_loss", dict(base.items()), \
        lambda: training_forward(base, xs, None, labels).l_total


def run_suite(seed=0, dims=8, n_seeds=10, corrupt=None, h=1e-5):
    """Check every op for ``n_seeds`` consecutive seeds starting at ``seed``.

    ``corrupt`` names an autodiff op whose adjoint is deliberately scaled, as
    a negative control. Returns ``(rows, elapsed_seconds)``.
    """
    if not 1 <= dims <= 16:
        raise ValueError("dims must be in [1, 16]")
    start = time.perf_counter()
    worst = {}
    for s in range(seed, seed + n_seeds):
        rng = np.random.default_rng(s)
        for name, params, fn in _cases(rng, dims):
            if corrupt:
                with corrupt_adjoint(corrupt):
                    res = grad_check_params(fn, params, h)
            else:
                res = grad_check_params(fn, params, h)
            for pname, (err, idx) in res.items():
                where = f"seed={s} {pname}{list(idx) if idx is not None else ''}"
                if name not in worst or err > worst[name][0]:
                    worst[name] = (err, where)
    rows = [CheckRow(op, err, where, n_seeds) for op, (err, where) in worst.items()]
    return rows, time.perf_counter() - start


def format_table(rows):
    lines = [f"{'op':<24} {'max_rel_err':>12}  status  worst coordinate"]
    for r in rows:
        lines.append(f"{r.op:<24} {r.max_rel_err:>12.3e}  {'PASS' if r.passed else 'FAIL':<6}  "
                     f"{r.worst}")
    return "\n".join(lines) + "\n"
