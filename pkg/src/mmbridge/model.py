"""Parameter store and the batched forward pass of the bridged network."""
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .autodiff import Tensor, cross_entropy
from .data import derive_rng
from .encoders import EncoderParams, encode, init_encoder
from .errors import ConfigError, ContractError
from .head import HeadParams, classify, fuse, init_head, task_loss, total_loss
from .memory import MemoryPair, bridge_forward, bridging_loss, saving_loss


@dataclass(frozen=True)
class ModelConfig:
    slots: int = 32          # 0 disables the memory (source-only baseline)
    scale_r: float = 16.0
    hidden_dim: int = 32
    src_feat_dim: int = 16   # C
    tgt_feat_dim: int = 16   # D
    fusion_dim: int = 32     # F
    detach_target_addressing: bool = True
    save_grad_to_encoder: bool = True
    share_head: bool = True

    def validate(self):
        if self.slots < 0:
            raise ConfigError("slots must be >= 0")
        if self.scale_r <= 0:
            raise ConfigError("scale_r must be positive")
        for f in ("hidden_dim", "src_feat_dim", "tgt_feat_dim", "fusion_dim"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be positive")
        return self

    @property
    def is_baseline(self):
        return self.slots == 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class DataDims:
    src_dim: int
    tgt_dim: int
    num_classes: int

    @classmethod
    def of(cls, dataset):
        return cls(dataset.src_dim, dataset.tgt_dim, int(dataset.spec.num_classes)
                   if dataset.spec else int(dataset.labels.max()) + 1)


class ParamStore:
    """All learnable tensors, keyed by stable dotted names.

    The key set is fixed at construction; ``assign`` only replaces values.
    """

    def __init__(self, config, dims, params):
        self.config = config
        self.dims = dims
        self._params = OrderedDict(params)

    @classmethod
    def initialize(cls, config, dims, seed):
        config.validate()
        rng = derive_rng(seed, 10)
        p = OrderedDict()
        p.update(init_encoder(dims.src_dim, config.hidden_dim, config.src_feat_dim,
                              rng).named("src_enc"))
        if config.is_baseline:
            p.update(init_head(config.src_feat_dim, config.fusion_dim,
                               dims.num_classes, rng).named("head"))
            return cls(config, dims, p)
        p.update(init_encoder(dims.tgt_dim, config.hidden_dim, config.tgt_feat_dim,
                              rng).named("tgt_enc"))
        mem = MemoryPair.initialize(config.slots, config.src_feat_dim,
                                    config.tgt_feat_dim, rng, config.scale_r)
        p["memory.key"] = mem.key
        p["memory.value"] = mem.value
        fused_in = config.src_feat_dim + config.tgt_feat_dim
        p.update(init_head(fused_in, config.fusion_dim, dims.num_classes,
                           rng).named("head"))
        if not config.share_head:
            p.update(init_head(fused_in, config.fusion_dim, dims.num_classes,
                               rng).named("oracle_head"))
        return cls(config, dims, p)

    def __getitem__(self, name):
        return self._params[name]

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def snapshot(self):
        """Frozen copy whose tensors carry no gradient state."""
        return ParamStore(self.config, self.dims,
                          {k: Tensor(v.data.copy()) for k, v in self._params.items()})

    def assign(self, arrays):
        if set(arrays) != set(self._params):
            raise ContractError("parameter set mismatch on assign")
        for k, v in arrays.items():
            if v.shape != self._params[k].shape:
                raise ContractError(f"shape mismatch for {k}")
            self._params[k].data[...] = v

    def encoder(self, prefix):
        return EncoderParams(*(self._params[f"{prefix}.{k}"]
                               for k in ("w1", "b1", "w2", "b2")))

    def head(self, prefix="head"):
        return HeadParams(*(self._params[f"{prefix}.{k}"]
                            for k in ("fusion_w", "fusion_b", "cls_w", "cls_b")))

    def memory(self):
        return MemoryPair(self._params["memory.key"], self._params["memory.value"],
                          self.config.scale_r)


@dataclass
class ForwardResult:
    logits_recall: Tensor
    logits_oracle: Optional[Tensor] = None
    l_save: Optional[Tensor] = None
    l_bridge: Optional[Tensor] = None
    l_task: Optional[Tensor] = None
    l_total: Optional[Tensor] = None
    a_src: Optional[Tensor] = None
    a_tgt: Optional[Tensor] = None
    f_src: Optional[Tensor] = None
    f_tgt: Optional[Tensor] = None
    recalled: Optional[Tensor] = None


def training_forward(store, x_src, x_tgt, labels):
    """Losses for one batch, averaged over the batch.

    Per sample the total is ``L_save / T + L_bridge / T + L_task`` with both
    memory losses summed over steps.
    """
    cfg = store.config
    b, steps = x_src.shape[0], x_src.shape[1]
    f_src = encode(Tensor(x_src), store.encoder("src_enc"))
    if cfg.is_baseline:
        logits = classify(fuse(f_src, None, store.head()), store.head())
        l_task = cross_entropy(logits, labels)
        return ForwardResult(logits_recall=logits, l_task=l_task, l_total=l_task,
                             f_src=f_src)
    f_tgt = encode(Tensor(x_tgt), store.encoder("tgt_enc"))
    out = bridge_forward(f_src, f_tgt, store.memory())
    save_target = f_tgt if cfg.save_grad_to_encoder else f_tgt.detach()
    l_save = saving_loss(save_target, out.reconstructed) / b
    l_bridge = bridging_loss(out.a_tgt, out.a_src, cfg.detach_target_addressing) / b
    head = store.head()
    oracle_head = head if cfg.share_head else store.head("oracle_head")
    logits_recall = classify(fuse(f_src, out.recalled, head), head)
    logits_oracle = classify(fuse(f_src, f_tgt, oracle_head), oracle_head)
    l_task = task_loss(logits_recall, logits_oracle, labels)
    l_total = total_loss(l_save, l_bridge, l_task, steps)
    return ForwardResult(logits_recall, logits_oracle, l_save, l_bridge, l_task,
                         l_total, out.a_src, out.a_tgt, f_src, f_tgt, out.recalled)


def source_forward(store, x_src):
    """Logits and addressing from the source stream alone (inference path)."""
    cfg = store.config
    f_src = encode(Tensor(x_src), store.encoder("src_enc"))
    if cfg.is_baseline:
        return ForwardResult(classify(fuse(f_src, None, store.head()), store.head()),
                             f_src=f_src)
    out = bridge_forward(f_src, None, store.memory())
    head = store.head()
    logits = classify(fuse(f_src, out.recalled, head), head)
    return ForwardResult(logits, a_src=out.a_src, f_src=f_src, recalled=out.recalled)


def oracle_forward(store, x_src, x_tgt):
    """Logits from source plus true target features, and the target-side quantities."""
    cfg = store.config
    if cfg.is_baseline:
        raise ConfigError("oracle mode needs a model with memory")
    f_src = encode(Tensor(x_src), store.encoder("src_enc"))
    f_tgt = encode(Tensor(x_tgt), store.encoder("tgt_enc"))
    out = bridge_forward(f_src, f_tgt, store.memory())
    head = store.head() if cfg.share_head else store.head("oracle_head")
    logits = classify(fuse(f_src, f_tgt, head), head)
    return ForwardResult(logits_recall=classify(fuse(f_src, out.recalled, store.head()),
                                                store.head()),
                         logits_oracle=logits, a_src=out.a_src, a_tgt=out.a_tgt,
                         f_src=f_src, f_tgt=f_tgt, recalled=out.recalled)


def predict(logits):
    return np.argmax(logits.data, axis=-1)
