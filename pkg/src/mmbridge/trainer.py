"""End-to-end training loop, metrics log, and training configuration."""
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import derive_rng
from .errors import ConfigError, NonFiniteLossError
from .model import DataDims, ModelConfig, ParamStore, training_forward
from .optim import OPTIMIZERS, Optimizer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    eval_every: int = 1  # 0 disables per-epoch evaluation

    def validate(self):
        self.model.validate()
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if not self.lr >= 0:
            raise ConfigError("lr must be non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.eval_every < 0:
            raise ConfigError("batch_size >= 1, epochs >= 0, eval_every >= 0 required")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)


METRIC_COLUMNS = ("epoch", "l_save", "l_bridge", "l_task", "l_total",
                  "acc_recall", "acc_oracle", "acc_baseline", "recall_fidelity",
                  "wall_time")


class MetricsLog:
    """Append-only per-epoch metrics; one row per completed epoch."""

    def __init__(self):
        self.rows = []

    def append(self, row):
        self.rows.append({c: row.get(c) for c in METRIC_COLUMNS})

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return [r[name] for r in self.rows]

    def deterministic_rows(self):
        """Rows without the wall-clock column."""
        return [{k: v for k, v in r.items() if k != "wall_time"} for r in self.rows]

    def write_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                for line in header_comment.splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(METRIC_COLUMNS)
            for r in self.rows:
                w.writerow(["" if r[c] is None else repr(r[c]) for c in METRIC_COLUMNS])

    @classmethod
    def read_csv(cls, path):
        out = cls()
        with open(path, newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        for rec in csv.DictReader(lines):
            out.rows.append({k: (None if v == "" else (int(v) if k == "epoch" else float(v)))
                             for k, v in rec.items()})
        return out


def _check_finite(result, iteration):
    for term in ("l_save", "l_bridge", "l_task", "l_total"):
        t = getattr(result, term)
        if t is not None and not math.isfinite(float(t.data)):
            raise NonFiniteLossError(term, iteration, float(t.data))


def train_step(store, optimizer, x_src, x_tgt, labels, iteration=0):
    """Forward, backward and one parameter update on a batch."""
    result = training_forward(store, x_src, x_tgt, labels)
    _check_finite(result, iteration)
    store.zero_grad()
    result.l_total.backward()
    optimizer.step(store)
    return result


def train(config, train_set, test_set=None, store=None, on_epoch=None):
    """Optimize a fresh (or given) ParamStore on ``train_set``.

    Returns ``(store, metrics)``. Batch order is drawn from the config seed,
    so repeated runs with the same config and data are identical.
    """
    from .evaluation import evaluate

    config.validate()
    if len(train_set) == 0:
        raise ConfigError("training set is empty")
    if store is None:
        store = ParamStore.initialize(config.model, DataDims.of(train_set), config.seed)
    opt = Optimizer(config.optimizer, config.lr, momentum=config.momentum)
    metrics = MetricsLog()
    n = len(train_set)
    baseline = config.model.is_baseline
    x_src = train_set.x_src
    x_tgt = None if baseline else train_set.x_tgt
    labels = train_set.labels
    iteration = 0
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = derive_rng(config.seed, 20, epoch).permutation(n)
        sums = dict.fromkeys(("l_save", "l_bridge", "l_task", "l_total"), 0.0)
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            res = train_step(store, opt, x_src[idx],
                             None if baseline else x_tgt[idx], labels[idx], iteration)
            iteration += 1
            for k in sums:
                t = getattr(res, k)
                if t is not None:
                    sums[k] += float(t.data) * len(idx)
        row = {"epoch": epoch, "l_task": sums["l_task"] / n, "l_total": sums["l_total"] / n}
        if not baseline:
            row["l_save"] = sums["l_save"] / n
            row["l_bridge"] = sums["l_bridge"] / n
        if test_set is not None and config.eval_every and epoch % config.eval_every == 0:
            if baseline:
                row["acc_baseline"] = evaluate(store, test_set, "baseline").accuracy_baseline
            else:
                rep = evaluate(store, test_set, "oracle")
                row["acc_recall"] = rep.accuracy_recall
                row["acc_oracle"] = rep.accuracy_oracle
                row["recall_fidelity"] = rep.recall_fidelity
        row["wall_time"] = time.perf_counter() - start
        metrics.append(row)
        log.info("epoch %d: %s", epoch,
                 ", ".join(f"{k}={v:.4f}" for k, v in row.items()
                           if isinstance(v, float) and k != "wall_time"))
        if on_epoch is not None:
            on_epoch(epoch, store, row)
    return store, metrics


def moving_average(values, window=5):
    values = np.asarray(values, dtype=np.float64)
    if len(values) < window:
        return values[:0]
    return np.convolve(values, np.ones(window) / window, mode="valid")
