"""Accuracy per inference mode, recall fidelity, addressing analysis, ablations."""
import csv
import io
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import BridgeError, ConfigError
from .model import oracle_forward, predict, source_forward

MODES = ("recall", "oracle", "baseline")
CHUNK = 500


@dataclass
class EvalReport:
    mode: str
    n_samples: int
    accuracy_recall: Optional[float] = None
    accuracy_oracle: Optional[float] = None
    accuracy_baseline: Optional[float] = None
    recall_fidelity: Optional[float] = None
    random_addressing_fidelity: Optional[float] = None
    mean_bridge_loss: Optional[float] = None

    def to_dict(self):
        return asdict(self)

    def to_text(self):
        lines = [f"{'metric':<28} value"]
        for k, v in asdict(self).items():
            if v is None:
                continue
            lines.append(f"{k:<28} {v:.6f}" if isinstance(v, float) else f"{k:<28} {v}")
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        d = asdict(self)
        w.writerow(d.keys())
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v)
                    for v in d.values()])
        return buf.getvalue()


def _chunks(n):
    for lo in range(0, n, CHUNK):
        yield slice(lo, min(lo + CHUNK, n))


def _relative_error(pred, target):
    num = np.sum((pred - target) ** 2, axis=-1)
    den = np.maximum(np.sum(target ** 2, axis=-1), 1e-300)
    return num / den


def _kl_rows(p, q, eps=1e-12):
    pos = p > 0
    return np.where(pos, p * (np.log(np.where(pos, p, 1.0)) - np.log(np.maximum(q, eps))),
                    0.0).sum(axis=-1)


def evaluate(store, dataset, mode="recall"):
    """Deterministic metrics over the whole ``dataset``.

    ``recall`` reads only the source stream and labels. ``oracle`` also reads
    the target stream and additionally reports recall fidelity, the
    uniform-addressing fidelity of the same value memory, and the mean
    bridging loss. ``baseline`` requires a model without memory.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    baseline = store.config.is_baseline
    if (mode == "baseline") != baseline:
        raise ConfigError(f"mode {mode!r} does not match a model with "
                          f"{store.config.slots} memory slots")
    x_src, labels = dataset.x_src, dataset.labels
    n = len(labels)
    report = EvalReport(mode=mode, n_samples=n)
    if mode != "oracle":
        correct = 0
        for s in _chunks(n):
            correct += int(np.sum(predict(source_forward(store, x_src[s]).logits_recall)
                                  == labels[s]))
        acc = correct / n
        if mode == "recall":
            report.accuracy_recall = acc
        else:
            report.accuracy_baseline = acc
        return report

    x_tgt = dataset.x_tgt
    uniform = store["memory.value"].data.mean(axis=0)
    correct_r = correct_o = 0
    fid, fid_uniform, bridge = [], [], []
    for s in _chunks(n):
        res = oracle_forward(store, x_src[s], x_tgt[s])
        correct_r += int(np.sum(predict(res.logits_recall) == labels[s]))
        correct_o += int(np.sum(predict(res.logits_oracle) == labels[s]))
        f_tgt = res.f_tgt.data
        fid.append(_relative_error(res.recalled.data, f_tgt).reshape(-1))
        fid_uniform.append(_relative_error(uniform, f_tgt).reshape(-1))
        bridge.append(_kl_rows(res.a_tgt.data, res.a_src.data).sum(axis=-1))
    report.accuracy_recall = correct_r / n
    report.accuracy_oracle = correct_o / n
    report.recall_fidelity = float(np.mean(np.concatenate(fid)))
    report.random_addressing_fidelity = float(np.mean(np.concatenate(fid_uniform)))
    report.mean_bridge_loss = float(np.mean(np.concatenate(bridge)))
    return report


@dataclass
class SimilarityReport:
    same_class_mean: float
    cross_class_mean: float
    n_same_pairs: int
    n_cross_pairs: int
    pairs: list = field(default_factory=list)  # (i, j, label_i, label_j, similarity)

    @property
    def gap(self):
        return self.same_class_mean - self.cross_class_mean

    def to_text(self):
        return ("# addressing similarity: cosine between source addressing vectors\n"
                "# at aligned steps, averaged over steps, per sample pair\n"
                f"same_class_mean   {self.same_class_mean:.6f}  ({self.n_same_pairs} pairs)\n"
                f"cross_class_mean  {self.cross_class_mean:.6f}  ({self.n_cross_pairs} pairs)\n"
                f"gap               {self.gap:.6f}\n")

    def pairs_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(("i", "j", "label_i", "label_j", "similarity"))
        for row in self.pairs:
            w.writerow(row[:4] + (repr(row[4]),))
        return buf.getvalue()


def source_addressing(store, x_src):
    if store.config.is_baseline:
        raise ConfigError("addressing analysis needs a model with memory")
    return np.concatenate([source_forward(store, x_src[s]).a_src.data
                           for s in _chunks(len(x_src))])


def addressing_similarity(store, dataset, per_class=10, keep_pairs=False):
    """Same-class versus cross-class similarity of source addressing.

    For each pair of probe samples the cosine similarity of their addressing
    vectors is taken at each aligned step and averaged over steps. Probes are
    the first ``per_class`` samples of each class (all if None).
    """
    labels = dataset.labels
    probe = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if per_class is not None:
            idx = idx[:per_class]
        if len(idx) < 2:
            warnings.warn(f"class {c} has fewer than 2 probe samples; no same-class pairs")
        probe.extend(idx.tolist())
    probe = np.array(probe, dtype=np.int64)
    a = source_addressing(store, dataset.x_src[probe])  # P x T x N
    a = a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), 1e-300)
    sim = np.einsum("itn,jtn->ij", a, a) / a.shape[1]
    sim = np.clip(sim, -1.0, 1.0)
    lab = labels[probe]
    iu, ju = np.triu_indices(len(probe), k=1)
    same = lab[iu] == lab[ju]
    vals = sim[iu, ju]
    pairs = []
    if keep_pairs:
        pairs = [(int(probe[i]), int(probe[j]), int(lab[i]), int(lab[j]), float(v))
                 for i, j, v in zip(iu, ju, vals)]
    return SimilarityReport(
        same_class_mean=float(vals[same].mean()) if same.any() else float("nan"),
        cross_class_mean=float(vals[~same].mean()) if (~same).any() else float("nan"),
        n_same_pairs=int(same.sum()), n_cross_pairs=int((~same).sum()), pairs=pairs)


@dataclass
class AblationTable:
    rows: list  # dicts: slots, seed, accuracy, accuracy_oracle, recall_fidelity

    def seed_means(self):
        out = {}
        for slots in sorted({r["slots"] for r in self.rows}):
            accs = [r["accuracy"] for r in self.rows if r["slots"] == slots]
            out[slots] = float(np.mean(accs))
        return out

    def to_text(self):
        lines = ["slots  seed  accuracy  oracle    fidelity"]
        for r in self.rows:
            ora = "-" if r["accuracy_oracle"] is None else f"{r['accuracy_oracle']:.4f}"
            fid = "-" if r["recall_fidelity"] is None else f"{r['recall_fidelity']:.4f}"
            lines.append(f"{r['slots']:>5}  {r['seed']:>4}  {r['accuracy']:.4f}    "
                         f"{ora:<8}  {fid}")
        lines.append("")
        lines.append("slots  seed-mean accuracy")
        for slots, acc in self.seed_means().items():
            lines.append(f"{slots:>5}  {acc:.4f}")
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        cols = ("slots", "seed", "accuracy", "accuracy_oracle", "recall_fidelity")
        w.writerow(cols)
        for r in self.rows:
            w.writerow(["" if r[c] is None else r[c] for c in cols])
        return buf.getvalue()


def ablate_slots(base_config, slots, seeds, train_set, test_set):
    """Train one model per (slot count, seed) and evaluate it on ``test_set``.

    ``accuracy`` is the recall-mode accuracy for memory models and the
    baseline accuracy for ``slots == 0``.
    """
    from .trainer import train

    slots = list(slots)
    if 0 not in slots:
        raise ConfigError("slot list must include 0 (the baseline)")
    rows = []
    for n in slots:
        for seed in seeds:
            cfg = replace(base_config, seed=seed, model=replace(base_config.model, slots=n))
            try:
                store, _ = train(replace(cfg, eval_every=0), train_set)
            except BridgeError as exc:
                raise BridgeError(f"ablation run slots={n} seed={seed} failed: {exc}") from exc
            if n == 0:
                rep = evaluate(store, test_set, "baseline")
                rows.append({"slots": 0, "seed": seed, "accuracy": rep.accuracy_baseline,
                             "accuracy_oracle": None, "recall_fidelity": None})
            else:
                rep = evaluate(store, test_set, "oracle")
                rows.append({"slots": n, "seed": seed, "accuracy": rep.accuracy_recall,
                             "accuracy_oracle": rep.accuracy_oracle,
                             "recall_fidelity": rep.recall_fidelity})
    return AblationTable(rows)
