"""Synthetic paired-modality sequence classification data.

Each class owns a fixed sequence of latent codes drawn from a small
codebook. A sample renders that sequence into two observation streams,
source and target, through fixed random projections. Every sample also
gets its own "speaker" gain and bias, plus i.i.d. Gaussian noise; the
source stream is noisier than the target stream, so the target carries
the better task information.

Projections preserve norm on average, so a noiseless observation step has
expected norm ``signal_scale`` in both modalities and the per-dimension
noise levels compare directly against it.

Dataset file layout (little-endian)::

    8 bytes   magic b"MMBDATA\\0"
    u32       format version
    u32       header length H, then H bytes of UTF-8 JSON (spec echo, split)
    u32 x 4   sample count, steps T, source width, target width
    records   u32 label, f64[T * d_src] source, f64[T * d_tgt] target
    32 bytes  SHA-256 of everything above
"""
import hashlib
import itertools
import json
import math
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import CheckpointError, SpecError

DATA_MAGIC = b"MMBDATA\x00"
DATA_VERSION = 1
SPLITS = {"train": 1, "test": 2}


def derive_seed(master, *keys):
    """Stable 64-bit sub-seed for ``keys`` under ``master``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def derive_rng(master, *keys):
    return np.random.default_rng(derive_seed(master, *keys))


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 20
    codebook_size: int = 8
    seq_len: int = 10
    code_dim: int = 8
    src_dim: int = 24
    tgt_dim: int = 16
    src_noise: float = 0.8
    tgt_noise: float = 0.2
    signal_scale: float = 3.0   # expected norm of a noiseless observation step
    speaker_gain: float = 0.2   # gain drawn from [1 - g, 1 + g]
    speaker_bias: float = 0.05  # std of the per-sample bias
    train_per_class: int = 200
    test_per_class: int = 50
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise SpecError("num_classes must be at least 2")
        if self.codebook_size < 2:
            raise SpecError("codebook_size must be at least 2")
        if self.seq_len < 1:
            raise SpecError("seq_len must be at least 1")
        for name in ("code_dim", "src_dim", "tgt_dim"):
            if getattr(self, name) < 1:
                raise SpecError(f"{name} must be positive")
        if not self.src_noise > self.tgt_noise >= 0:
            raise SpecError(
                "noise levels must satisfy src_noise > tgt_noise >= 0, got "
                f"{self.src_noise} and {self.tgt_noise}")
        if self.signal_scale <= 0:
            raise SpecError("signal_scale must be positive")
        if not 0 <= self.speaker_gain < 1 or self.speaker_bias < 0:
            raise SpecError("speaker_gain must be in [0, 1), speaker_bias >= 0")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise SpecError("need at least one train and one test sample per class")
        if self.num_classes > self.codebook_size ** self.seq_len:
            raise SpecError(
                f"{self.num_classes} classes need distinct code sequences but only "
                f"{self.codebook_size}^{self.seq_len} exist")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown dataset keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Projections:
    codebook: np.ndarray     # P x d_code
    class_codes: np.ndarray  # K x T code indices
    w_src: np.ndarray        # d_code x d_src
    w_tgt: np.ndarray        # d_code x d_tgt


@dataclass
class ModalSample:
    x_src: np.ndarray  # L x d_src
    x_tgt: np.ndarray  # S x d_tgt
    label: int


def _class_codes(spec, rng):
    k, p, t = spec.num_classes, spec.codebook_size, spec.seq_len
    unique_bags = math.comb(p + t - 1, t) >= k
    if p ** t <= 50_000:
        pool = np.array(list(itertools.product(range(p), repeat=t)))
        candidates = (tuple(pool[i]) for i in rng.permutation(len(pool)))
    else:
        candidates = (tuple(rng.integers(0, p, size=t)) for _ in itertools.count())
    chosen, bags = [], set()
    for seq in candidates:
        bag = tuple(sorted(seq))
        if seq in chosen or (unique_bags and bag in bags):
            continue
        chosen.append(seq)
        bags.add(bag)
        if len(chosen) == k:
            break
    return np.array(chosen, dtype=np.int64)


def make_projections(spec):
    rng = derive_rng(spec.seed, 0)
    codebook = (spec.signal_scale / np.sqrt(spec.code_dim)
                * rng.standard_normal((spec.codebook_size, spec.code_dim)))
    class_codes = _class_codes(spec, rng)
    w_src = rng.standard_normal((spec.code_dim, spec.src_dim)) / np.sqrt(spec.src_dim)
    w_tgt = rng.standard_normal((spec.code_dim, spec.tgt_dim)) / np.sqrt(spec.tgt_dim)
    # an isotropic code keeps its norm on average
    w_src *= np.sqrt(spec.code_dim / np.sum(w_src * w_src))
    w_tgt *= np.sqrt(spec.code_dim / np.sum(w_tgt * w_tgt))
    return Projections(codebook, class_codes, w_src, w_tgt)


def render_sample(label, sample_seed, spec, projections):
    if not 0 <= label < spec.num_classes:
        raise SpecError(f"class {label} out of range")
    rng = np.random.default_rng(sample_seed)
    latent = projections.codebook[projections.class_codes[label]]

    def observe(w, sigma):
        gain = rng.uniform(1.0 - spec.speaker_gain, 1.0 + spec.speaker_gain)
        bias = rng.normal(0.0, spec.speaker_bias, w.shape[1])
        noise = rng.normal(0.0, sigma, (spec.seq_len, w.shape[1]))
        return gain * (latent @ w) + bias + noise

    x_src = observe(projections.w_src, spec.src_noise)
    x_tgt = observe(projections.w_tgt, spec.tgt_noise)
    return ModalSample(x_src, x_tgt, int(label))


class PairedDataset:
    """Arrays of paired samples: ``x_src (n, T, d_src)``, ``x_tgt``, ``labels``."""

    def __init__(self, x_src, x_tgt, labels, spec=None, split=""):
        self.x_src = np.asarray(x_src, dtype=np.float64)
        self._x_tgt = np.asarray(x_tgt, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.spec = spec
        self.split = split
        if not (len(self.x_src) == len(self._x_tgt) == len(self.labels)):
            raise SpecError("source, target and label counts differ")
        if self.x_src.shape[1] != self._x_tgt.shape[1]:
            raise SpecError("source and target streams must have equal length")

    @property
    def x_tgt(self):
        return self._x_tgt

    def __len__(self):
        return len(self.labels)

    @property
    def seq_len(self):
        return self.x_src.shape[1]

    @property
    def src_dim(self):
        return self.x_src.shape[2]

    @property
    def tgt_dim(self):
        return self._x_tgt.shape[2]

    def sample(self, i):
        return ModalSample(self.x_src[i], self.x_tgt[i], int(self.labels[i]))

    def with_zeroed_targets(self):
        return PairedDataset(self.x_src, np.zeros_like(self._x_tgt), self.labels,
                             self.spec, self.split)


class CountingDataset(PairedDataset):
    """Dataset that counts every access to the target stream."""

    def __init__(self, base):
        super().__init__(base.x_src, base._x_tgt, base.labels, base.spec, base.split)
        self.target_reads = 0

    @property
    def x_tgt(self):
        self.target_reads += 1
        return self._x_tgt


def _render_split(spec, projections, split):
    per_class = spec.train_per_class if split == "train" else spec.test_per_class
    samples = [render_sample(c, derive_seed(spec.seed, SPLITS[split], c, i), spec, projections)
               for c in range(spec.num_classes) for i in range(per_class)]
    return PairedDataset(np.stack([s.x_src for s in samples]),
                         np.stack([s.x_tgt for s in samples]),
                         np.array([s.label for s in samples]), spec, split)


def generate_dataset(spec):
    """Render the (train, test) pair for ``spec``; deterministic in the seed."""
    spec.validate()
    projections = make_projections(spec)
    return (_render_split(spec, projections, "train"),
            _render_split(spec, projections, "test"))


def nearest_centroid_accuracy(train, test, modality, pooled=True):
    """Accuracy of a nearest-class-mean classifier on raw observations.

    With ``pooled`` each sequence is averaged over time first; otherwise the
    flattened sequence is used. The pooled view discards step order, so it
    measures how much class evidence each frame carries on its own.
    """
    if modality not in ("source", "target"):
        raise ValueError("modality must be 'source' or 'target'")
    get = (lambda d: d.x_src) if modality == "source" else (lambda d: d.x_tgt)

    def view(d):
        x = get(d)
        return x.mean(axis=1) if pooled else x.reshape(len(d), -1)

    xtr, xte = view(train), view(test)
    classes = np.unique(train.labels)
    centroids = np.stack([xtr[train.labels == c].mean(axis=0) for c in classes])
    d2 = ((xte[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    pred = classes[np.argmin(d2, axis=1)]
    return float(np.mean(pred == test.labels))


def _dataset_bytes(ds):
    header = json.dumps({"split": ds.split,
                         "spec": ds.spec.to_dict() if ds.spec else None},
                        sort_keys=True).encode()
    n, t, ds_, dt = len(ds), ds.seq_len, ds.src_dim, ds.tgt_dim
    parts = [DATA_MAGIC, struct.pack("<II", DATA_VERSION, len(header)), header,
             struct.pack("<IIII", n, t, ds_, dt)]
    src = ds.x_src.astype("<f8")
    tgt = ds._x_tgt.astype("<f8")
    for i in range(n):
        parts.append(struct.pack("<I", int(ds.labels[i])))
        parts.append(src[i].tobytes())
        parts.append(tgt[i].tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def write_dataset(ds, path):
    with open(path, "wb") as fh:
        fh.write(_dataset_bytes(ds))


def read_dataset(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(DATA_MAGIC) + 40 or not blob.startswith(DATA_MAGIC):
        raise CheckpointError(f"{path}: not a dataset file")
    body, digest = blob[:-32], blob[-32:]
    pos = len(DATA_MAGIC)
    version, hlen = struct.unpack_from("<II", body, pos)
    if version != DATA_VERSION:
        raise CheckpointError(f"{path}: unsupported dataset version {version}")
    pos += 8
    try:
        header = json.loads(body[pos:pos + hlen].decode())
        pos += hlen
        n, t, d_src, d_tgt = struct.unpack_from("<IIII", body, pos)
    except (ValueError, struct.error) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    pos += 16
    rec = 4 + 8 * t * (d_src + d_tgt)
    if len(body) - pos != n * rec:
        raise CheckpointError(f"{path}: truncated or oversized record block")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    dtype = np.dtype([("label", "<u4"), ("src", "<f8", (t, d_src)),
                      ("tgt", "<f8", (t, d_tgt))])
    recs = np.frombuffer(body, dtype=dtype, count=n, offset=pos)
    spec = DatasetSpec.from_dict(header["spec"]) if header.get("spec") else None
    return PairedDataset(recs["src"].astype(np.float64), recs["tgt"].astype(np.float64),
                         recs["label"].astype(np.int64), spec, header.get("split", ""))
