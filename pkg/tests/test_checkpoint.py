import hashlib
from dataclasses import replace

import numpy as np
import pytest

from mmbridge.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from mmbridge.errors import CheckpointError
from mmbridge.evaluation import evaluate
from mmbridge.model import DataDims, ModelConfig, ParamStore
from mmbridge.trainer import TrainConfig, train

SMALL = ModelConfig(slots=4, hidden_dim=5, src_feat_dim=3, tgt_feat_dim=3, fusion_dim=4)


@pytest.fixture(scope="module")
def trained(tiny_data):
    cfg = TrainConfig(model=SMALL, epochs=2, batch_size=8, eval_every=0)
    store, _ = train(cfg, tiny_data[0])
    return store, cfg


def test_round_trip_bit_exact(trained, tmp_path):
    store, cfg = trained
    path = tmp_path / "c.mmbc"
    save_checkpoint(path, store, cfg, 2)
    back, cfg2, epoch = load_checkpoint(path)
    assert epoch == 2 and cfg2 == cfg and back.dims == store.dims
    assert back.names() == store.names()
    for k, t in store.items():
        assert back[k].data.tobytes() == t.data.tobytes()


def test_save_load_save_identical(trained, tmp_path):
    store, cfg = trained
    save_checkpoint(tmp_path / "a", store, cfg, 2)
    back, cfg2, epoch = load_checkpoint(tmp_path / "a")
    save_checkpoint(tmp_path / "b", back, cfg2, epoch)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_eval_identical_after_load(trained, tiny_data, tmp_path):
    store, cfg = trained
    before = evaluate(store, tiny_data[1], "oracle")
    save_checkpoint(tmp_path / "a", store, cfg, 2)
    after = evaluate(load_checkpoint(tmp_path / "a")[0], tiny_data[1], "oracle")
    assert before == after


def test_baseline_round_trip(tiny_data, tmp_path):
    cfg = TrainConfig(model=replace(SMALL, slots=0), epochs=1, batch_size=8, eval_every=0)
    store, _ = train(cfg, tiny_data[0])
    save_checkpoint(tmp_path / "b", store, cfg, 1)
    back = load_checkpoint(tmp_path / "b")[0]
    assert back.config.is_baseline and back.names() == store.names()


def test_layout(trained):
    blob = checkpoint_bytes(*trained, 2)
    assert blob[:8] == b"MMBCKPT\x00"
    assert int.from_bytes(blob[8:12], "little") == 1
    assert hashlib.sha256(blob[:-32]).digest() == blob[-32:]


def _damaged(trained, tmp_path, fn):
    blob = bytearray(checkpoint_bytes(*trained, 2))
    blob = fn(blob)
    path = tmp_path / "bad"
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(path)
    return str(err.value)


def test_checksum_rejected(trained, tmp_path):
    def flip(b):
        b[-1] ^= 0xFF
        return b
    assert "checksum" in _damaged(trained, tmp_path, flip)


def test_payload_flip_rejected(trained, tmp_path):
    def flip(b):
        b[len(b) // 2] ^= 0x10
        return b
    assert "checksum" in _damaged(trained, tmp_path, flip)


def test_truncation_rejected(trained, tmp_path):
    _damaged(trained, tmp_path, lambda b: b[:40])
    _damaged(trained, tmp_path, lambda b: b[:5])


def test_version_rejected(trained, tmp_path):
    def bump(b):
        b[8] = 2
        return b
    assert "version" in _damaged(trained, tmp_path, bump)


def test_parameter_set_checked(trained, tmp_path):
    store, cfg = trained
    # a store whose parameters disagree with its declared config
    wrong = ParamStore(replace(SMALL, slots=5), store.dims, dict(store.items()))
    path = tmp_path / "w"
    save_checkpoint(path, wrong, replace(cfg, model=replace(SMALL, slots=5)), 0)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
