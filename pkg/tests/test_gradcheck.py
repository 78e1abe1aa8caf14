import pytest

from mmbridge.gradcheck import TOLERANCE, CheckRow, format_table, run_suite

OPS = {"cosine_similarity", "scaled_softmax", "kl_divergence", "address", "recall_path",
       "saving_loss", "bridging_loss", "bridging_loss_detached", "encoder", "task_loss",
       "total_loss", "baseline_loss"}


def test_scalar_edge():
    rows, _ = run_suite(dims=1, n_seeds=3)
    assert {r.op for r in rows} == OPS
    assert all(r.passed for r in rows), format_table(rows)


def test_default_dims_one_seed():
    rows, _ = run_suite(dims=8, n_seeds=1)
    assert all(r.passed for r in rows), format_table(rows)


def test_corrupted_adjoint_detected():
    rows, _ = run_suite(dims=3, n_seeds=1, corrupt="cosine_address")
    failed = {r.op for r in rows if not r.passed}
    assert {"address", "recall_path", "saving_loss", "bridging_loss"} <= failed
    assert "encoder" not in failed and "task_loss" not in failed


def test_dims_range():
    with pytest.raises(ValueError):
        run_suite(dims=0)
    with pytest.raises(ValueError):
        run_suite(dims=17)


def test_table():
    text = format_table([CheckRow("x", 2 * TOLERANCE, "seed=0 a[0]", 1),
                         CheckRow("y", 0.0, "seed=0 b[1]", 1)])
    assert "FAIL" in text.splitlines()[1] and "PASS" in text.splitlines()[2]
