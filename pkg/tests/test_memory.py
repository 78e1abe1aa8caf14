import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmbridge.autodiff import Tensor, kl_divergence, sum_all, tanh
from mmbridge.encoders import encode, init_encoder
from mmbridge.errors import AlignmentError, DimensionError
from mmbridge.memory import (MemoryPair, address, bridge_forward, bridging_loss, recall,
                             reconstruct, saving_loss)


def _cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


class TestAddress:
    def test_identity_memory(self):
        w = address(np.eye(2), np.array([1.0, 0.0]), 100.0).data
        np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-9)

    def test_equal_rows_uniform(self, rng):
        mem = np.tile(rng.standard_normal(3), (5, 1))
        for r in (0.5, 16.0, 300.0):
            w = address(mem, rng.standard_normal(3), r).data
            np.testing.assert_allclose(w, 0.2, atol=1e-15)

    def test_closed_form(self):
        w = address(np.eye(2), np.array([1.0, 1.0]) / math.sqrt(2), 1.0).data
        np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            address(np.eye(3), np.ones(2), 1.0)

    def test_sequence_matches_per_step(self, rng):
        mem = rng.standard_normal((6, 4))
        q = rng.standard_normal((3, 5, 4))
        w = address(mem, q, 16.0).data
        for b in range(3):
            for t in range(5):
                s = np.array([_cos(m, q[b, t]) for m in mem]) * 16.0
                e = np.exp(s - s.max())
                np.testing.assert_allclose(w[b, t], e / e.sum(), atol=1e-13)

    def test_random_calls_are_distributions(self, rng):
        for _ in range(1000):
            n, d = rng.integers(1, 40), rng.integers(1, 16)
            w = address(rng.standard_normal((n, d)), rng.standard_normal(d),
                        rng.uniform(0.1, 50)).data
            assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-6

    @given(st.floats(1e-3, 1e3), st.integers(0, 2 ** 31))
    def test_query_scale_invariance(self, lam, seed):
        r = np.random.default_rng(seed)
        mem, q = r.standard_normal((7, 4)), r.standard_normal(4)
        np.testing.assert_allclose(address(mem, lam * q, 16.0).data,
                                   address(mem, q, 16.0).data, atol=1e-9)


class TestReads:
    def test_one_hot(self, rng):
        mem = rng.standard_normal((4, 3))
        a = np.zeros(4)
        a[2] = 1.0
        assert np.array_equal(reconstruct(a, mem).data, mem[2])
        assert np.array_equal(recall(a, mem).data, mem[2])

    def test_uniform_two_slots(self):
        u, v = np.array([1.0, 3.0]), np.array([5.0, -1.0])
        np.testing.assert_array_equal(reconstruct([0.5, 0.5], np.stack([u, v])).data, (u + v) / 2)

    def test_weighted(self):
        np.testing.assert_allclose(reconstruct([0.3, 0.7], np.eye(2)).data, [0.3, 0.7],
                                   atol=1e-16)

    def test_equal_addressing_equal_reads(self, rng):
        a = rng.dirichlet(np.ones(5), size=4)
        mem = rng.standard_normal((5, 3))
        assert np.array_equal(recall(a, mem).data, reconstruct(a.copy(), mem).data)

    def test_matmul_oracle(self, rng):
        a = rng.dirichlet(np.ones(3))
        mem = rng.standard_normal((3, 2))
        expected = [sum(a[i] * mem[i, k] for i in range(3)) for k in range(2)]
        np.testing.assert_allclose(recall(a, mem).data, expected, atol=1e-12)

    def test_slot_mismatch(self):
        with pytest.raises(DimensionError):
            recall(np.ones(3) / 3, np.eye(2))


class TestLosses:
    def test_saving_zero(self, rng):
        f = rng.standard_normal((3, 2))
        assert saving_loss(f, f.copy()).item() == 0.0

    def test_saving_squared_norm(self):
        assert saving_loss([[1.0, 1.0]], [[0.0, 0.0]]).item() == 2.0

    def test_saving_oracle(self, rng):
        f, g = rng.standard_normal((2, 4)), rng.standard_normal((2, 4))
        expected = sum((f[i, k] - g[i, k]) ** 2 for i in range(2) for k in range(4))
        assert saving_loss(f, g).item() == pytest.approx(expected, abs=1e-12)

    def test_bridging_identical(self, rng):
        a = rng.dirichlet(np.ones(4), size=3)
        assert bridging_loss(a, a.copy()).item() == 0.0

    def test_bridging_closed_form(self):
        assert bridging_loss([[1.0, 0.0]], [[0.5, 0.5]]).item() == pytest.approx(math.log(2),
                                                                                abs=1e-15)

    def test_bridging_direction(self):
        # KL(target || source), not the reverse
        p, q = np.array([[0.9, 0.1]]), np.array([[0.5, 0.5]])
        expected = 0.9 * math.log(0.9 / 0.5) + 0.1 * math.log(0.1 / 0.5)
        assert bridging_loss(p, q).item() == pytest.approx(expected, abs=1e-15)

    def test_random_pairs_nonnegative(self, rng):
        for _ in range(1000):
            n = rng.integers(1, 20)
            p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
            assert kl_divergence(p, q).item() >= -1e-9
            assert kl_divergence(p, p).item() <= 1e-9


def _pair(rng, n=6, c=4, d=3, scale=16.0):
    return MemoryPair(Tensor(rng.standard_normal((n, c)), True),
                      Tensor(rng.standard_normal((n, d)), True), scale)


class TestBridge:
    def test_source_only(self, rng):
        mp = _pair(rng)
        out = bridge_forward(rng.standard_normal((5, 4)), None, mp)
        assert out.a_tgt is None and out.reconstructed is None
        assert out.recalled.shape == (5, 3)

    def test_single_slot(self, rng):
        mp = _pair(rng, n=1)
        out = bridge_forward(rng.standard_normal((4, 4)), rng.standard_normal((4, 3)), mp)
        assert np.all(out.a_src.data == 1.0) and np.all(out.a_tgt.data == 1.0)
        for row in out.recalled.data:
            assert np.array_equal(row, mp.value.data[0])

    def test_per_step_oracle(self, rng):
        mp = _pair(rng)
        f_src, f_tgt = rng.standard_normal((4, 4)), rng.standard_normal((4, 3))
        out = bridge_forward(f_src, f_tgt, mp)
        for j in range(4):
            a = address(mp.key.data, f_src[j], 16.0).data
            np.testing.assert_allclose(out.recalled.data[j], a @ mp.value.data, atol=1e-12)
            b = address(mp.value.data, f_tgt[j], 16.0).data
            np.testing.assert_allclose(out.reconstructed.data[j], b @ mp.value.data, atol=1e-12)

    def test_recalled_rows_exact(self, rng):
        mp = _pair(rng)
        out = bridge_forward(rng.standard_normal((2, 4, 4)), None, mp)
        assert np.array_equal(out.recalled.data, out.a_src.data @ mp.value.data)

    def test_misaligned_steps(self, rng):
        with pytest.raises(AlignmentError):
            bridge_forward(rng.standard_normal((4, 4)), rng.standard_normal((5, 3)), _pair(rng))

    def test_memory_shape_checks(self, rng):
        with pytest.raises(DimensionError):
            MemoryPair(Tensor(np.ones((3, 2))), Tensor(np.ones((4, 2))), 16.0)
        with pytest.raises(DimensionError):
            MemoryPair(Tensor(np.ones((0, 2))), Tensor(np.ones((0, 2))), 16.0)

    def test_initialize(self, rng):
        mp = MemoryPair.initialize(8, 5, 3, rng)
        assert mp.slot_count == 8 and mp.scale == 16.0
        assert mp.key.shape == (8, 5) and mp.value.shape == (8, 3)
        assert mp.key.requires_grad and mp.value.requires_grad

    def test_zero_bridge_implies_equal_reads(self, rng):
        # one slot per step and matching addressing on both sides
        mp = _pair(rng, n=1)
        out = bridge_forward(rng.standard_normal((3, 4)), rng.standard_normal((3, 3)), mp)
        assert bridging_loss(out.a_tgt, out.a_src).item() == 0.0
        np.testing.assert_allclose(out.recalled.data, out.reconstructed.data, atol=1e-9)


class TestDetach:
    def _grads(self, rng, detach):
        x_tgt = rng.standard_normal((4, 5))
        enc = init_encoder(5, 6, 3, rng)
        for t in (enc.w1, enc.w2, enc.b1, enc.b2):
            t.requires_grad = True
        mp = _pair(rng)
        f_src = Tensor(rng.standard_normal((4, 4)), True)
        out = bridge_forward(f_src, encode(x_tgt, enc), mp)
        bridging_loss(out.a_tgt, out.a_src, detach_target=detach).backward()
        return enc, mp, f_src

    def test_detached_target_gets_no_gradient(self):
        enc, mp, f_src = self._grads(np.random.default_rng(0), True)
        for t in (enc.w1, enc.w2, enc.b1, enc.b2):
            assert t.grad is None or not np.any(t.grad)
        assert np.any(f_src.grad) and np.any(mp.key.grad)
        assert mp.value.grad is None or not np.any(mp.value.grad)

    def test_undetached_target_gets_gradient(self):
        enc, mp, _ = self._grads(np.random.default_rng(0), False)
        assert np.any(enc.w1.grad) and np.any(mp.value.grad)
