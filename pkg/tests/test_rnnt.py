"""Transducer lattice loss tests against an independent path-enumeration oracle."""

import math
import time

import numpy as np
import pytest

from ctkd import diffcore as dc
from ctkd import rnnt


def random_lattice(rng, t_len, u_len, vocab):
    logits = rng.normal(size=(t_len, u_len + 1, vocab + 1))
    return logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))


def uniform_lattice(t_len, u_len, vocab):
    return np.full((t_len, u_len + 1, vocab + 1), -math.log(vocab + 1))


class TestKnownValues:
    def test_single_frame_single_label_uniform(self):
        # one path: emit the label, then blank; each step has probability 1/9
        lp = uniform_lattice(1, 1, 8)
        res = rnnt.rnnt_loss(lp, [3])
        assert res.loss == pytest.approx(2.0 * math.log(9.0), abs=1e-12)

    def test_two_frames_one_label_uniform(self):
        # two paths of three uniform steps each: loss = -ln(2 / 27)
        lp = uniform_lattice(2, 1, 2)
        res = rnnt.rnnt_loss(lp, [1])
        assert res.loss == pytest.approx(-math.log(2.0 / 27.0), abs=1e-12)

    def test_deterministic_lattice_zero_loss(self):
        # put all mass on the correct emissions: the single path has probability 1
        t_len, u_len, vocab = 3, 2, 3
        labels = [1, 3]
        lp = np.full((t_len, u_len + 1, vocab + 1), -1e9)
        lp[0, 0, 1] = 0.0
        lp[0, 1, 3] = 0.0
        lp[0, 2, 0] = 0.0
        lp[1, 2, 0] = 0.0
        lp[2, 2, 0] = 0.0
        res = rnnt.rnnt_loss(lp, labels)
        assert res.loss == pytest.approx(0.0, abs=1e-9)

    def test_alignment_counts(self):
        assert rnnt.count_alignments(1, 1) == 1
        assert rnnt.count_alignments(2, 1) == 2
        assert rnnt.count_alignments(4, 3) == math.comb(6, 3)


class TestOracleAgreement:
    def test_thousand_random_instances(self):
        rng = np.random.default_rng(0)
        start = time.monotonic()
        worst = 0.0
        for _ in range(1000):
            t_len = int(rng.integers(1, 5))
            u_len = int(rng.integers(0, 4))
            vocab = int(rng.integers(1, 4))
            labels = rng.integers(1, vocab + 1, size=u_len).tolist()
            lp = random_lattice(rng, t_len, u_len, vocab)
            fast = rnnt.rnnt_loss(lp, labels).loss
            slow = rnnt.enumerate_alignments_oracle(lp, labels)
            worst = max(worst, abs(fast - slow))
        elapsed = time.monotonic() - start
        assert worst <= 1e-6
        assert elapsed < 60.0

    def test_oracle_guard(self):
        lp = uniform_lattice(7, 1, 2)
        with pytest.raises(dc.ContractError, match="guard"):
            rnnt.enumerate_alignments_oracle(lp, [1])

    def test_oracle_agrees_on_empty_label_sequence(self):
        rng = np.random.default_rng(1)
        lp = random_lattice(rng, 3, 0, 2)
        fast = rnnt.rnnt_loss(lp, []).loss
        slow = rnnt.enumerate_alignments_oracle(lp, [])
        assert fast == pytest.approx(slow, abs=1e-12)


class TestGradient:
    def test_matches_finite_differences_through_log_softmax(self):
        rng = np.random.default_rng(2)
        logits = dc.parameter(rng.normal(size=(3, 3, 4)))
        labels = [2, 1]
        report = dc.check_gradients(
            lambda: rnnt.transducer_loss_node(dc.log_softmax(logits, axis=-1), labels),
            {"logits": logits},
        )
        assert report.passed, report.failures

    def test_gradient_mass_sums_to_negative_expected_path_length(self):
        # occupancies sum to 1 per consumed arc; total arcs = T + U on every path
        rng = np.random.default_rng(3)
        t_len, u_len = 4, 2
        lp = random_lattice(rng, t_len, u_len, 3)
        res = rnnt.rnnt_loss(lp, [1, 2])
        assert res.grad_log_probs.sum() == pytest.approx(-(t_len + u_len), abs=1e-9)

    def test_unreachable_nodes_get_zero_gradient(self):
        rng = np.random.default_rng(4)
        lp = random_lattice(rng, 3, 2, 3)
        res = rnnt.rnnt_loss(lp, [1, 2])
        # node (0, 2) is reachable, but its blank arc from (2, 0) upward only:
        # the final frame must still emit remaining labels; check a truly dead arc
        # label arc at (t, u) for symbols other than labels[u] never contributes
        assert res.grad_log_probs[0, 0, 2] == 0.0
        assert res.grad_log_probs[1, 1, 1] == 0.0


class TestValidation:
    def test_wrong_rank(self):
        with pytest.raises(rnnt.LatticeError):
            rnnt.rnnt_loss(np.zeros((2, 3)), [1])

    def test_label_count_mismatch(self):
        with pytest.raises(rnnt.LatticeError, match="label positions"):
            rnnt.rnnt_loss(uniform_lattice(2, 2, 2), [1])

    def test_label_out_of_range(self):
        with pytest.raises(rnnt.LatticeError, match="out of range"):
            rnnt.rnnt_loss(uniform_lattice(2, 1, 2), [3])

    def test_blank_label_rejected(self):
        with pytest.raises(rnnt.LatticeError, match="out of range"):
            rnnt.rnnt_loss(uniform_lattice(2, 1, 2), [0])
