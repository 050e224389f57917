"""Distillation loss and combined objective tests."""

import math

import numpy as np
import pytest

from ctkd import diffcore as dc
from ctkd import distill


def normalize(logits):
    return logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))


class TestKdLoss:
    def test_single_node_known_value(self):
        teacher = np.log(np.array([[[0.75, 0.25]]]))
        student = np.log(np.array([[[0.5, 0.5]]]))
        loss, _ = distill.kd_loss(teacher, student)
        expected = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
        assert loss == pytest.approx(expected, abs=1e-12)
        assert loss == pytest.approx(0.130812, abs=1e-6)

    def test_identical_distributions_zero(self):
        rng = np.random.default_rng(0)
        lp = normalize(rng.normal(size=(3, 4, 5)))
        loss, _ = distill.kd_loss(lp, lp)
        assert loss == 0.0

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            t = normalize(rng.normal(size=(2, 3, 4)))
            s = normalize(rng.normal(size=(2, 3, 4)))
            loss, _ = distill.kd_loss(t, s)
            assert loss >= 0.0

    def test_sums_over_nodes(self):
        rng = np.random.default_rng(2)
        t = normalize(rng.normal(size=(2, 2, 3)))
        s = normalize(rng.normal(size=(2, 2, 3)))
        total, _ = distill.kd_loss(t, s)
        per_node = sum(
            distill.kd_loss(t[i : i + 1, j : j + 1], s[i : i + 1, j : j + 1])[0]
            for i in range(2)
            for j in range(2)
        )
        assert total == pytest.approx(per_node, abs=1e-12)

    def test_asymmetric(self):
        t = np.log(np.array([[[0.9, 0.1]]]))
        s = np.log(np.array([[[0.4, 0.6]]]))
        assert distill.kd_loss(t, s)[0] != pytest.approx(distill.kd_loss(s, t)[0])

    def test_gradient_is_negative_teacher_probs(self):
        rng = np.random.default_rng(3)
        t = normalize(rng.normal(size=(2, 3, 4)))
        s = normalize(rng.normal(size=(2, 3, 4)))
        _, grad = distill.kd_loss(t, s)
        np.testing.assert_allclose(grad, -np.exp(t), atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(dc.DimensionError):
            distill.kd_loss(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))

    def test_node_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        teacher_lp = normalize(rng.normal(size=(2, 2, 4)))
        logits = dc.parameter(rng.normal(size=(2, 2, 4)))
        report = dc.check_gradients(
            lambda: distill.kd_loss_node(teacher_lp, dc.log_softmax(logits, axis=-1)),
            {"logits": logits},
        )
        assert report.passed, report.failures


class TestTotalLoss:
    def test_convex_combination(self):
        cfg = distill.DistillationConfig(alpha=0.02)
        out = distill.total_loss(2.0, 0.5, cfg)
        assert out.total == pytest.approx(0.98 * 2.0 + 0.02 * 0.5, abs=1e-12)
        assert out.transducer_loss == 2.0
        assert out.kd_loss == 0.5

    def test_alpha_zero_ignores_kd(self):
        cfg = distill.DistillationConfig(alpha=0.0)
        assert distill.total_loss(3.5, 99.0, cfg).total == 3.5

    def test_alpha_one_ignores_transducer(self):
        cfg = distill.DistillationConfig(alpha=1.0)
        assert distill.total_loss(99.0, 3.5, cfg).total == 3.5

    def test_invalid_config(self):
        with pytest.raises(distill.DistillError):
            distill.DistillationConfig(alpha=1.5).validate()
        with pytest.raises(distill.DistillError):
            distill.DistillationConfig(temperature=0.0).validate()
