"""Acceptance gate: one test (and one printed pass/fail line) per criterion.

The heavyweight criteria share a session-scoped two-stage distillation run on
the synthetic corpus (2000 train / 200 test utterances, vocabulary 8):
teacher ~223k params -> student ~99k -> student ~54k, three seeds, plus a
scratch baseline and a direct (single-hop) student at the final size.
"""

import time

import numpy as np
import pytest

from ctkd import distill, gradsuite, pipeline as pl, rnnt
from ctkd import train as tr
from ctkd.frontend import AugmentPolicy, ToyCorpusSpec, generate_toy_corpus
from ctkd.model import (
    DecoderConfig,
    EncoderConfig,
    Model,
    ModelConfig,
    ConfigMismatchError,
    count_parameters,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)


def report(num: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f"  ({detail})" if detail else ""
    print(f"criterion {num} [{status}] {name}{suffix}")
    assert ok, f"criterion {num} failed: {name}{suffix}"


def test_criterion_1_lattice_loss_matches_enumeration_oracle():
    rng = np.random.default_rng(0)
    start = time.monotonic()
    worst = 0.0
    for _ in range(1000):
        t_len = int(rng.integers(1, 5))
        u_len = int(rng.integers(0, 4))
        vocab = int(rng.integers(1, 4))
        labels = rng.integers(1, vocab + 1, size=u_len).tolist()
        logits = rng.normal(size=(t_len, u_len + 1, vocab + 1))
        lp = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
        worst = max(worst, abs(rnnt.rnnt_loss(lp, labels).loss - rnnt.enumerate_alignments_oracle(lp, labels)))
    elapsed = time.monotonic() - start
    report(
        1,
        "lattice loss equals path-enumeration oracle over 1000 instances",
        worst <= 1e-6 and elapsed < 60.0,
        f"max |diff| {worst:.2e}, {elapsed:.1f}s",
    )


def test_criterion_2_gradient_suites():
    start = time.monotonic()
    results = gradsuite.full_suite(seed=0)
    elapsed = time.monotonic() - start
    failed = [r.name for r in results if not r.passed]
    worst = max(r.worst for r in results)
    report(
        2,
        "finite-difference gradient checks for every op, both losses, and an end-to-end model",
        not failed and worst <= 1e-4 and elapsed < 600.0,
        f"{len(results)} checks, max rel err {worst:.2e}, {elapsed:.0f}s" + (f", failed: {failed}" if failed else ""),
    )


def test_criterion_3_learning_rate_schedule_exactness():
    cfg = tr.ScheduleConfig(base_lr=1e-4, warmup=10000, decay_steps=40000)
    checks = [
        (0, 1.0e-7, 1e-12),
        (5000, 1.26e-5, 1e-8),
        (10000, 1.0e-4, 1e-12),
        (650000, 9.2651e-5, 1e-9),
    ]
    ok = all(abs(tr.learning_rate(step, cfg) - want) <= tol for step, want, tol in checks)
    report(3, "learning-rate schedule reproduces the published values", ok)


def test_criterion_4_compression_table_cells():
    cells = [
        (128, 80, 38),
        (128, 62, 52),
        (80, 62, 23),
        (128, 46, 64),
        (62, 46, 25),
        (128, 57, 55),
        (128, 24, 81),
        (57, 24, 58),
    ]
    deltas = [abs(pl.compression_percent(t, s).rounded - want) for t, s, want in cells]
    report(
        4,
        "compression percentages reproduce every reference table cell within 1 point",
        max(deltas) <= 1,
        f"max delta {max(deltas)}",
    )


def test_criterion_5_large_teacher_parameter_count():
    cfg = ModelConfig(
        encoder=EncoderConfig(
            num_layers=16, model_dim=512, attention_heads=4, ff_expansion=4,
            conv_kernel=15, pooling_layers=3, dropout=0.1, max_positions=4096,
        ),
        decoder=DecoderConfig(num_layers=2, hidden_dim=1024, dropout=0.1),
        joint_dim=512, vocab_size=10026, input_dim=80,
    )
    count = count_parameters(cfg)
    rel = abs(count - 128e6) / 128e6
    report(
        5,
        "16-layer teacher configuration lands within 15% of 128M parameters",
        rel <= 0.15,
        f"{count:,} params, {100 * rel:.1f}% from 128M (joint_dim=512, ff_expansion=4, max_positions=4096)",
    )


# ---------------------------------------------------------------------------
# shared distillation experiment (criteria 6-8)

SEEDS = [0, 1, 2]


def toy_model(num_layers, model_dim, heads, dec_hidden, joint_dim):
    return ModelConfig(
        encoder=EncoderConfig(
            num_layers=num_layers, model_dim=model_dim, attention_heads=heads, ff_expansion=2,
            conv_kernel=7, pooling_layers=2, dropout=0.1, max_positions=64,
        ),
        decoder=DecoderConfig(num_layers=1, hidden_dim=dec_hidden, dropout=0.1),
        joint_dim=joint_dim, vocab_size=8, input_dim=16,
    )


def toy_train_config(model, epochs):
    return tr.TrainConfig(
        model=model,
        schedule=tr.ScheduleConfig(base_lr=3e-3, warmup=200, decay_steps=2000),
        augment=AugmentPolicy(freq_mask_width_max=3, freq_masks=1, time_mask_width_max=4, time_masks=1),
        batch_size=16,
        epochs=epochs,
        seed=0,
    )


@pytest.fixture(scope="session")
def corpus():
    spec = ToyCorpusSpec(
        vocab_size=8, num_utterances=2200, label_len_min=3, label_len_max=8,
        frames_per_label=4, noise_std=0.1, synthesizer_seed=0, feature_dim=16,
    )
    utts = generate_toy_corpus(spec)
    return utts[:2000], utts[2000:]


@pytest.fixture(scope="session")
def pipeline_run(corpus, tmp_path_factory):
    train_set, test_set = corpus
    teacher_model = toy_model(3, 56, 4, 96, 64)   # ~223k params
    mid_model = toy_model(2, 44, 4, 64, 48)       # ~99k params
    small_model = toy_model(2, 32, 2, 48, 32)     # ~54k params

    pipe = pl.PipelineConfig(
        stages=[
            pl.StageConfig(
                stage_id=1,
                teacher_source="original",
                student_model=mid_model,
                train=toy_train_config(mid_model, epochs=4),
            ),
            pl.StageConfig(
                stage_id=2,
                teacher_source="previous_stage",
                student_model=small_model,
                train=toy_train_config(small_model, epochs=4),
                baseline=True,
                from_original=True,
            ),
        ],
        seeds=SEEDS,
        eval_manifests={},
        out_dir=str(tmp_path_factory.mktemp("acceptance_pipeline")),
        teacher_train=toy_train_config(teacher_model, epochs=6),
        beam_size=1,
    )
    start = time.monotonic()
    result = pl.run_pipeline(pipe, train_set, None, {"test": test_set})
    elapsed = time.monotonic() - start
    return result, elapsed


def mean_wer(result, role, stage_id):
    values = [
        r.metrics["test"][0] for r in result.reports if r.role == role and r.stage_id == stage_id
    ]
    assert len(values) == len(SEEDS)
    return float(np.mean(values))


def test_criterion_6_distillation_beats_scratch(pipeline_run):
    result, elapsed = pipeline_run
    distilled = mean_wer(result, "student_from_original", 2)
    scratch = mean_wer(result, "baseline", 2)
    report(
        6,
        "mean WER of the distilled small student is at most the scratch baseline's (3 seeds)",
        distilled <= scratch and elapsed < 1800.0,
        f"distilled {distilled:.2f} vs scratch {scratch:.2f}, shared run {elapsed:.0f}s",
    )


def test_criterion_7_multistage_pipeline_vs_direct(pipeline_run):
    result, elapsed = pipeline_run
    multistage = mean_wer(result, "student", 2)
    direct = mean_wer(result, "student_from_original", 2)
    promotion_ok = all(copied == source for _, copied, source in result.promotion_hashes)
    table_ok = "T2=S1" in result.table_text and result.table_tsv.count("\n") >= 6
    report(
        7,
        "two-stage pipeline runs end to end with verified promotion; multi-stage vs direct reported",
        result.failed_stage is None and promotion_ok and table_ok and elapsed < 3600.0,
        f"multi-stage {multistage:.2f} vs direct {direct:.2f} mean WER, {elapsed:.0f}s",
    )


def test_criterion_8_streaming_causality(pipeline_run, corpus):
    result, _ = pipeline_run
    _, test_set = corpus
    student = next(
        r for r in result.reports if r.role == "student" and r.stage_id == 2 and r.seed == SEEDS[0]
    )
    model = model_from_checkpoint(load_checkpoint(student.checkpoint_path))
    factor = model.config.pooling_factor
    rng = np.random.default_rng(123)
    ok = True
    for utt in test_set[:50]:
        feats = utt.features
        base = model.lattice(feats, utt.labels, training=False).data
        t = int(rng.integers(0, base.shape[0]))
        poked = feats.copy()
        cut = (t + 1) * factor
        poked[cut:] = rng.normal(size=poked[cut:].shape)
        again = model.lattice(poked, utt.labels, training=False).data
        if not np.array_equal(base[: t + 1], again[: t + 1]):
            ok = False
            break
    report(8, "lattice outputs up to pooled frame t are bit-identical under future-frame noise", ok)


def test_criterion_9_distillation_degenerate_cases(tmp_path):
    # self-distillation has exactly zero loss
    rng = np.random.default_rng(0)
    zero_ok = True
    for seed in range(3):
        model = Model(toy_model(2, 16, 2, 16, 16), seed=seed)
        lat = model.lattice(rng.normal(size=(8, 16)), [1, 2]).data
        loss, _ = distill.kd_loss(lat, lat)
        zero_ok &= loss == 0.0

    # alpha = 0 distillation follows the scratch trajectory bit for bit
    spec = ToyCorpusSpec(
        vocab_size=4, num_utterances=24, label_len_min=2, label_len_max=4,
        frames_per_label=4, noise_std=0.05, feature_dim=10,
    )
    utts = generate_toy_corpus(spec)
    small = toy_model(2, 16, 2, 16, 16)
    small.vocab_size = 4
    small.input_dim = 10
    base_cfg = tr.TrainConfig(
        model=small,
        schedule=tr.ScheduleConfig(base_lr=2e-3, warmup=10, decay_steps=100),
        augment=AugmentPolicy(freq_mask_width_max=2, freq_masks=1, time_mask_width_max=2, time_masks=1),
        batch_size=8, epochs=2, seed=0,
    )
    teacher = tr.run_training(base_cfg, utts)
    teacher_path = str(tmp_path / "teacher.ckpt")
    save_checkpoint(teacher.checkpoint, teacher_path)

    scratch = tr.run_training(base_cfg, utts)
    distill_cfg = tr.TrainConfig(**{**base_cfg.__dict__})
    distill_cfg.mode = "distill"
    distill_cfg.teacher_checkpoint = teacher_path
    distill_cfg.distill = distill.DistillationConfig(alpha=0.0)
    distilled = tr.run_training(distill_cfg, utts)
    identical = all(
        np.array_equal(scratch.checkpoint.params[n], distilled.checkpoint.params[n])
        for n in scratch.checkpoint.params
    )
    report(9, "self-distillation loss is zero and alpha=0 training is bit-identical to scratch", zero_ok and identical)


def test_criterion_10_checkpoint_round_trip(tmp_path):
    model = Model(toy_model(2, 32, 2, 48, 32), seed=11)
    p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
    save_checkpoint(model, p1, step=7, seed=11)
    save_checkpoint(load_checkpoint(p1), p2)
    byte_identical = open(p1, "rb").read() == open(p2, "rb").read()

    other = toy_model(2, 32, 2, 48, 32)
    other.encoder.num_layers = 3
    rejected = False
    try:
        load_checkpoint(p1, expected_config=other)
    except ConfigMismatchError:
        rejected = True
    report(10, "checkpoint save/load/save is byte-identical and cross-config load is rejected", byte_identical and rejected)
