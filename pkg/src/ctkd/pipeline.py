"""Multi-stage progressive distillation orchestrator.

Each stage distills a smaller student from a resolved teacher; the student's
checkpoint becomes the next stage's teacher.  Optional per-stage extras: a
same-config scratch baseline and a same-config student distilled directly
from the original teacher.  Emits a report table with parameter counts,
compression percentages, and per-set WER/SER.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import os
import shutil
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import NamedTuple

import numpy as np

from . import config as config_mod
from .config import ConfigDict, ConfigError, build_model_config, build_train_config, merged_view
from .evaluation import evaluate_corpus
from .frontend import Utterance
from .model import ModelConfig, load_checkpoint, parameter_shapes, save_checkpoint
from .train import TrainConfig, run_training
from .model import model_from_checkpoint

log = logging.getLogger(__name__)


class PipelineError(Exception):
    pass


def exact_parameter_count(config: ModelConfig) -> int:
    return int(sum(int(np.prod(s)) for s in parameter_shapes(config).values()))


class CompressionPercent(NamedTuple):
    exact: float
    rounded: int


def compression_percent(teacher_params: int, student_params: int) -> CompressionPercent:
    """100 * (1 - student/teacher); display value rounded half-up to an integer."""
    if teacher_params <= 0:
        raise ConfigError("teacher parameter count must be positive")
    if student_params > teacher_params:
        raise ConfigError(
            f"student ({student_params}) larger than teacher ({teacher_params})"
        )
    exact = 100.0 * (1.0 - student_params / teacher_params)
    rounded = int(Decimal(exact).quantize(Decimal("1"), rounding=ROUND_HALF_UP))
    return CompressionPercent(exact=exact, rounded=rounded)


@dataclass
class StageConfig:
    stage_id: int
    teacher_source: str  # "original" | "previous_stage" | explicit path
    student_model: ModelConfig
    train: TrainConfig  # distill-mode template (model/teacher filled per run)
    baseline: bool = False
    from_original: bool = False

    def validate(self, is_first: bool):
        if self.teacher_source == "previous_stage" and is_first:
            raise ConfigError("stage 1 teacher_source must be 'original' or an explicit path")
        self.student_model.validate()


@dataclass
class PipelineConfig:
    stages: list[StageConfig]
    seeds: list[int]
    eval_manifests: dict[str, str]
    out_dir: str
    teacher_checkpoint: str | None = None
    teacher_train: TrainConfig | None = None
    train_manifest: str | None = None
    dev_manifest: str | None = None
    beam_size: int = 8

    def validate(self):
        if not self.stages:
            raise ConfigError("pipeline needs at least one stage")
        if not self.seeds:
            raise ConfigError("pipeline needs at least one seed")
        if self.teacher_checkpoint is None and self.teacher_train is None:
            raise ConfigError("pipeline needs teacher.checkpoint or a teacher.model/teacher.train section")
        counts = []
        for i, stage in enumerate(self.stages):
            stage.validate(is_first=i == 0)
            counts.append(exact_parameter_count(stage.student_model))
        if any(b >= a for a, b in zip(counts, counts[1:])):
            raise ConfigError("student parameter counts must strictly decrease across stages")


@dataclass
class StageReport:
    stage_id: int
    label: str  # T/S/B naming
    role: str  # teacher | student | baseline | student_from_original
    seed: int
    parameter_count: int
    comp_vs_stage_teacher: CompressionPercent | None
    comp_vs_original: CompressionPercent | None
    metrics: dict[str, tuple[float, float]]  # set name -> (wer %, ser %)
    checkpoint_path: str = ""

    def consistent(self, original_count: int, stage_teacher_count: int, tolerance: int = 1) -> bool:
        ok = True
        if self.comp_vs_original is not None:
            ok &= abs(compression_percent(original_count, self.parameter_count).rounded
                      - self.comp_vs_original.rounded) <= tolerance
        if self.comp_vs_stage_teacher is not None:
            ok &= abs(compression_percent(stage_teacher_count, self.parameter_count).rounded
                      - self.comp_vs_stage_teacher.rounded) <= tolerance
        return ok


def build_pipeline_config(cfg: ConfigDict, out_dir: str) -> PipelineConfig:
    seeds = cfg.take_int_list("pipeline.seeds", [0])
    beam_size = cfg.take_int("eval.beam_size", 8)
    train_manifest = cfg.take_str("data.train_manifest")
    dev_manifest = cfg.take_str("data.dev_manifest")
    eval_manifests: dict[str, str] = {}
    test_manifest = cfg.take_str("data.test_manifest")
    if test_manifest:
        eval_manifests["test"] = test_manifest
    for key in cfg.keys_with_prefix("data.eval."):
        eval_manifests[key[len("data.eval."):]] = cfg.take(key)

    teacher_checkpoint = cfg.take_str("teacher.checkpoint")
    teacher_train = None
    if teacher_checkpoint is None:
        if not cfg.keys_with_prefix("teacher."):
            raise ConfigError("pipeline needs teacher.checkpoint or a teacher.model section")
        teacher_model = build_model_config(cfg, "teacher.model.")
        merged = merged_view(cfg, "train.", "teacher.train.", "train.")
        teacher_train = build_train_config(merged, "train.", model=teacher_model)
        merged.ensure_consumed()

    stage_ids = sorted(
        {int(k.split(".")[1]) for k in cfg.keys_with_prefix("stage.") if k.split(".")[1].isdigit()}
    )
    if stage_ids != list(range(1, len(stage_ids) + 1)):
        raise ConfigError(f"stage ids must be 1..N, got {stage_ids}")
    stages = []
    for sid in stage_ids:
        p = f"stage.{sid}."
        student_model = build_model_config(cfg, p + "student.")
        merged = merged_view(cfg, "train.", p + "train.", "train.")
        train = build_train_config(merged, "train.", model=student_model)
        merged.ensure_consumed()
        train.mode = "distill"
        stages.append(
            StageConfig(
                stage_id=sid,
                teacher_source=cfg.take_str(p + "teacher_source", "previous_stage" if sid > 1 else "original"),
                student_model=student_model,
                train=train,
                baseline=cfg.take_bool(p + "baseline", False),
                from_original=cfg.take_bool(p + "from_original", False),
            )
        )
        cfg.ensure_consumed(p)

    pipe = PipelineConfig(
        stages=stages,
        seeds=seeds,
        eval_manifests=eval_manifests,
        out_dir=out_dir,
        teacher_checkpoint=teacher_checkpoint,
        teacher_train=teacher_train,
        train_manifest=train_manifest,
        dev_manifest=dev_manifest,
        beam_size=beam_size,
    )
    pipe.validate()
    return pipe


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


@dataclass
class PipelineResult:
    reports: list[StageReport]
    table_text: str
    table_tsv: str
    promotion_hashes: list[tuple[int, str, str]] = field(default_factory=list)  # (stage, teacher, source)
    failed_stage: int | None = None


def run_pipeline(
    pipe: PipelineConfig,
    train_set: list[Utterance],
    dev_set: list[Utterance] | None,
    eval_sets: dict[str, list[Utterance]],
) -> PipelineResult:
    pipe.validate()
    os.makedirs(pipe.out_dir, exist_ok=True)
    reports: list[StageReport] = []
    promotion_hashes: list[tuple[int, str, str]] = []
    failed_stage = None

    s_counter = 0
    b_counter = 0
    # label maps shared across seeds so rows aggregate
    labels_assigned: dict[tuple[int, str], str] = {}

    def assign_label(stage_id: int, role: str) -> str:
        nonlocal s_counter, b_counter
        key = (stage_id, role)
        if key not in labels_assigned:
            if role == "baseline":
                b_counter += 1
                labels_assigned[key] = f"B{b_counter}"
            elif role in ("student", "student_from_original"):
                s_counter += 1
                labels_assigned[key] = f"S{s_counter}"
        return labels_assigned[key]

    for seed in pipe.seeds:
        seed_dir = os.path.join(pipe.out_dir, f"seed{seed}")
        os.makedirs(seed_dir, exist_ok=True)

        # original teacher
        if pipe.teacher_checkpoint:
            original_path = pipe.teacher_checkpoint
        else:
            original_path = os.path.join(seed_dir, "teacher.ckpt")
            tcfg = copy.deepcopy(pipe.teacher_train)
            tcfg.seed = seed
            result = _train_and_save(tcfg, train_set, dev_set, original_path, seed_dir, "teacher")
        original_count = exact_parameter_count(load_checkpoint(original_path).config)
        reports.append(
            _evaluate_checkpoint(
                original_path, 1, "T1", "teacher", seed, None, None, eval_sets, pipe.beam_size
            )
        )

        report_by_path: dict[str, StageReport] = {original_path: reports[-1]}
        prev_student_path = original_path
        try:
            for stage in pipe.stages:
                stage_dir = os.path.join(seed_dir, f"stage{stage.stage_id}")
                os.makedirs(stage_dir, exist_ok=True)

                teacher_path = _resolve_teacher(stage, original_path, prev_student_path)
                # keep a byte-identical copy so the promotion identity is auditable
                local_teacher = os.path.join(stage_dir, "teacher.ckpt")
                if os.path.abspath(teacher_path) != os.path.abspath(local_teacher):
                    shutil.copyfile(teacher_path, local_teacher)
                promotion_hashes.append(
                    (stage.stage_id, file_sha256(local_teacher), file_sha256(teacher_path))
                )
                teacher_count = exact_parameter_count(load_checkpoint(teacher_path).config)
                student_count = exact_parameter_count(stage.student_model)

                if stage.stage_id > 1 or stage.teacher_source != "original":
                    prior = report_by_path.get(teacher_path)
                    if prior is None:
                        prior = _evaluate_checkpoint(
                            teacher_path, stage.stage_id, f"T{stage.stage_id}", "teacher",
                            seed, None, None, eval_sets, pipe.beam_size,
                        )
                    t_label = f"T{stage.stage_id}"
                    if prior.role in ("student", "student_from_original"):
                        t_label = f"T{stage.stage_id}={prior.label}"
                    teacher_row = StageReport(
                        stage_id=stage.stage_id,
                        label=t_label,
                        role="teacher",
                        seed=seed,
                        parameter_count=prior.parameter_count,
                        comp_vs_stage_teacher=prior.comp_vs_stage_teacher,
                        comp_vs_original=prior.comp_vs_original,
                        metrics=dict(prior.metrics),
                        checkpoint_path=teacher_path,
                    )
                    reports.append(teacher_row)
                if student_count >= teacher_count:
                    raise PipelineError(
                        f"stage {stage.stage_id}: student ({student_count}) must be smaller "
                        f"than its teacher ({teacher_count})"
                    )

                runs = [("student", teacher_path)]
                if stage.baseline:
                    runs.append(("baseline", None))
                if stage.from_original:
                    runs.append(("student_from_original", original_path))
                for role, tpath in runs:
                    cfg = copy.deepcopy(stage.train)
                    cfg.seed = seed
                    if tpath is None:
                        cfg.mode = "scratch"
                        cfg.teacher_checkpoint = None
                    else:
                        cfg.mode = "distill"
                        cfg.teacher_checkpoint = tpath
                    ckpt_path = os.path.join(stage_dir, f"{role}.ckpt")
                    _train_and_save(cfg, train_set, dev_set, ckpt_path, stage_dir, role)
                    label = assign_label(stage.stage_id, role)
                    comp_teacher = None
                    if role != "baseline":
                        ref_count = teacher_count if role == "student" else original_count
                        comp_teacher = compression_percent(ref_count, student_count)
                    report = _evaluate_checkpoint(
                        ckpt_path,
                        stage.stage_id,
                        label,
                        role,
                        seed,
                        comp_teacher,
                        compression_percent(original_count, student_count),
                        eval_sets,
                        pipe.beam_size,
                    )
                    reports.append(report)
                    report_by_path[ckpt_path] = report
                    if role == "student":
                        prev_student_path = ckpt_path
        except ConfigError:
            raise
        except Exception as e:  # partial results preserved and marked
            log.error("pipeline stage %s failed for seed %d: %s", stage.stage_id, seed, e)
            failed_stage = stage.stage_id
            break

    table_text, table_tsv = render_report(reports, pipe.seeds)
    with open(os.path.join(pipe.out_dir, "report.txt"), "w") as f:
        f.write(table_text + "\n")
    with open(os.path.join(pipe.out_dir, "report.tsv"), "w") as f:
        f.write(table_tsv + "\n")
    return PipelineResult(
        reports=reports,
        table_text=table_text,
        table_tsv=table_tsv,
        promotion_hashes=promotion_hashes,
        failed_stage=failed_stage,
    )


def _resolve_teacher(stage: StageConfig, original_path: str, prev_student_path: str) -> str:
    if stage.teacher_source == "original":
        return original_path
    if stage.teacher_source == "previous_stage":
        return prev_student_path
    if os.path.exists(stage.teacher_source):
        return stage.teacher_source
    raise ConfigError(f"stage {stage.stage_id}: teacher checkpoint {stage.teacher_source!r} not found")


def _train_and_save(cfg: TrainConfig, train_set, dev_set, ckpt_path: str, out_dir: str, tag: str):
    result = run_training(cfg, train_set, dev_set)
    save_checkpoint(result.checkpoint, ckpt_path)
    with open(os.path.join(out_dir, f"{tag}_metrics.tsv"), "w") as f:
        f.write("\n".join(result.log_lines) + "\n")
    return result


def _evaluate_checkpoint(path, stage_id, label, role, seed, comp_teacher, comp_original, eval_sets, beam_size):
    model = model_from_checkpoint(load_checkpoint(path))
    metrics = {}
    for name, utts in eval_sets.items():
        summary = evaluate_corpus(model, utts, beam_size=beam_size)
        metrics[name] = (summary.wer_percent, summary.ser_percent)
    return StageReport(
        stage_id=stage_id,
        label=label,
        role=role,
        seed=seed,
        parameter_count=model.num_parameters(),
        comp_vs_stage_teacher=comp_teacher,
        comp_vs_original=comp_original,
        metrics=metrics,
        checkpoint_path=path,
    )


def render_report(reports: list[StageReport], seeds: list[int]) -> tuple[str, str]:
    """Aggregate per-seed reports into a Table-1-style text table and a TSV twin."""
    set_names = sorted({name for r in reports for name in r.metrics})
    groups: dict[tuple[int, str], list[StageReport]] = {}
    for r in reports:
        groups.setdefault((r.stage_id, r.label), []).append(r)

    def fmt_comp(c: CompressionPercent | None) -> str:
        return "-" if c is None else str(c.rounded)

    def fmt_metric(values: list[float]) -> str:
        if len(values) == 1:
            return f"{values[0]:.2f}"
        return f"{np.mean(values):.2f}±{np.std(values):.2f}"

    header = ["Stage", "Model", "Params", "%Comp w.r.t. teacher", "%Comp w.r.t. T1"]
    for name in set_names:
        header += [f"{name} WER", f"{name} SER"]

    rows = []
    for (stage_id, label) in sorted(groups, key=lambda k: (k[0], _label_sort_key(k[1]))):
        rs = groups[(stage_id, label)]
        row = [
            str(stage_id),
            label,
            f"{rs[0].parameter_count:,}",
            fmt_comp(rs[0].comp_vs_stage_teacher),
            fmt_comp(rs[0].comp_vs_original),
        ]
        for name in set_names:
            row.append(fmt_metric([r.metrics[name][0] for r in rs if name in r.metrics]))
            row.append(fmt_metric([r.metrics[name][1] for r in rs if name in r.metrics]))
        rows.append(row)

    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    text = "\n".join(lines)
    tsv = "\n".join(["\t".join(header)] + ["\t".join(r) for r in rows])
    return text, tsv


def _label_sort_key(label: str) -> tuple:
    order = {"T": 0, "B": 1, "S": 2}
    return (order.get(label[0], 3), label)
