"""Command-line interface.

Exit codes: 0 success, 1 config error (the offending key is named), 2 runtime
failure.  Every command takes ``--config <path>`` plus repeatable
``--set key=value`` overrides; outputs land under ``--out <dir>``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import config as cfg_mod
from . import gradsuite
from .config import ConfigDict, ConfigError, build_model_config, build_toy_corpus_spec, build_train_config, load_config
from .distill import DistillError
from .evaluation import beam_decode, evaluate_corpus, render_evaluation
from .frontend import FrontendError, generate_toy_corpus, read_feature_file, read_manifest, write_manifest
from .model import ModelError, count_parameters, load_checkpoint, model_from_checkpoint, save_checkpoint
from .pipeline import PipelineError, build_pipeline_config, run_pipeline
from .train import TrainError, run_training

log = logging.getLogger("ctkd")

CONFIG_ERRORS = (ConfigError, ModelError, TrainError, DistillError, FrontendError)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ctkd", description="Conformer-transducer progressive distillation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "distill", "pipeline", "eval", "decode", "count-params", "gradcheck", "gen-toy-data"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="config file (dotted.key = value lines)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", default="out", help="output directory")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    try:
        cfg = load_config(args.config, args.overrides)
        handler = _COMMANDS[args.command]
        return handler(cfg, args.out)
    except CONFIG_ERRORS as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"error: {e}", file=sys.stderr)
        return 2


def _load_datasets(cfg: ConfigDict):
    train_manifest = cfg.take_str("data.train_manifest")
    dev_manifest = cfg.take_str("data.dev_manifest")
    if not train_manifest:
        raise ConfigError("missing key: data.train_manifest")
    train_set = read_manifest(train_manifest)
    dev_set = read_manifest(dev_manifest) if dev_manifest else None
    return train_set, dev_set


def cmd_train(cfg: ConfigDict, out_dir: str, mode: str = "scratch") -> int:
    train_cfg = build_train_config(cfg)
    if mode == "distill":
        train_cfg.mode = "distill"
        train_cfg.validate()
    train_set, dev_set = _load_datasets(cfg)
    cfg.ensure_consumed()
    os.makedirs(out_dir, exist_ok=True)
    result = run_training(train_cfg, train_set, dev_set)
    ckpt_path = os.path.join(out_dir, "model.ckpt")
    save_checkpoint(result.checkpoint, ckpt_path)
    with open(os.path.join(out_dir, "metrics.tsv"), "w") as f:
        f.write("\n".join(result.log_lines) + "\n")
    print(f"checkpoint written to {ckpt_path}")
    if result.diverged:
        print("training diverged; last good checkpoint retained", file=sys.stderr)
        return 2
    return 0


def cmd_distill(cfg: ConfigDict, out_dir: str) -> int:
    return cmd_train(cfg, out_dir, mode="distill")


def cmd_pipeline(cfg: ConfigDict, out_dir: str) -> int:
    if "seeds" in cfg.items:  # shorthand for pipeline.seeds
        cfg.items["pipeline.seeds"] = cfg.items.pop("seeds")
    pipe = build_pipeline_config(cfg, out_dir)
    train_set = read_manifest(pipe.train_manifest) if pipe.train_manifest else None
    if not train_set:
        raise ConfigError("missing key: data.train_manifest")
    dev_set = read_manifest(pipe.dev_manifest) if pipe.dev_manifest else None
    eval_sets = {name: read_manifest(path) for name, path in pipe.eval_manifests.items()}
    cfg.ensure_consumed()
    result = run_pipeline(pipe, train_set, dev_set, eval_sets)
    print(result.table_text)
    if result.failed_stage is not None:
        print(f"pipeline halted at stage {result.failed_stage}; partial results preserved", file=sys.stderr)
        return 2
    return 0


def cmd_eval(cfg: ConfigDict, out_dir: str) -> int:
    ckpt_path = cfg.take_str("eval.checkpoint")
    if not ckpt_path:
        raise ConfigError("missing key: eval.checkpoint")
    beam_size = cfg.take_int("eval.beam_size", 8)
    max_symbols = cfg.take_int("eval.max_symbols_per_frame", 10)
    test_manifest = cfg.take_str("data.test_manifest")
    if not test_manifest:
        raise ConfigError("missing key: data.test_manifest")
    cfg.ensure_consumed()
    model = model_from_checkpoint(load_checkpoint(ckpt_path))
    utts = read_manifest(test_manifest)
    summary = evaluate_corpus(model, utts, beam_size=beam_size, max_symbols_per_frame=max_symbols)
    text = render_evaluation(summary)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "eval.txt"), "w") as f:
        f.write(text + "\n")
    print(text)
    return 0


def cmd_decode(cfg: ConfigDict, out_dir: str) -> int:
    ckpt_path = cfg.take_str("decode.checkpoint")
    feat_path = cfg.take_str("decode.features")
    if not ckpt_path or not feat_path:
        raise ConfigError("missing key: decode.checkpoint / decode.features")
    beam_size = cfg.take_int("decode.beam_size", 8)
    cfg.ensure_consumed()
    model = model_from_checkpoint(load_checkpoint(ckpt_path))
    features = read_feature_file(feat_path)
    hyp = beam_decode(model, features, beam_size=beam_size)
    print(" ".join(map(str, hyp.tokens)))
    return 0


def cmd_count_params(cfg: ConfigDict, out_dir: str) -> int:
    mc = build_model_config(cfg)
    cfg.ensure_consumed()
    count = count_parameters(mc)
    print(f"parameters: {count} ({count / 1e6:.2f}M)")
    return 0


def cmd_gradcheck(cfg: ConfigDict, out_dir: str) -> int:
    seed = cfg.take_int("gradcheck.seed", 0)
    cfg.ensure_consumed()
    results = gradsuite.full_suite(seed)
    failed = 0
    for r in results:
        print(r.line())
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return 0 if failed == 0 else 2


def cmd_gen_toy_data(cfg: ConfigDict, out_dir: str) -> int:
    test_utts = cfg.take_int("corpus.test_utterances", 0)
    spec = build_toy_corpus_spec(cfg)
    cfg.ensure_consumed()
    full_spec = type(spec)(**{**spec.__dict__, "num_utterances": spec.num_utterances + test_utts})
    utts = generate_toy_corpus(full_spec)
    train, test = utts[: spec.num_utterances], utts[spec.num_utterances :]
    os.makedirs(out_dir, exist_ok=True)
    write_manifest(os.path.join(out_dir, "train_manifest.tsv"), train, os.path.join(out_dir, "feats"))
    print(f"wrote {len(train)} training utterances")
    if test:
        write_manifest(os.path.join(out_dir, "test_manifest.tsv"), test, os.path.join(out_dir, "feats"))
        print(f"wrote {len(test)} test utterances")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "distill": cmd_distill,
    "pipeline": cmd_pipeline,
    "eval": cmd_eval,
    "decode": cmd_decode,
    "count-params": cmd_count_params,
    "gradcheck": cmd_gradcheck,
    "gen-toy-data": cmd_gen_toy_data,
}


if __name__ == "__main__":
    sys.exit(main())
