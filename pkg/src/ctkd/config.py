"""Flat text config format: one ``dotted.key = value`` per line.

``#`` starts a comment; later keys override earlier ones.  Builders consume
keys from a :class:`ConfigDict`; any key left unconsumed in a namespace is an
error, so typos are reported by name.
"""

from __future__ import annotations

from .distill import DistillationConfig
from .frontend import AugmentPolicy, ToyCorpusSpec
from .model import ModelConfig, _CONFIG_FIELDS, model_config_from_items
from .train import ScheduleConfig, TrainConfig


class ConfigError(Exception):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    items: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        items[key] = value.strip()
    return items


class ConfigDict:
    def __init__(self, items: dict[str, str]):
        self.items = dict(items)
        self.consumed: set[str] = set()

    def take(self, key: str, default: str | None = None) -> str | None:
        self.consumed.add(key)
        return self.items.get(key, default)

    def take_str(self, key: str, default: str | None = None) -> str | None:
        return self.take(key, default)

    def take_int(self, key: str, default: int | None = None) -> int | None:
        raw = self.take(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError as e:
            raise ConfigError(f"key {key}: expected integer, got {raw!r}") from e

    def take_float(self, key: str, default: float | None = None) -> float | None:
        raw = self.take(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigError(f"key {key}: expected number, got {raw!r}") from e

    def take_bool(self, key: str, default: bool = False) -> bool:
        raw = self.take(key)
        if raw is None:
            return default
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"key {key}: expected boolean, got {raw!r}")

    def take_int_list(self, key: str, default: list[int] | None = None) -> list[int] | None:
        raw = self.take(key)
        if raw is None:
            return default
        try:
            return [int(p) for p in raw.split(",") if p.strip() != ""]
        except ValueError as e:
            raise ConfigError(f"key {key}: expected comma-separated integers, got {raw!r}") from e

    def keys_with_prefix(self, prefix: str) -> list[str]:
        return [k for k in self.items if k.startswith(prefix)]

    def remaining(self, prefix: str = "") -> list[str]:
        return sorted(k for k in self.items if k.startswith(prefix) and k not in self.consumed)

    def ensure_consumed(self, prefix: str = "") -> None:
        left = self.remaining(prefix)
        if left:
            raise ConfigError(f"unknown config key: {left[0]}")


def load_config(path: str | None, overrides: list[str] | None = None) -> ConfigDict:
    items: dict[str, str] = {}
    if path:
        try:
            with open(path) as f:
                items = parse_config_text(f.read())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
    for ov in overrides or []:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r}: expected key=value")
        key, _, value = ov.partition("=")
        items[key.strip()] = value.strip()
    return ConfigDict(items)


# ---------------------------------------------------------------------------
# builders


def build_model_config(cfg: ConfigDict, prefix: str = "model.") -> ModelConfig:
    sub = {prefix + key: cfg.take(prefix + key) for key, _ in _CONFIG_FIELDS if prefix + key in cfg.items}
    try:
        mc = model_config_from_items(sub, prefix=prefix)
    except Exception as e:
        raise ConfigError(str(e)) from e
    cfg.ensure_consumed(prefix)
    return mc


def build_schedule_config(cfg: ConfigDict, prefix: str) -> ScheduleConfig:
    default = ScheduleConfig(warmup=500, decay_steps=2000)
    sc = ScheduleConfig(
        base_lr=cfg.take_float(prefix + "base_lr", default.base_lr),
        warmup=cfg.take_int(prefix + "warmup", default.warmup),
        decay_steps=cfg.take_int(prefix + "decay_steps", default.decay_steps),
    )
    cfg.ensure_consumed(prefix)
    return sc


def build_distillation_config(cfg: ConfigDict, prefix: str) -> DistillationConfig:
    d = DistillationConfig(
        alpha=cfg.take_float(prefix + "alpha", 0.02),
        temperature=cfg.take_float(prefix + "temperature", 1.0),
    )
    cfg.ensure_consumed(prefix)
    return d


def build_augment_policy(cfg: ConfigDict, prefix: str) -> AugmentPolicy:
    pol = AugmentPolicy(
        freq_mask_width_max=cfg.take_int(prefix + "freq_mask_width_max", 8),
        freq_masks=cfg.take_int(prefix + "freq_masks", 2),
        time_mask_width_max=cfg.take_int(prefix + "time_mask_width_max", 20),
        time_masks=cfg.take_int(prefix + "time_masks", 2),
    )
    cfg.ensure_consumed(prefix)
    return pol


def build_train_config(
    cfg: ConfigDict,
    prefix: str = "train.",
    model: ModelConfig | None = None,
    model_prefix: str = "model.",
) -> TrainConfig:
    if model is None:
        model = build_model_config(cfg, model_prefix)
    tc = TrainConfig(
        mode=cfg.take_str(prefix + "mode", "scratch"),
        teacher_checkpoint=cfg.take_str(prefix + "teacher_checkpoint"),
        model=model,
        distill=build_distillation_config(cfg, prefix + "distill."),
        schedule=build_schedule_config(cfg, prefix + "schedule."),
        augment=build_augment_policy(cfg, prefix + "augment."),
        batch_size=cfg.take_int(prefix + "batch_size", 16),
        epochs=cfg.take_int(prefix + "epochs", 10),
        seed=cfg.take_int(prefix + "seed", 0),
        grad_clip=cfg.take_float(prefix + "grad_clip", 5.0),
    )
    cfg.ensure_consumed(prefix)
    try:
        tc.validate()
    except Exception as e:
        raise ConfigError(str(e)) from e
    return tc


def build_toy_corpus_spec(cfg: ConfigDict, prefix: str = "corpus.") -> ToyCorpusSpec:
    spec = ToyCorpusSpec(
        vocab_size=cfg.take_int(prefix + "vocab_size", 8),
        num_utterances=cfg.take_int(prefix + "num_utterances", 200),
        label_len_min=cfg.take_int(prefix + "label_len_min", 3),
        label_len_max=cfg.take_int(prefix + "label_len_max", 8),
        frames_per_label=cfg.take_int(prefix + "frames_per_label", 4),
        noise_std=cfg.take_float(prefix + "noise_std", 0.1),
        synthesizer_seed=cfg.take_int(prefix + "seed", 0),
        feature_dim=cfg.take_int(prefix + "feature_dim", 40),
    )
    # test split generated with a shifted seed so train/test never overlap
    cfg.consumed.add(prefix + "test_utterances")
    cfg.ensure_consumed(prefix)
    try:
        spec.validate()
    except Exception as e:
        raise ConfigError(str(e)) from e
    return spec


def merged_view(cfg: ConfigDict, base_prefix: str, override_prefix: str, target_prefix: str) -> ConfigDict:
    """New ConfigDict with base keys re-rooted at target_prefix, then overrides applied."""
    items: dict[str, str] = {}
    for key in cfg.keys_with_prefix(base_prefix):
        items[target_prefix + key[len(base_prefix):]] = cfg.items[key]
        cfg.consumed.add(key)
    for key in cfg.keys_with_prefix(override_prefix):
        items[target_prefix + key[len(override_prefix):]] = cfg.items[key]
        cfg.consumed.add(key)
    return ConfigDict(items)
