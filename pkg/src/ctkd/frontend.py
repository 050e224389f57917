"""Audio feature extraction, SpecAugment, and synthetic toy-corpus generation."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct


class FrontendError(Exception):
    pass


FEATURE_MAGIC = b"CTFE"
FEATURE_VERSION = 1


@dataclass
class FrontendConfig:
    sample_rate: int = 16000
    window: float = 0.025
    hop: float = 0.010
    num_mel: int = 64
    num_ceps: int = 40
    log_floor: float = 1e-10
    preemphasis: float = 0.97
    fft_size: int = 512

    def validate(self):
        if self.hop > self.window:
            raise FrontendError(f"hop {self.hop} must not exceed window {self.window}")
        if self.num_ceps > self.num_mel:
            raise FrontendError(f"num_ceps {self.num_ceps} > num_mel {self.num_mel}")
        if self.log_floor <= 0:
            raise FrontendError("log_floor must be positive")

    @property
    def window_samples(self) -> int:
        return int(round(self.window * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop * self.sample_rate))


@dataclass
class AugmentPolicy:
    freq_mask_width_max: int = 8
    freq_masks: int = 2
    time_mask_width_max: int = 20
    time_masks: int = 2

    def validate(self):
        for v in (self.freq_mask_width_max, self.freq_masks, self.time_mask_width_max, self.time_masks):
            if v < 0:
                raise FrontendError("augment widths/counts must be >= 0")


@dataclass
class ToyCorpusSpec:
    vocab_size: int = 8
    num_utterances: int = 200
    label_len_min: int = 3
    label_len_max: int = 8
    frames_per_label: int = 4
    noise_std: float = 0.1
    synthesizer_seed: int = 0
    feature_dim: int = 40

    def validate(self):
        if self.vocab_size < 2:
            raise FrontendError("vocab_size must be >= 2")
        if self.label_len_min > self.label_len_max:
            raise FrontendError("label_len_min > label_len_max")
        if self.frames_per_label < 1:
            raise FrontendError("frames_per_label must be >= 1")


def _hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def mel_filterbank(num_filters: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters over the one-sided spectrum: (num_filters, fft_size//2+1)."""
    low, high = _hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0)
    points = _mel_to_hz(np.linspace(low, high, num_filters + 2))
    bins = np.floor((fft_size + 1) * points / sample_rate).astype(int)
    fb = np.zeros((num_filters, fft_size // 2 + 1))
    for m in range(1, num_filters + 1):
        left, center, right = bins[m - 1], bins[m], bins[m + 1]
        for k in range(left, center):
            if center > left:
                fb[m - 1, k] = (k - left) / (center - left)
        for k in range(center, right):
            if right > center:
                fb[m - 1, k] = (right - k) / (right - center)
    return fb


def num_frames(num_samples: int, config: FrontendConfig) -> int:
    return 1 + (num_samples - config.window_samples) // config.hop_samples


def compute_mfcc(waveform, config: FrontendConfig | None = None) -> np.ndarray:
    """MFCC matrix (frames, num_ceps) from a raw waveform.

    Pipeline: pre-emphasis, Hamming window, magnitude spectrum, mel filterbank,
    floored log, DCT-II keeping the first num_ceps coefficients.
    """
    config = config or FrontendConfig()
    config.validate()
    x = np.asarray(waveform, dtype=np.float64)
    win, hop = config.window_samples, config.hop_samples
    if x.size < win:
        raise FrontendError(f"waveform of {x.size} samples shorter than one window ({win})")

    emphasized = np.empty_like(x)
    emphasized[0] = x[0]
    emphasized[1:] = x[1:] - config.preemphasis * x[:-1]

    frames = num_frames(x.size, config)
    idx = np.arange(win)[None, :] + hop * np.arange(frames)[:, None]
    windowed = emphasized[idx] * np.hamming(win)

    spectrum = np.abs(np.fft.rfft(windowed, n=config.fft_size, axis=1))
    fb = mel_filterbank(config.num_mel, config.fft_size, config.sample_rate)
    mel = spectrum @ fb.T
    logmel = np.log(np.maximum(mel, config.log_floor))
    ceps = dct(logmel, type=2, axis=1, norm="ortho")[:, : config.num_ceps]
    return ceps


def spec_augment(features: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Mask random frequency-column and time-row bands to the matrix mean."""
    policy.validate()
    out = np.array(features, dtype=np.float64, copy=True)
    frames, dims = out.shape
    fill = features.mean()
    for _ in range(policy.freq_masks):
        width = int(rng.integers(0, policy.freq_mask_width_max + 1))
        width = min(width, dims)
        if width == 0:
            continue
        start = int(rng.integers(0, dims - width + 1))
        out[:, start : start + width] = fill
    for _ in range(policy.time_masks):
        width = int(rng.integers(0, policy.time_mask_width_max + 1))
        width = min(width, frames)
        if width == 0:
            continue
        start = int(rng.integers(0, frames - width + 1))
        out[start : start + width, :] = fill
    return out


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray
    labels: list[int]


def label_embeddings(spec: ToyCorpusSpec) -> np.ndarray:
    """Fixed per-label feature embeddings, rows 1..vocab_size (row 0 unused)."""
    rng = np.random.default_rng(spec.synthesizer_seed)
    return rng.normal(0.0, 1.0, size=(spec.vocab_size + 1, spec.feature_dim))


def generate_toy_corpus(spec: ToyCorpusSpec) -> list[Utterance]:
    """Synthetic dataset: each label's embedding repeated frames_per_label times plus noise."""
    spec.validate()
    emb = label_embeddings(spec)
    rng = np.random.default_rng(spec.synthesizer_seed + 1)
    utts = []
    for i in range(spec.num_utterances):
        length = int(rng.integers(spec.label_len_min, spec.label_len_max + 1))
        labels = rng.integers(1, spec.vocab_size + 1, size=length).tolist()
        feats = np.repeat(emb[labels], spec.frames_per_label, axis=0)
        if spec.noise_std > 0:
            feats = feats + rng.normal(0.0, spec.noise_std, size=feats.shape)
        utts.append(Utterance(utt_id=f"utt{i:05d}", features=feats, labels=labels))
    return utts


# ---------------------------------------------------------------------------
# feature file / manifest formats


def write_feature_file(path: str, features: np.ndarray) -> None:
    features = np.asarray(features)
    if features.ndim != 2:
        raise FrontendError(f"feature matrix must be 2-d, got shape {features.shape}")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", FEATURE_VERSION, features.shape[0], features.shape[1]))
        f.write(features.astype("<f4").tobytes())


def read_feature_file(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) < 16 or header[:4] != FEATURE_MAGIC:
            raise FrontendError(f"{path}: not a feature file (bad magic)")
        version, frames, dims = struct.unpack("<III", header[4:])
        if version != FEATURE_VERSION:
            raise FrontendError(f"{path}: unsupported feature file version {version}")
        payload = f.read(4 * frames * dims)
        if len(payload) != 4 * frames * dims:
            raise FrontendError(f"{path}: truncated feature payload")
        return np.frombuffer(payload, dtype="<f4").reshape(frames, dims).astype(np.float64)


def write_manifest(path: str, utterances: list[Utterance], feature_dir: str) -> None:
    """One record per line: utterance id, feature file path, space-separated labels."""
    os.makedirs(feature_dir, exist_ok=True)
    with open(path, "w") as f:
        for utt in utterances:
            feat_path = os.path.join(feature_dir, utt.utt_id + ".ctfe")
            write_feature_file(feat_path, utt.features)
            labels = " ".join(str(t) for t in utt.labels)
            f.write(f"{utt.utt_id}\t{feat_path}\t{labels}\n")


def read_manifest(path: str) -> list[Utterance]:
    utts = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FrontendError(f"{path}:{lineno}: expected 3 tab-separated fields")
            utt_id, feat_path, label_str = parts
            labels = [int(t) for t in label_str.split()] if label_str else []
            utts.append(Utterance(utt_id=utt_id, features=read_feature_file(feat_path), labels=labels))
    return utts
