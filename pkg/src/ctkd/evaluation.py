"""Transducer decoding (greedy and beam) and WER/SER metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .model import Model
from .rnnt import BLANK


class MetricError(Exception):
    pass


@dataclass
class Hypothesis:
    tokens: tuple = ()
    log_score: float = 0.0
    state: object = None  # prediction-network cache: (layer (h, c) list, output vector)


def greedy_decode(model: Model, features, max_symbols_per_frame: int = 10) -> list[int]:
    """Emit the argmax symbol per step; blank (or the per-frame cap) advances time."""
    with dc.no_grad():
        enc = model.encode(features, training=False).data
    state = model.start_state()
    tokens: list[int] = []
    for t in range(enc.shape[0]):
        for _ in range(max_symbols_per_frame):
            log_probs = model.joint_step(enc[t], state[1])
            best = int(np.argmax(log_probs))
            if best == BLANK:
                break
            tokens.append(best)
            state = model.predict_step(best, state)
    return tokens


def greedy_decode_with_score(model: Model, features, max_symbols_per_frame: int = 10) -> Hypothesis:
    """Greedy decode, also accumulating the log-score of the chosen path."""
    with dc.no_grad():
        enc = model.encode(features, training=False).data
    state = model.start_state()
    tokens: list[int] = []
    score = 0.0
    for t in range(enc.shape[0]):
        for _ in range(max_symbols_per_frame):
            log_probs = model.joint_step(enc[t], state[1])
            best = int(np.argmax(log_probs))
            score += float(log_probs[best])
            if best == BLANK:
                break
            tokens.append(best)
            state = model.predict_step(best, state)
        else:
            continue
    return Hypothesis(tokens=tuple(tokens), log_score=score)


def beam_decode(model: Model, features, beam_size: int = 8, max_symbols_per_frame: int = 10) -> Hypothesis:
    """Breadth-limited transducer beam search with prefix merging by label sequence.

    Scores of hypotheses reaching the same label sequence are log-added.
    Returns the best complete hypothesis after the final frame.
    """
    if beam_size < 1:
        raise MetricError("beam_size must be >= 1")
    with dc.no_grad():
        enc = model.encode(features, training=False).data

    beam = [Hypothesis(tokens=(), log_score=0.0, state=model.start_state())]
    for t in range(enc.shape[0]):
        active: dict[tuple, Hypothesis] = {h.tokens: h for h in beam}
        finished: dict[tuple, Hypothesis] = {}
        expansions = 0
        cap = beam_size * max_symbols_per_frame
        while active and expansions < cap:
            best_key = max(active, key=lambda k: active[k].log_score)
            hyp = active.pop(best_key)
            if finished and len(finished) >= beam_size:
                best_finished = max(h.log_score for h in finished.values())
                if hyp.log_score <= sorted((h.log_score for h in finished.values()), reverse=True)[beam_size - 1]:
                    break
            log_probs = model.joint_step(enc[t], hyp.state[1])
            expansions += 1
            # blank: hypothesis is done with this frame
            _merge(finished, Hypothesis(hyp.tokens, hyp.log_score + float(log_probs[BLANK]), hyp.state))
            # labels: extend within the same frame
            for k in range(1, log_probs.shape[0]):
                new = Hypothesis(
                    hyp.tokens + (k,),
                    hyp.log_score + float(log_probs[k]),
                    model.predict_step(k, hyp.state),
                )
                _merge(active, new)
        beam = sorted(finished.values(), key=lambda h: h.log_score, reverse=True)[:beam_size]
    return beam[0]


def _merge(pool: dict, hyp: Hypothesis) -> None:
    old = pool.get(hyp.tokens)
    if old is None:
        pool[hyp.tokens] = hyp
    else:
        merged = np.logaddexp(old.log_score, hyp.log_score)
        keep = old if old.log_score >= hyp.log_score else hyp
        pool[hyp.tokens] = Hypothesis(keep.tokens, float(merged), keep.state)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class ErrorCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    reference_length: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def word_error_rate(reference, hypothesis) -> tuple[float, ErrorCounts]:
    """Levenshtein alignment with unit costs; rate = (S+I+D)/len(reference)."""
    ref = list(reference)
    hyp = list(hypothesis)
    if not ref:
        raise MetricError("empty reference")
    rows, cols = len(ref) + 1, len(hyp) + 1
    cost = np.zeros((rows, cols), dtype=np.int64)
    cost[:, 0] = np.arange(rows)
    cost[0, :] = np.arange(cols)
    for i in range(1, rows):
        for j in range(1, cols):
            sub = cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i, j] = min(sub, cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    counts = ErrorCounts(reference_length=len(ref))
    i, j = len(ref), len(hyp)
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] != hyp[j - 1]:
                counts.substitutions += 1
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            counts.deletions += 1
            i -= 1
        else:
            counts.insertions += 1
            j -= 1
    return counts.errors / len(ref), counts


@dataclass
class CorpusSummary:
    wer: float
    ser: float
    utterances: int
    skipped_empty_references: int = 0
    per_utterance: list = field(default_factory=list)  # (utt_id, ref, hyp, wer)

    @property
    def wer_percent(self) -> float:
        return round(100.0 * self.wer, 2)

    @property
    def ser_percent(self) -> float:
        return round(100.0 * self.ser, 2)


def sentence_error_rate(pairs) -> float:
    """Fraction of (reference, hypothesis) pairs with at least one error."""
    pairs = list(pairs)
    if not pairs:
        return 0.0
    wrong = sum(1 for ref, hyp in pairs if list(ref) != list(hyp))
    return wrong / len(pairs)


def evaluate_corpus(model: Model, utterances, beam_size: int = 8, max_symbols_per_frame: int = 10) -> CorpusSummary:
    """Decode every utterance and aggregate corpus WER/SER.

    Utterances with empty references are excluded from WER and counted.
    """
    total_errors = 0
    total_ref = 0
    wrong = 0
    scored = 0
    skipped = 0
    per_utt = []
    for utt in utterances:
        if beam_size == 1:
            hyp = greedy_decode(model, utt.features, max_symbols_per_frame)
        else:
            hyp = list(beam_decode(model, utt.features, beam_size, max_symbols_per_frame).tokens)
        if not utt.labels:
            skipped += 1
            per_utt.append((utt.utt_id, [], hyp, float("nan")))
            continue
        rate, counts = word_error_rate(utt.labels, hyp)
        total_errors += counts.errors
        total_ref += counts.reference_length
        wrong += 1 if counts.errors > 0 else 0
        scored += 1
        per_utt.append((utt.utt_id, utt.labels, hyp, rate))
    wer = total_errors / total_ref if total_ref else 0.0
    ser = wrong / scored if scored else 0.0
    return CorpusSummary(wer=wer, ser=ser, utterances=scored, skipped_empty_references=skipped, per_utterance=per_utt)


def render_evaluation(summary: CorpusSummary) -> str:
    lines = []
    for utt_id, ref, hyp, rate in summary.per_utterance:
        ref_s = " ".join(map(str, ref))
        hyp_s = " ".join(map(str, hyp))
        rate_s = "n/a" if math.isnan(rate) else f"{100.0 * rate:.2f}"
        lines.append(f"{utt_id}\t{ref_s}\t{hyp_s}\t{rate_s}")
    lines.append("")
    lines.append(f"corpus WER: {summary.wer_percent:.2f}%")
    lines.append(f"corpus SER: {summary.ser_percent:.2f}%")
    lines.append(f"utterances scored: {summary.utterances} (skipped empty references: {summary.skipped_empty_references})")
    return "\n".join(lines)
