"""Transducer loss over the output lattice.

The lattice is a (T, U+1, V+1) array of per-node log-distributions with
symbol 0 = blank.  From node (t, u), emitting label u+1 moves to (t, u+1) and
emitting blank moves to (t+1, u); a path terminates by emitting blank from
(T-1, U).  The loss is the negative log-likelihood of the label sequence
summed over all monotone alignment paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore
from .diffcore import ContractError, Tensor

BLANK = 0

NEG_INF = -np.inf


class LatticeError(Exception):
    pass


def validate_lattice(log_probs: np.ndarray, labels) -> tuple[int, int, int]:
    log_probs = np.asarray(log_probs)
    if log_probs.ndim != 3:
        raise LatticeError(f"lattice must be (T, U+1, V+1), got shape {log_probs.shape}")
    t_len, u_plus_1, v_plus_1 = log_probs.shape
    u_len = len(labels)
    if u_plus_1 != u_len + 1:
        raise LatticeError(f"lattice has {u_plus_1} label positions but {u_len} labels given")
    if t_len < 1:
        raise LatticeError("lattice must have at least one time frame")
    for lab in labels:
        if not 1 <= lab <= v_plus_1 - 1:
            raise LatticeError(f"label {lab} out of range [1, {v_plus_1 - 1}]")
    return t_len, u_len, v_plus_1 - 1


@dataclass
class LossResult:
    loss: float
    grad_log_probs: np.ndarray


def rnnt_loss(log_probs: np.ndarray, labels) -> LossResult:
    """Forward-backward transducer loss and its gradient w.r.t. the log lattice."""
    t_len, u_len, _ = validate_lattice(log_probs, labels)
    labels = list(labels)
    lp = np.asarray(log_probs, dtype=np.float64)

    # log-prob of emitting the next label / blank from each node
    blank_lp = lp[:, :, BLANK]                                   # (T, U+1)
    label_lp = np.full((t_len, u_len), NEG_INF)
    for u, lab in enumerate(labels):
        label_lp[:, u] = lp[:, u, lab]

    alpha = np.full((t_len, u_len + 1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(t_len):
        for u in range(u_len + 1):
            if t == 0 and u == 0:
                continue
            terms = []
            if t > 0:
                terms.append(alpha[t - 1, u] + blank_lp[t - 1, u])
            if u > 0:
                terms.append(alpha[t, u - 1] + label_lp[t, u - 1])
            alpha[t, u] = _logsumexp(terms)

    # beta[t, u]: log-prob of completing a path from (t, u); beta[T, U] := 0
    beta = np.full((t_len + 1, u_len + 1), NEG_INF)
    beta[t_len, u_len] = 0.0
    for t in range(t_len - 1, -1, -1):
        for u in range(u_len, -1, -1):
            terms = [blank_lp[t, u] + beta[t + 1, u]]
            if u < u_len:
                terms.append(label_lp[t, u] + beta[t, u + 1])
            beta[t, u] = _logsumexp(terms)

    log_z = beta[0, 0]
    loss = -log_z

    grad = np.zeros_like(lp)
    # occupancy of each emission arc, normalized by the total path mass
    grad[:, :, BLANK] = -np.exp(alpha + blank_lp + beta[1:, :] - log_z)
    for u, lab in enumerate(labels):
        grad[:, u, lab] += -np.exp(alpha[:, u] + label_lp[:, u] + beta[:t_len, u + 1] - log_z)
    return LossResult(loss=float(loss), grad_log_probs=grad)


def _logsumexp(terms) -> float:
    m = max(terms)
    if m == NEG_INF:
        return NEG_INF
    return m + math.log(sum(math.exp(v - m) for v in terms))


def enumerate_alignments_oracle(log_probs: np.ndarray, labels, max_t: int = 6, max_u: int = 5) -> float:
    """Brute-force loss: enumerate every monotone path, sum probabilities plainly.

    Guarded to small lattices; intended purely as an independent check of
    ``rnnt_loss``.
    """
    t_len, u_len, _ = validate_lattice(log_probs, labels)
    if t_len > max_t or u_len > max_u:
        raise ContractError(f"oracle guard exceeded: T={t_len} (max {max_t}), U={u_len} (max {max_u})")
    lp = np.asarray(log_probs, dtype=np.float64)
    probs = np.exp(lp)
    labels = list(labels)

    total = 0.0

    def walk(t: int, u: int, path_prob: float):
        nonlocal total
        if t == t_len - 1 and u == u_len:
            # all labels emitted on the last frame: terminate with a final blank
            total += path_prob * probs[t, u, BLANK]
            return
        if u < u_len:
            walk(t, u + 1, path_prob * probs[t, u, labels[u]])
        if t < t_len - 1:
            walk(t + 1, u, path_prob * probs[t, u, BLANK])

    walk(0, 0, 1.0)
    if total <= 0.0:
        raise LatticeError("no alignment path has positive probability")
    return -math.log(total)


def count_alignments(t_len: int, u_len: int) -> int:
    return math.comb(t_len - 1 + u_len, u_len)


def transducer_loss_node(lattice: Tensor, labels) -> Tensor:
    """Scalar loss tensor wired into the autodiff graph via the analytic gradient."""
    result = rnnt_loss(lattice.data, labels)

    def bwd(g):
        return (g * result.grad_log_probs,)

    return diffcore.custom_node("rnnt_loss", (lattice,), result.loss, bwd)
