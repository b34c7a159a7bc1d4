"""Connectionist temporal classification: loss, gradient, best path.

Labels are integer ids with blank fixed at id 0. The loss marginalizes
over all monotonic frame alignments of the blank-extended label via
log-space forward/backward recursions; its gradient with respect to the
per-frame log-probabilities plugs into the autograd graph as one node.
"""

import numpy as np

from . import autograd, kernels
from .autograd import Tensor
from .errors import CtcInfeasibleError, UsageError


def extended_labels(labels, blank=0):
    """Interleave blanks: (l1, l2, ...) -> [b, l1, b, l2, ..., b]."""
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels):
    """Fewest frames that can realize the label sequence: one per label
    plus a separating blank between adjacent repeats."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _check_labels(labels, vocab_size, blank):
    labels = [int(l) for l in labels]
    for l in labels:
        if l == blank:
            raise UsageError("label sequence contains the blank id %d" % blank)
        if not 0 <= l < vocab_size:
            raise UsageError("label id %d outside vocabulary of size %d"
                             % (l, vocab_size))
    return labels


def ctc_loss(log_probs, labels, blank=0):
    """Negative log-likelihood of `labels` under per-frame log_probs.

    log_probs : [T, V] tensor of normalized log distributions
    Returns a scalar tensor wired into the autograd graph. Raises
    CtcInfeasibleError when T is too short to emit the labels.
    """
    lp = log_probs if isinstance(log_probs, Tensor) else Tensor(np.asarray(log_probs, dtype=np.float64))
    if lp.ndim != 2:
        raise UsageError("ctc_loss expects a [T, V] input")
    t, v = lp.shape
    if not 0 <= blank < v:
        raise UsageError("blank id %d outside vocabulary of size %d" % (blank, v))
    labels = _check_labels(labels, v, blank)
    need = min_frames(labels)
    if t < need:
        raise CtcInfeasibleError(required=need, available=t)
    loss, grad = kernels.ctc_forward_backward(
        np.ascontiguousarray(lp.data), extended_labels(labels, blank))

    def backward(g):
        if lp.requires_grad:
            lp.accumulate_grad(g * grad)

    return autograd.fused(np.asarray(loss), (lp,), backward)


def ctc_batch_loss(flat_log_probs, frame_counts, label_seqs, blank=0):
    """Mean CTC loss over a batch stored as one flat [sum T_i, V] tensor.

    Returns (mean loss over the feasible utterances, list of indices of
    utterances skipped as infeasible). Raises UsageError when nothing in
    the batch is feasible.
    """
    if len(frame_counts) != len(label_seqs):
        raise UsageError("got %d frame counts for %d label sequences"
                         % (len(frame_counts), len(label_seqs)))
    losses = []
    skipped = []
    offset = 0
    for i, (n, labels) in enumerate(zip(frame_counts, label_seqs)):
        segment = autograd.take_rows(flat_log_probs, offset, offset + int(n))
        offset += int(n)
        try:
            losses.append(ctc_loss(segment, labels, blank))
        except CtcInfeasibleError:
            skipped.append(i)
    if offset != flat_log_probs.shape[0]:
        raise UsageError("frame counts sum to %d but tensor has %d rows"
                         % (offset, flat_log_probs.shape[0]))
    if not losses:
        raise UsageError("every utterance in the batch is infeasible")
    total = losses[0]
    for extra in losses[1:]:
        total = total + extra
    return total * (1.0 / len(losses)), skipped


def ctc_grad_check(log_probs, labels, blank=0, h=1e-5, floor=1e-9):
    """Max relative disagreement between the analytic CTC gradient and
    central finite differences.

    The grid is treated as free logits and re-normalized by log-softmax on
    every evaluation, so perturbations stay inside the probability simplex.
    Intended for small instances (T <= 10, V <= 6).  The step h balances
    truncation error against the log-space evaluation noise of the loss
    itself; much below 1e-5 that noise dominates small gradient entries.
    """
    z0 = np.asarray(log_probs.data if isinstance(log_probs, Tensor) else log_probs,
                    dtype=np.float64)
    if z0.ndim != 2:
        raise UsageError("ctc_grad_check expects a [T, V] input")
    if z0.shape[0] > 10 or z0.shape[1] > 6:
        raise UsageError("ctc_grad_check is for small instances (T <= 10, V <= 6)")

    def value(z):
        lse = np.log(np.exp(z - z.max(axis=1, keepdims=True)).sum(axis=1, keepdims=True))
        normalized = z - z.max(axis=1, keepdims=True) - lse
        with autograd.no_grad():
            return float(ctc_loss(Tensor(normalized), labels, blank).data)

    z = Tensor(z0.copy(), requires_grad=True)
    loss = ctc_loss(autograd.log_softmax(z), labels, blank)
    loss.backward()
    analytic = z.grad.copy()

    numeric = np.zeros_like(z0)
    work = z0.copy()
    for idx in np.ndindex(*z0.shape):
        keep = work[idx]
        work[idx] = keep + h
        plus = value(work)
        work[idx] = keep - h
        minus = value(work)
        work[idx] = keep
        numeric[idx] = (plus - minus) / (2.0 * h)

    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.where(diff <= floor, 0.0, diff / denom)
    return float(rel.max())


def greedy_decode(log_probs, blank=0):
    """Best-path decoding: per-frame argmax (ties to the lowest id),
    collapse repeats, then delete blanks."""
    data = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    if data.ndim != 2:
        raise UsageError("greedy_decode expects a [T, V] input")
    path = np.argmax(data, axis=1)
    out = []
    prev = -1
    for p in path:
        p = int(p)
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return out
