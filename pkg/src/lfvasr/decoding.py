"""Frame-synchronous prefix beam search with optional shallow LM fusion.

Prefix scores follow best-path (max over paths) semantics rather than
summing path masses: with the language-model weight at zero and a beam of
one, the search then collapses exactly to per-frame greedy decoding.  Each
beam entry tracks the best path score ending in blank and in its last
symbol separately so repeats and blank-separated repeats stay distinct.

Ties are resolved by score, then the lowest generating token id (mirroring
argmax), then lexicographic prefix order.
"""

import numpy as np

from .autograd import Tensor
from .errors import UsageError

NEG_INF = -np.inf


class _Candidate:
    __slots__ = ("pb", "pnb", "vb", "vnb", "lm_score")

    def __init__(self, lm_score):
        self.pb = NEG_INF
        self.pnb = NEG_INF
        self.vb = 0
        self.vnb = 0
        self.lm_score = lm_score

    def offer(self, ending, score, token):
        """Keep the max path score per ending; equal scores keep the
        smallest generating token."""
        if ending == 0:
            if score > self.pb:
                self.pb, self.vb = score, token
            elif score == self.pb:
                self.vb = min(self.vb, token)
        else:
            if score > self.pnb:
                self.pnb, self.vnb = score, token
            elif score == self.pnb:
                self.vnb = min(self.vnb, token)

    def best(self):
        """(acoustic score, tie token) of the better ending."""
        if self.pb > self.pnb:
            return self.pb, self.vb
        if self.pnb > self.pb:
            return self.pnb, self.vnb
        return self.pb, min(self.vb, self.vnb)


def fused_greedy_decode(log_probs, lm=None, lm_weight=0.0, beam=1, blank=0):
    """Decode one utterance; returns the best prefix as a list of token ids.

    log_probs is the [T, V] CTC output grid.  With lm_weight > 0 each
    emitted token also earns lm_weight times its LM log-probability given
    the prefix so far.  LM states are advanced lazily, only for prefixes
    that survive pruning.
    """
    data = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    if data.ndim != 2:
        raise UsageError("fused_greedy_decode expects a [T, V] input")
    if beam < 1:
        raise UsageError("beam must be at least 1")
    if lm_weight < 0:
        raise UsageError("LM weight must be non-negative")
    if lm_weight > 0 and lm is None:
        raise UsageError("LM fusion requested without a language model")
    t_frames, vocab = data.shape
    if lm is not None and lm_weight > 0 and lm.config.vocab_size != vocab:
        raise UsageError(f"LM vocabulary {lm.config.vocab_size} does not match "
                         f"the acoustic vocabulary {vocab}")
    if not (0 <= blank < vocab):
        raise UsageError("blank id outside the vocabulary")

    use_lm = lm is not None and lm_weight > 0

    # Beam state: prefix -> (pb, pnb, lm_score); LM cache: prefix -> (state, row).
    root = _Candidate(0.0)
    root.pb = 0.0
    beam_entries = {(): root}
    lm_cache = {}
    if use_lm:
        state, row = lm.step(np.array([0]), lm.start_state(1))
        lm_cache[()] = ((state[0][0], state[1][0]), row[0])

    for t in range(t_frames):
        frame = data[t]
        candidates = {}

        def offer(prefix, ending, score, token, lm_score):
            if score == NEG_INF:
                return
            cand = candidates.get(prefix)
            if cand is None:
                cand = _Candidate(lm_score)
                candidates[prefix] = cand
            cand.offer(ending, score, token)

        for prefix, entry in beam_entries.items():
            best = max(entry.pb, entry.pnb)
            row = lm_cache[prefix][1] if use_lm else None
            offer(prefix, 0, best + frame[blank], blank, entry.lm_score)
            last = prefix[-1] if prefix else -1
            if prefix:
                offer(prefix, 1, entry.pnb + frame[last], last, entry.lm_score)
            for c in range(vocab):
                if c == blank:
                    continue
                base = entry.pb if c == last else best
                if base == NEG_INF:
                    continue
                child_lm = entry.lm_score + (float(row[c]) if use_lm else 0.0)
                offer(prefix + (c,), 1, base + frame[c], c, child_lm)

        ranked = []
        for prefix, cand in candidates.items():
            am, tie = cand.best()
            total = am + lm_weight * cand.lm_score
            ranked.append((-total, tie, prefix, cand))
        ranked.sort(key=lambda r: r[:3])
        kept = ranked[:beam]

        if use_lm:
            new_cache = {}
            for _, _, prefix, _ in kept:
                if prefix in lm_cache:
                    new_cache[prefix] = lm_cache[prefix]
                else:
                    parent_state, _ = lm_cache[prefix[:-1]]
                    h = parent_state[0][None, :]
                    c_ = parent_state[1][None, :]
                    state, row = lm.step(np.array([prefix[-1]]), (h, c_))
                    new_cache[prefix] = ((state[0][0], state[1][0]), row[0])
            lm_cache = new_cache
        beam_entries = {prefix: cand for _, _, prefix, cand in kept}

    final = []
    for prefix, cand in beam_entries.items():
        am, tie = cand.best()
        final.append((-(am + lm_weight * cand.lm_score), tie, prefix))
    final.sort()
    return list(final[0][2])
