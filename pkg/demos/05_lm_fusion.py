#!/usr/bin/env python3
"""Shallow fusion: a character LM steers CTC decoding toward real words.

The recurrent LM is trained on transcripts alone.  During prefix search the
decoder adds lm_weight times the LM's log-probability each time a prefix
emits a token, so spellings the LM likes survive the beam while acoustically
similar junk drops out.  Word error rate is the quantity fusion targets:
token errors inside a word already make the whole word wrong, so fixing the
odd character pays off disproportionately at the word level.
"""

import numpy as np

from lfvasr.corpus import (WORD_BOUNDARY, build_vocabulary,
                           default_language_specs, generate_corpus,
                           select_mode)
from lfvasr.layers import default_model_config
from lfvasr.lm import CharRnnLmConfig, train_lm
from lfvasr.scoring import score_corpus
from lfvasr.training import TrainingConfig, decode_corpus, train_acoustic_model

specs = default_language_specs(num_languages=1, coloring_scale=0.15, seed=0)
split = generate_corpus(specs, train_seconds=150, test_seconds=40,
                        low_seconds=10, seed=5)
vocab = build_vocabulary("grapheme")
train = select_mode(split.train, "grapheme")
test = select_mode(split.test, "grapheme")
refs = [(u.id, u.language, u.transcript) for u in test]

# the LM never sees audio, only the 25-word lexicon's spellings in context
lm_config = CharRnnLmConfig(vocab_size=len(vocab), embedding_dim=16,
                            hidden_size=64)
lm, ppl = train_lm([vocab.encode(u.transcript) for u in train], lm_config,
                   seed=0, epochs=8)
print(f"LM train perplexity: {ppl[0]:.2f} -> {ppl[-1]:.2f} "
      f"(vocabulary {len(vocab)} symbols)")

model, losses = train_acoustic_model(
    train, vocab, default_model_config(vocab_size=len(vocab)),
    training_config=TrainingConfig(epochs=12), seed=1)
print(f"acoustic model loss {losses[0]:.1f} -> {losses[-1]:.1f}")


def words(tokens):
    groups, current = [], []
    for token in tokens:
        if token == WORD_BOUNDARY:
            groups.append("".join(current))
            current = []
        else:
            current.append(token)
    groups.append("".join(current))
    return [w for w in groups if w]


greedy = decode_corpus(model, test, vocab)
print(f"\n{'decoder':24s} {'TER':>6s} {'WER':>6s}")
rows = [("greedy", greedy)]
for weight in (0.0, 0.3, 0.6):
    fused = decode_corpus(model, test, vocab, lm=lm, lm_weight=weight, beam=8)
    rows.append((f"beam 8, lm_weight {weight:.1f}", fused))
for name, hyps in rows:
    ter = score_corpus(refs, hyps, level="token")["all"].rate
    wer = score_corpus(refs, hyps, level="word")["all"].rate
    print(f"{name:24s} {ter:6.3f} {wer:6.3f}")

# one utterance up close: where the beam plus LM overturns a greedy guess
fused = decode_corpus(model, test, vocab, lm=lm, lm_weight=0.3, beam=8)
for utt in test:
    if greedy[utt.id] != fused[utt.id]:
        print(f"\n{utt.id}:")
        print("  reference ", " ".join(words(utt.transcript)))
        print("  greedy    ", " ".join(words(greedy[utt.id])))
        print("  fused     ", " ".join(words(fused[utt.id])))
        break
