#!/usr/bin/env python3
"""The three acoustic-model conditions side by side on one small corpus.

baseline ignores language identity; append concatenates the per-frame
language code onto the convolutional features; modulate multiplies groups
of one hidden layer's units by the utterance-mean code components.
"""

import numpy as np

from lfvasr.autograd import Tensor
from lfvasr.corpus import (build_vocabulary, default_language_specs,
                           generate_corpus, select_mode)
from lfvasr.layers import AcousticModel, default_model_config, modulate
from lfvasr.lfv import LfvExtractorConfig, extract_corpus_lfvs, train_lfv_extractor
from lfvasr.scoring import score_corpus
from lfvasr.training import TrainingConfig, decode_corpus, train_acoustic_model

# weak per-language coloring keeps the language cue out of the raw frames,
# so the conditions differ in how much language identity they can recover
specs = default_language_specs(num_languages=3, coloring_scale=0.15, seed=0)
split = generate_corpus(specs, train_seconds=120, test_seconds=30,
                        low_seconds=10, seed=2)
vocab = build_vocabulary("grapheme")
train = select_mode(split.train, "grapheme")
test = select_mode(split.test, "grapheme")
refs = [(u.id, u.language, u.transcript) for u in test]

# one extractor feeds both adapted conditions
ex_config = LfvExtractorConfig(feature_dim=12, num_languages=3,
                               hidden_sizes=(64, 64), bottleneck_dim=8)
extractor, acc = train_lfv_extractor(split.train, ex_config, seed=0, epochs=5)
print(f"extractor held-out accuracy: {acc:.3f}")
everything = split.train + split.test
means = extract_corpus_lfvs(extractor, everything, "utterance-mean")
frames = extract_corpus_lfvs(extractor, everything, "per-frame")

schedule = TrainingConfig(epochs=12, lr=0.2, batch_size=15)
for condition, codes in (("baseline", None),
                         ("append", frames),
                         ("modulate", means)):
    adaptation = "none" if condition == "baseline" else condition
    config = default_model_config(vocab_size=len(vocab), adaptation=adaptation,
                                  lfv_dim=8 if codes is not None else 0)
    model, losses = train_acoustic_model(train, vocab, config, lfvs=codes,
                                         training_config=schedule, seed=1)
    hyps = decode_corpus(model, test, vocab, lfvs=codes)
    ter = score_corpus(refs, hyps, level="token")["all"].rate
    print(f"{condition:9s} loss {losses[0]:7.2f} -> {losses[-1]:7.2f}   "
          f"test TER {ter:.3f}   params {sum(p.data.size for p in model.parameters())}")

# the modulation contract: an all-ones code leaves the network untouched,
# because the two conditions share every tensor when seeded alike
config = default_model_config(vocab_size=len(vocab), adaptation="modulate",
                              lfv_dim=8)
model = AcousticModel(config, seed=3)
plain = AcousticModel(default_model_config(vocab_size=len(vocab)), seed=3)
x = np.random.default_rng(0).normal(size=(60, 12))
with_mod = model.forward(x, lfv=np.ones(8)).data
without = plain.forward(x).data
print("\nall-ones code output identical to the unadapted net:",
      np.array_equal(with_mod, without))

# zeroing one code dimension silences exactly one unit group
h = Tensor(np.random.default_rng(1).normal(size=(5, 32)))
zeroed = np.ones(8); zeroed[3] = 0.0
out = modulate(h, zeroed).data
group = np.s_[3 * 4:4 * 4]      # 32 units / 8 dims = 4 units per group
print("group 3 silenced:", bool(np.all(out[:, group] == 0.0)),
      "| other groups untouched:",
      np.array_equal(np.delete(out, group, axis=1),
                     np.delete(h.data, group, axis=1)))
