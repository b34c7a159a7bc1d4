#!/usr/bin/env python3
"""Train the language-vector extractor and look at the codes it produces.

A frame-level language classifier with a narrow logistic bottleneck; the
bottleneck activations are the language code.  Utterance means of those
codes cluster by language without ever being told utterance boundaries.
"""

import numpy as np

from lfvasr.corpus import default_language_specs, generate_corpus
from lfvasr.lfv import (LfvExtractorConfig, extract_corpus_lfvs,
                        train_lfv_extractor)

specs = default_language_specs(num_languages=3, seed=0)
split = generate_corpus(specs, train_seconds=25, test_seconds=10,
                        low_seconds=5, seed=4)

config = LfvExtractorConfig(feature_dim=12, num_languages=3,
                            context_window=4, hidden_sizes=(64, 64),
                            bottleneck_dim=8)
net, held_acc = train_lfv_extractor(split.train, config, seed=0, epochs=6,
                                    log_fn=print)
print(f"\nheld-out frame accuracy: {held_acc:.3f} (chance 0.333)")

# utterance-mean codes on unseen test data
codes = extract_corpus_lfvs(net, split.test, "utterance-mean")
by_language = {}
for utt in split.test:
    by_language.setdefault(utt.language, []).append(codes[utt.id])

print("\nmean code per language (each column one bottleneck dim):")
for language in sorted(by_language):
    mean = np.mean(by_language[language], axis=0)
    print(f"  {language}: " + " ".join(f"{x:.2f}" for x in mean))

# nearest-centroid language id from the codes alone
centroids = {lang: np.mean(vals, axis=0) for lang, vals in by_language.items()}
correct = total = 0
for utt in split.test:
    if utt.unit_mode != "grapheme":
        continue
    guess = min(centroids, key=lambda l: np.linalg.norm(codes[utt.id] - centroids[l]))
    correct += guess == utt.language
    total += 1
print(f"\nnearest-centroid id on test utterances: {correct}/{total}")

# per-frame codes wobble around the utterance mean
utt = split.test[0]
frames = extract_corpus_lfvs(net, [utt], "per-frame")[utt.id]
print(f"\n{utt.id}: per-frame code shape {frames.shape}, "
      f"frame std {frames.std(axis=0).mean():.4f}")
