"""Acoustic-model training and corpus decoding.

Batches are length-sorted once and visited in the same order every epoch,
so a run is fully determined by the corpus, the configuration, and the
seed.  The learning rate halves whenever an epoch improves the average
loss by less than the halving threshold.
"""

from dataclasses import dataclass

import numpy as np

from . import ctc
from .corpus import sort_and_batch
from .decoding import fused_greedy_decode
from .errors import ConfigError, UsageError
from .layers import AcousticModel
from .numerics import NesterovSgd


@dataclass
class TrainingConfig:
    epochs: int = 15
    lr: float = 0.2
    momentum: float = 0.9
    clip_norm: float = 5.0
    batch_size: int = 15
    halving_threshold: float = 0.01   # relative epoch-loss improvement under this halves lr

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("need at least one epoch")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1")
        if self.halving_threshold < 0:
            raise ConfigError("halving threshold must be non-negative")


def _batch_lfvs(batch, lfvs, adaptation):
    if adaptation == "none":
        return None
    missing = [u.id for u in batch if u.id not in lfvs]
    if missing:
        raise UsageError(f"no language feature vector for {missing[0]}")
    return [lfvs[u.id] for u in batch]


def train_acoustic_model(utterances, vocabulary, model_config, lfvs=None,
                         training_config=None, seed=0, log_fn=None):
    """Train a CTC acoustic model; returns (model, per-epoch mean loss).

    utterances must already be filtered and restricted to one unit mode.
    lfvs maps utterance id to the code consumed by the adaptation mode and
    must be omitted exactly when the model is unadapted.  Utterances whose
    output grid is too short for their label sequence are skipped and
    logged, never trained on.
    """
    if training_config is None:
        training_config = TrainingConfig()
    if not utterances:
        raise UsageError("no utterances to train on")
    if (model_config.adaptation == "none") != (lfvs is None):
        raise UsageError("language feature vectors must be given exactly "
                         "for adapted models")

    labels = {u.id: vocabulary.encode(u.transcript) for u in utterances}
    trainable = []
    for utt in utterances:
        out_frames = model_config.output_frames(utt.frame_count)
        if out_frames < ctc.min_frames(labels[utt.id]):
            if log_fn is not None:
                log_fn(f"skip infeasible utterance {utt.id}: "
                       f"{out_frames} output frames for {len(labels[utt.id])} labels")
            continue
        trainable.append(utt)
    if not trainable:
        raise UsageError("every utterance is infeasible for its transcript")

    batches = sort_and_batch(trainable, training_config.batch_size)
    model = AcousticModel(model_config, seed=seed)
    opt = NesterovSgd(model.parameters(), lr=training_config.lr,
                      momentum=training_config.momentum,
                      clip_norm=training_config.clip_norm)

    epoch_losses = []
    previous = None
    for epoch in range(training_config.epochs):
        total = 0.0
        count = 0
        for batch in batches:
            feats = [u.features for u in batch]
            batch_lfvs = _batch_lfvs(batch, lfvs, model_config.adaptation)
            opt.begin_step()
            flat, out_lens = model.forward_batch(feats, batch_lfvs, train=True)
            loss, skipped = ctc.ctc_batch_loss(
                flat, out_lens, [labels[u.id] for u in batch])
            loss.backward()
            opt.end_step()
            n_used = len(batch) - len(skipped)
            total += float(loss.data) * n_used
            count += n_used
        epoch_loss = total / count
        epoch_losses.append(epoch_loss)
        if log_fn is not None:
            log_fn(f"epoch={epoch + 1} loss={epoch_loss:.4f} lr={opt.lr:.6g}")
        if previous is not None:
            improvement = (previous - epoch_loss) / abs(previous)
            if improvement < training_config.halving_threshold:
                opt.lr /= 2.0
                if log_fn is not None:
                    log_fn(f"halving lr to {opt.lr:.6g}")
        previous = epoch_loss
    return model, epoch_losses


def decode_corpus(model, utterances, vocabulary, lfvs=None, lm=None,
                  lm_weight=0.0, beam=1, batch_size=15):
    """Decode every utterance; returns {id: token tuple}.

    Plain greedy when no LM weight and beam 1, otherwise the fused prefix
    search.  Forward passes run batched in evaluation mode.
    """
    hyps = {}
    for batch in sort_and_batch(utterances, batch_size):
        feats = [u.features for u in batch]
        batch_lfvs = _batch_lfvs(batch, lfvs, model.config.adaptation)
        flat, out_lens = model.forward_batch(feats, batch_lfvs, train=False)
        offset = 0
        for utt, n in zip(batch, out_lens):
            grid = flat.data[offset:offset + int(n)]
            offset += int(n)
            if lm_weight == 0.0 and beam == 1:
                ids = ctc.greedy_decode(grid)
            else:
                ids = fused_greedy_decode(grid, lm=lm, lm_weight=lm_weight, beam=beam)
            hyps[utt.id] = vocabulary.decode(ids)
    return hyps
