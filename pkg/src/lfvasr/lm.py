"""Character-level recurrent language model used for shallow fusion.

The model shares the acoustic vocabulary: real tokens keep their ids, and
id 0 (never emitted in transcripts, it is the CTC blank slot) doubles as the
sentence-start symbol on the input side.  A single LSTM over embeddings feeds
a softmax over the full vocabulary.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd
from .autograd import Parameter
from .errors import ConfigError, FormatError, UsageError
from .layers import WEIGHT_RANGE, _rng_for, lstm_direction
from .numerics import NesterovSgd
from .storage import LM_MAGIC, read_checkpoint, write_checkpoint

SENTENCE_START = 0


@dataclass
class CharRnnLmConfig:
    vocab_size: int
    embedding_dim: int = 16
    hidden_size: int = 128

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError("LM vocabulary must hold at least two symbols")
        if self.embedding_dim < 1 or self.hidden_size < 1:
            raise ConfigError("embedding and hidden sizes must be positive")

    def to_dict(self):
        return {"vocab_size": self.vocab_size, "embedding_dim": self.embedding_dim,
                "hidden_size": self.hidden_size}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(vocab_size=int(d["vocab_size"]),
                       embedding_dim=int(d["embedding_dim"]),
                       hidden_size=int(d["hidden_size"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed LM config: {exc}") from None


class CharRnnLm:
    def __init__(self, config, seed=0):
        self.config = config
        v, e, h = config.vocab_size, config.embedding_dim, config.hidden_size
        self.params = {}

        def draw(name, shape):
            rng = _rng_for(seed, name)
            self.params[name] = Parameter(
                rng.uniform(-WEIGHT_RANGE, WEIGHT_RANGE, size=shape), name=name)

        draw("lm.emb", (v, e))
        draw("lm.wx", (e, 4 * h))
        draw("lm.wh", (h, 4 * h))
        draw("lm.b", (4 * h,))
        self.params["lm.b"].data[h:2 * h] = 1.0   # forget-gate bias
        draw("lm.out.w", (h, v))
        draw("lm.out.b", (v,))

    def parameters(self):
        return list(self.params.values())

    def forward(self, token_ids, lengths):
        """Log-probabilities over next tokens for padded input ids [B, T]."""
        token_ids = np.asarray(token_ids, dtype=np.int64)
        b, t = token_ids.shape
        emb = autograd.pick_rows(self.params["lm.emb"], token_ids.reshape(-1))
        x = autograd.reshape(emb, (b, t, self.config.embedding_dim))
        h = lstm_direction(x, np.asarray(lengths, dtype=np.int64),
                           self.params["lm.wx"], self.params["lm.wh"],
                           self.params["lm.b"], reverse=False)
        flat = autograd.reshape(h, (b * t, self.config.hidden_size))
        logits = autograd.add(autograd.matmul(flat, self.params["lm.out.w"]),
                              self.params["lm.out.b"])
        return autograd.log_softmax(logits)   # [B*T, V], row-major over (b, t)

    def start_state(self, n=1):
        h = self.config.hidden_size
        return np.zeros((n, h)), np.zeros((n, h))

    def step(self, tokens, state):
        """Advance one step for n parallel histories (plain numpy, no graph).

        tokens [n] are the symbols being consumed; returns the new state and
        the log-distribution over the following symbol, [n, V].
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        h_prev, c_prev = state
        hs = self.config.hidden_size
        x = self.params["lm.emb"].data[tokens]
        z = x @ self.params["lm.wx"].data + h_prev @ self.params["lm.wh"].data \
            + self.params["lm.b"].data
        i = 1.0 / (1.0 + np.exp(-z[:, :hs]))
        f = 1.0 / (1.0 + np.exp(-z[:, hs:2 * hs]))
        g = np.tanh(z[:, 2 * hs:3 * hs])
        o = 1.0 / (1.0 + np.exp(-z[:, 3 * hs:]))
        c = f * c_prev + i * g
        h = o * np.tanh(c)
        logits = h @ self.params["lm.out.w"].data + self.params["lm.out.b"].data
        m = logits.max(axis=1, keepdims=True)
        logp = logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
        return (h, c), logp

    def sequence_log_prob(self, token_ids):
        """Total log-probability of one token sequence from sentence start."""
        state = self.start_state(1)
        total = 0.0
        prev = SENTENCE_START
        for tok in token_ids:
            state, logp = self.step(np.array([prev]), state)
            total += float(logp[0, tok])
            prev = tok
        return total

    def save(self, path):
        write_checkpoint(path, LM_MAGIC, self.config.to_dict(),
                         [(n, p.data) for n, p in self.params.items()])

    @classmethod
    def load(cls, path):
        cfg_dict, arrays = read_checkpoint(path, LM_MAGIC)
        lm = cls(CharRnnLmConfig.from_dict(cfg_dict))
        stored = dict(arrays)
        for name, param in lm.params.items():
            if name not in stored:
                raise FormatError(f"checkpoint misses tensor {name}")
            if stored[name].shape != param.data.shape:
                raise FormatError(f"tensor {name} has shape {stored[name].shape}, "
                                  f"expected {param.data.shape}")
            param.data = stored[name]
        return lm


def train_lm(sequences, config, seed=0, epochs=8, lr=0.5, momentum=0.9,
             batch_size=16, log_fn=None):
    """Train on token-id sequences; returns (lm, per-epoch train perplexity).

    Each sequence is predicted left to right from the sentence-start symbol.
    """
    sequences = [list(s) for s in sequences if len(s) > 0]
    if not sequences:
        raise UsageError("no transcripts to train the language model on")
    for s in sequences:
        if min(s) < 1 or max(s) >= config.vocab_size:
            raise UsageError("token id outside the LM vocabulary (0 is reserved)")

    lm = CharRnnLm(config, seed=seed)
    opt = NesterovSgd(lm.parameters(), lr=lr, momentum=momentum, clip_norm=5.0)
    rng = np.random.default_rng([seed, 0x17])
    # Length-sorted batches keep padding small; order is fixed across epochs.
    order = sorted(range(len(sequences)), key=lambda i: (len(sequences[i]), i))
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]

    perplexities = []
    for epoch in range(epochs):
        total_nll = 0.0
        total_tokens = 0
        for batch in batches:
            seqs = [sequences[i] for i in batch]
            lengths = np.array([len(s) for s in seqs], dtype=np.int64)
            tmax = int(lengths.max())
            inputs = np.zeros((len(seqs), tmax), dtype=np.int64)
            targets = np.zeros((len(seqs), tmax), dtype=np.int64)
            mask = np.zeros((len(seqs), tmax), dtype=bool)
            for row, s in enumerate(seqs):
                inputs[row, 1:len(s)] = s[:-1]      # position 0 keeps SENTENCE_START
                targets[row, :len(s)] = s
                mask[row, :len(s)] = True
            flat_valid = np.flatnonzero(mask.reshape(-1))

            opt.begin_step()
            logp = lm.forward(inputs, lengths)
            picked = autograd.pick_cols(autograd.pick_rows(logp, flat_valid),
                                        targets.reshape(-1)[flat_valid])
            loss = autograd.mul(autograd.mean(picked), -1.0)
            loss.backward()
            opt.end_step()
            total_nll += float(loss.data) * len(flat_valid)
            total_tokens += len(flat_valid)
        ppl = float(np.exp(total_nll / total_tokens))
        perplexities.append(ppl)
        if log_fn is not None:
            log_fn(f"lm epoch={epoch + 1} perplexity={ppl:.4f}")
    return lm, perplexities
