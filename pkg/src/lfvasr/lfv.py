"""Language-feature-vector extractor: a frame-level language classifier with
a narrow logistic bottleneck whose activations serve as the language code.

The extractor is trained to name the language of each context-stacked frame;
the bottleneck (the second-to-last weight layer) is read out either per frame
or averaged over an utterance.  Components live strictly in (0, 1), which the
modulation adaptation mode relies on.
"""

from dataclasses import dataclass
import struct

import numpy as np

from . import autograd
from .autograd import Parameter, Tensor
from .errors import ConfigError, FormatError, TruncationError, UsageError
from .layers import WEIGHT_RANGE, _rng_for
from .numerics import NesterovSgd
from .storage import LFV_NET_MAGIC, read_checkpoint, write_checkpoint

GRANULARITIES = ("utterance-mean", "per-frame")


@dataclass
class LfvExtractorConfig:
    feature_dim: int
    num_languages: int
    context_window: int = 4        # frames on each side, 2k+1 total
    hidden_sizes: tuple = (64, 64)
    bottleneck_dim: int = 8

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.feature_dim < 1:
            raise ConfigError("feature dim must be positive")
        if self.num_languages < 2:
            raise ConfigError("extractor needs at least two language classes")
        if self.context_window < 0:
            raise ConfigError("context window must be non-negative")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError("hidden sizes must be positive")
        if self.bottleneck_dim >= min(self.hidden_sizes):
            raise ConfigError("bottleneck must be narrower than every hidden layer")
        if self.bottleneck_dim < 1:
            raise ConfigError("bottleneck dim must be positive")

    @property
    def input_dim(self):
        return self.feature_dim * (2 * self.context_window + 1)

    def to_dict(self):
        return {
            "feature_dim": self.feature_dim,
            "num_languages": self.num_languages,
            "context_window": self.context_window,
            "hidden_sizes": list(self.hidden_sizes),
            "bottleneck_dim": self.bottleneck_dim,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                feature_dim=int(d["feature_dim"]),
                num_languages=int(d["num_languages"]),
                context_window=int(d["context_window"]),
                hidden_sizes=tuple(d["hidden_sizes"]),
                bottleneck_dim=int(d["bottleneck_dim"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed extractor config: {exc}") from None


def stack_context(features, context_window):
    """Stack 2k+1 neighbouring frames per position, replicating the edges."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise UsageError("features must be a non-empty [T, F] matrix")
    k = context_window
    if k == 0:
        return features.copy()
    padded = np.pad(features, ((k, k), (0, 0)), mode="edge")
    t, f = features.shape
    windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * k + 1, axis=0)
    return np.ascontiguousarray(windows.transpose(0, 2, 1)).reshape(t, (2 * k + 1) * f)


class LfvExtractor:
    def __init__(self, config, seed=0):
        self.config = config
        self.params = {}
        self._seed = seed
        dims = [config.input_dim] + list(config.hidden_sizes)
        for i in range(len(config.hidden_sizes)):
            self._add(f"lfv.h{i}.w", (dims[i], dims[i + 1]))
            self._add(f"lfv.h{i}.b", (dims[i + 1],))
        self._add("lfv.bottleneck.w", (dims[-1], config.bottleneck_dim))
        self._add("lfv.bottleneck.b", (config.bottleneck_dim,))
        self._add("lfv.out.w", (config.bottleneck_dim, config.num_languages))
        self._add("lfv.out.b", (config.num_languages,))

    def _add(self, name, shape):
        rng = _rng_for(self._seed, name)
        data = rng.uniform(-WEIGHT_RANGE, WEIGHT_RANGE, size=shape)
        self.params[name] = Parameter(data, name=name)

    def parameters(self):
        return list(self.params.values())

    def forward(self, stacked):
        """Map context-stacked frames [N, input_dim] to (bottleneck, logits)."""
        if not isinstance(stacked, Tensor):
            stacked = Tensor(np.asarray(stacked, dtype=np.float64))
        if stacked.shape[1] != self.config.input_dim:
            raise UsageError(
                f"expected stacked width {self.config.input_dim}, got {stacked.shape[1]}")
        cur = stacked
        for i in range(len(self.config.hidden_sizes)):
            cur = autograd.tanh(autograd.add(
                autograd.matmul(cur, self.params[f"lfv.h{i}.w"]),
                self.params[f"lfv.h{i}.b"]))
        bottleneck = autograd.sigmoid(autograd.add(
            autograd.matmul(cur, self.params["lfv.bottleneck.w"]),
            self.params["lfv.bottleneck.b"]))
        logits = autograd.add(
            autograd.matmul(bottleneck, self.params["lfv.out.w"]),
            self.params["lfv.out.b"])
        return bottleneck, logits

    def save(self, path):
        write_checkpoint(path, LFV_NET_MAGIC, self.config.to_dict(),
                         [(n, p.data) for n, p in self.params.items()])

    @classmethod
    def load(cls, path):
        cfg_dict, arrays = read_checkpoint(path, LFV_NET_MAGIC)
        net = cls(LfvExtractorConfig.from_dict(cfg_dict))
        stored = dict(arrays)
        for name, param in net.params.items():
            if name not in stored:
                raise FormatError(f"checkpoint misses tensor {name}")
            if stored[name].shape != param.data.shape:
                raise FormatError(f"tensor {name} has shape {stored[name].shape}, "
                                  f"expected {param.data.shape}")
            param.data = stored[name]
        return net


def _dedupe_by_id(utterances):
    seen = set()
    out = []
    for utt in utterances:
        if utt.id in seen:
            continue
        seen.add(utt.id)
        out.append(utt)
    return out


def train_lfv_extractor(utterances, config=None, seed=0, epochs=6, lr=0.3,
                        momentum=0.9, batch_size=512, held_out_fraction=0.1,
                        log_fn=None):
    """Train the frame-level language classifier.

    Records sharing an id (the two transcript modes of one utterance) count
    once.  A deterministic utterance-level slice is held out; returns the
    trained extractor and its held-out frame accuracy.
    """
    utterances = _dedupe_by_id(utterances)
    if not utterances:
        raise UsageError("no utterances to train the extractor on")
    languages = sorted({u.language for u in utterances})
    if len(languages) < 2:
        raise UsageError("extractor training needs at least two languages")
    lang_index = {lang: i for i, lang in enumerate(languages)}
    feature_dim = utterances[0].features.shape[1]

    if config is None:
        config = LfvExtractorConfig(feature_dim=feature_dim, num_languages=len(languages))
    if config.feature_dim != feature_dim:
        raise UsageError(f"extractor expects feature dim {config.feature_dim}, "
                         f"corpus has {feature_dim}")
    if config.num_languages != len(languages):
        raise UsageError(f"extractor has {config.num_languages} classes, "
                         f"corpus has {len(languages)} languages")

    rng = np.random.default_rng([seed, 0x1F])
    # hold out a slice of every language so the accuracy probe is balanced
    held_ids = set()
    for lang in languages:
        members = [i for i, u in enumerate(utterances) if u.language == lang]
        order = rng.permutation(len(members))
        n_held = max(1, int(round(held_out_fraction * len(members))))
        if n_held >= len(members):
            raise UsageError(f"held-out fraction leaves no training "
                             f"utterances for {lang}")
        held_ids.update(members[int(i)] for i in order[:n_held])

    def frames_of(indices):
        xs, ys = [], []
        for i in indices:
            utt = utterances[i]
            xs.append(stack_context(utt.features, config.context_window))
            ys.append(np.full(utt.features.shape[0], lang_index[utt.language]))
        return np.concatenate(xs, axis=0), np.concatenate(ys, axis=0)

    train_x, train_y = frames_of([i for i in range(len(utterances)) if i not in held_ids])
    held_x, held_y = frames_of(sorted(held_ids))

    net = LfvExtractor(config, seed=seed)
    opt = NesterovSgd(net.parameters(), lr=lr, momentum=momentum, clip_norm=5.0)
    n = train_x.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            opt.begin_step()
            _, logits = net.forward(Tensor(train_x[idx]))
            logp = autograd.log_softmax(logits)
            picked = autograd.pick_cols(logp, train_y[idx])
            loss = autograd.mul(autograd.mean(picked), -1.0)
            loss.backward()
            opt.end_step()
            total += float(loss.data) * len(idx)
        if log_fn is not None:
            log_fn(f"lfv-extractor epoch={epoch + 1} loss={total / n:.4f}")

    with autograd.no_grad():
        _, logits = net.forward(Tensor(held_x))
    accuracy = float(np.mean(np.argmax(logits.data, axis=1) == held_y))
    if log_fn is not None:
        log_fn(f"lfv-extractor held-out-frame-accuracy={accuracy:.4f}")
    return net, accuracy


def extract_lfv(extractor, features, granularity="utterance-mean"):
    """Bottleneck activations for one utterance: [T, D] or the mean [D]."""
    if granularity not in GRANULARITIES:
        raise UsageError(f"unknown granularity {granularity!r}")
    stacked = stack_context(features, extractor.config.context_window)
    with autograd.no_grad():
        bottleneck, _ = extractor.forward(Tensor(stacked))
    values = bottleneck.data
    if granularity == "utterance-mean":
        return values.mean(axis=0)
    return values.copy()


def extract_corpus_lfvs(extractor, utterances, granularity="utterance-mean"):
    """One LFV per distinct utterance id, keyed by id."""
    out = {}
    for utt in _dedupe_by_id(utterances):
        out[utt.id] = extract_lfv(extractor, utt.features, granularity)
    return out


def write_lfv_file(path, entries):
    """Per-utterance records: id, granularity flag, D, frame count, values."""
    with open(path, "wb") as fh:
        for uid in sorted(entries):
            values = np.asarray(entries[uid], dtype=np.float64)
            if values.ndim == 1:
                flag, t, d = 0, 1, values.shape[0]
                rows = values.reshape(1, -1)
            elif values.ndim == 2:
                flag, t, d = 1, values.shape[0], values.shape[1]
                rows = values
            else:
                raise UsageError(f"LFV for {uid} must be [D] or [T, D]")
            encoded = uid.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BII", flag, d, t))
            fh.write(np.ascontiguousarray(rows).astype("<f8").tobytes())


def read_lfv_file(path):
    entries = {}
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise TruncationError(path, 4, len(head))

            def need(n):
                data = fh.read(n)
                if len(data) != n:
                    raise TruncationError(path, n, len(data))
                return data

            (id_len,) = struct.unpack("<I", head)
            uid = need(id_len).decode("utf-8")
            flag, d, t = struct.unpack("<BII", need(9))
            if flag not in (0, 1):
                raise FormatError(f"{path}: bad granularity flag {flag} for {uid}")
            if d < 1 or t < 1:
                raise FormatError(f"{path}: bad LFV shape {t}x{d} for {uid}")
            values = np.frombuffer(need(t * d * 8), dtype="<f8").reshape(t, d)
            if uid in entries:
                raise FormatError(f"{path}: duplicate LFV record for {uid}")
            entries[uid] = values[0].copy() if flag == 0 else values.astype(np.float64)
    return entries
