"""Acoustic model layers and the assembled network.

The model is a small convolutional front end over (time, frequency),
batch normalization on the flattened channels, a stack of bidirectional
LSTM layers, and an affine projection to per-frame log-probabilities.
Language feature vectors enter either by appending to the normalized
convolution output (one extra block of input rows on the first LSTM) or
by multiplicatively modulating one hidden layer's activations in
contiguous groups of units.

Batched forwards operate on zero-padded [B, T, ...] arrays; per-row
valid lengths mask padding out of the statistics, the recurrences and
the emitted frames.
"""

import zlib
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autograd, kernels, storage
from .autograd import Parameter, Tensor
from .errors import ConfigError, FormatError, ShapeError, UsageError
from .numerics import BatchNorm

WEIGHT_RANGE = 0.08


@dataclass(frozen=True)
class ConvLayerSpec:
    """One 2-D convolution over (time, frequency) with optional
    non-overlapping max pooling along frequency (pool_freq=1 disables)."""

    kernel_time: int = 3
    kernel_freq: int = 3
    stride_time: int = 1
    stride_freq: int = 1
    out_channels: int = 8
    pool_freq: int = 1

    def __post_init__(self):
        for field in ("kernel_time", "kernel_freq", "stride_time",
                      "stride_freq", "out_channels", "pool_freq"):
            if getattr(self, field) < 1:
                raise ConfigError("%s must be >= 1" % field)


@dataclass(frozen=True)
class BiLstmLayerSpec:
    hidden_per_direction: int = 16

    def __post_init__(self):
        if self.hidden_per_direction < 1:
            raise ConfigError("hidden_per_direction must be >= 1")

    @property
    def output_dim(self):
        return 2 * self.hidden_per_direction


@dataclass(frozen=True)
class ModulationSpec:
    """Multiplicative conditioning of one LSTM layer's output.

    Unit u of the 2H-wide layer is scaled by coefficient u // group_size,
    so the layer width must be an integer multiple of feature_dim.
    """

    feature_dim: int
    layer_index: int

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ConfigError("modulation feature_dim must be >= 1")
        if self.layer_index < 1:
            raise ConfigError("modulation layer_index is 1-based and must be >= 1")

    def group_size(self, layer_width):
        if layer_width % self.feature_dim != 0:
            raise ConfigError(
                "layer width %d is not a multiple of the modulation "
                "feature dim %d" % (layer_width, self.feature_dim)
            )
        return layer_width // self.feature_dim


def conv2d(x, w, b, stride_time=1, stride_freq=1):
    """2-D valid convolution of x [B,T,F,Cin] with w [kt,kf,Cin,Cout]."""
    if x.ndim != 4:
        raise ShapeError("conv2d expects a [B, T, F, C] input")
    B, T, F, cin = x.shape
    kt, kf, w_cin, cout = w.shape
    if w_cin != cin:
        raise ShapeError("kernel expects %d input channels, got %d" % (w_cin, cin))
    if T < kt or F < kf:
        raise ShapeError(
            "input %dx%d smaller than kernel %dx%d" % (T, F, kt, kf)
        )
    windows = sliding_window_view(x.data, (kt, kf), axis=(1, 2))
    windows = windows[:, ::stride_time, ::stride_freq]
    to, fo = windows.shape[1], windows.shape[2]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(B * to * fo, kt * kf * cin)
    wmat = w.data.reshape(kt * kf * cin, cout)
    out = (cols @ wmat + b.data).reshape(B, to, fo, cout)

    def backward(g):
        gflat = g.reshape(B * to * fo, cout)
        if w.requires_grad:
            w.accumulate_grad((cols.T @ gflat).reshape(w.shape))
        if b.requires_grad:
            b.accumulate_grad(gflat.sum(axis=0))
        if x.requires_grad:
            dcols = (gflat @ wmat.T).reshape(B, to, fo, kt, kf, cin)
            dx = np.zeros_like(x.data)
            for dt in range(kt):
                for df in range(kf):
                    dx[:,
                       dt:dt + stride_time * to:stride_time,
                       df:df + stride_freq * fo:stride_freq,
                       :] += dcols[:, :, :, dt, df, :]
            x.accumulate_grad(dx)

    return autograd.fused(out, (x, w, b), backward)


def maxpool_freq(x, width):
    """Non-overlapping max over `width` adjacent frequency bins; a
    trailing remainder narrower than the window is dropped. Ties go to
    the lowest bin."""
    if width == 1:
        return x
    if x.ndim != 4:
        raise ShapeError("maxpool_freq expects a [B, T, F, C] input")
    B, T, F, C = x.shape
    fo = F // width
    if fo < 1:
        raise ShapeError("frequency axis %d narrower than pool %d" % (F, width))
    trimmed = x.data[:, :, :fo * width, :].reshape(B, T, fo, width, C)
    idx = trimmed.argmax(axis=3)
    out = np.take_along_axis(trimmed, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def backward(g):
        if x.requires_grad:
            dtr = np.zeros((B, T, fo, width, C))
            np.put_along_axis(dtr, idx[:, :, :, None, :], g[:, :, :, None, :], axis=3)
            dx = np.zeros_like(x.data)
            dx[:, :, :fo * width, :] = dtr.reshape(B, T, fo * width, C)
            x.accumulate_grad(dx)

    return autograd.fused(out, (x,), backward)


def lstm_direction(x, lengths, wx, wh, b, reverse):
    """One LSTM direction over padded [B, T, U] input; emits [B, T, H]
    with zeros beyond each row's length."""
    B, T, U = x.shape
    H = wh.shape[0]
    xflat = x.data.reshape(B * T, U)
    xp = (xflat @ wx.data + b.data).reshape(B, T, 4 * H)
    h, c, gates = kernels.lstm_sequence_forward(xp, wh.data, lengths, reverse)

    def backward(g):
        dxp, dwh = kernels.lstm_sequence_backward(
            np.ascontiguousarray(g), h, c, gates, wh.data, lengths, reverse
        )
        dflat = dxp.reshape(B * T, 4 * H)
        if wx.requires_grad:
            wx.accumulate_grad(xflat.T @ dflat)
        if wh.requires_grad:
            wh.accumulate_grad(dwh)
        if b.requires_grad:
            b.accumulate_grad(dflat.sum(axis=0))
        if x.requires_grad:
            x.accumulate_grad((dflat @ wx.data.T).reshape(B, T, U))

    return autograd.fused(h, (x, wx, wh, b), backward)


class BiLstm:
    """Bidirectional LSTM layer: independent forward and backward passes
    concatenated along the unit axis."""

    def __init__(self, input_dim, hidden, name, draw):
        self.input_dim = input_dim
        self.hidden = hidden
        self.fwd = self._direction_params(input_dim, hidden, name + ".fwd", draw)
        self.bwd = self._direction_params(input_dim, hidden, name + ".bwd", draw)

    @staticmethod
    def _direction_params(u, h, name, draw):
        wx = draw(name + ".wx", (u, 4 * h))
        wh = draw(name + ".wh", (h, 4 * h))
        b = Parameter(np.zeros(4 * h), name=name + ".b")
        b.data[h:2 * h] = 1.0  # forget gate opens at init
        return wx, wh, b

    def parameters(self):
        return list(self.fwd) + list(self.bwd)

    def forward(self, x, lengths):
        hf = lstm_direction(x, lengths, *self.fwd, reverse=False)
        hb = lstm_direction(x, lengths, *self.bwd, reverse=True)
        return autograd.concat([hf, hb], axis=2)


def append_features(x, lfv):
    """Concatenate a language feature vector onto per-frame features.

    x is [T, U]; lfv is either a fixed [D] vector (tiled over frames) or
    a per-frame [T, D] matrix.
    """
    if x.ndim != 2:
        raise ShapeError("append_features expects a [T, U] input")
    lfv = lfv if isinstance(lfv, Tensor) else Tensor(np.asarray(lfv, dtype=np.float64))
    if lfv.ndim == 1:
        lfv = autograd.broadcast_rows(lfv, x.shape[0])
    if lfv.ndim != 2 or lfv.shape[0] != x.shape[0]:
        raise ShapeError(
            "per-frame feature vectors have %s rows, input has %d frames"
            % (lfv.shape[0], x.shape[0])
        )
    return autograd.concat([x, lfv], axis=1)


def modulate(x, lfv):
    """Scale contiguous unit groups of x [T, U] by lfv [D].

    out[t, u] = x[t, u] * lfv[u // (U // D)]; U must be a multiple of D.
    """
    if x.ndim != 2:
        raise ShapeError("modulate expects a [T, U] input")
    lfv = lfv if isinstance(lfv, Tensor) else Tensor(np.asarray(lfv, dtype=np.float64))
    if lfv.ndim != 1:
        raise ShapeError("modulate expects a [D] coefficient vector")
    if x.shape[1] % lfv.shape[0] != 0:
        raise ConfigError(
            "layer width %d is not a multiple of the modulation feature dim %d"
            % (x.shape[1], lfv.shape[0])
        )
    return autograd.mul(x, autograd.repeat_last(lfv, x.shape[1] // lfv.shape[0]))


@dataclass(frozen=True)
class AcousticModelConfig:
    feature_dim: int
    vocab_size: int
    conv_layers: tuple
    lstm_layers: tuple
    adaptation: str = "none"
    lfv_dim: int = 0
    modulation: ModulationSpec = None

    def __post_init__(self):
        if self.feature_dim < 1 or self.vocab_size < 2:
            raise ConfigError("need feature_dim >= 1 and vocab_size >= 2")
        if not self.conv_layers or not self.lstm_layers:
            raise ConfigError("need at least one conv and one LSTM layer")
        if self.adaptation not in ("none", "append", "modulate"):
            raise ConfigError("unknown adaptation mode %r" % (self.adaptation,))
        if self.adaptation == "none":
            if self.lfv_dim != 0:
                raise ConfigError("lfv_dim must be 0 without adaptation")
            return
        if self.lfv_dim < 1:
            raise ConfigError("adaptation %r needs lfv_dim >= 1" % (self.adaptation,))
        if self.adaptation == "modulate":
            if self.modulation is None:
                raise ConfigError("modulate adaptation needs a ModulationSpec")
            if self.modulation.feature_dim != self.lfv_dim:
                raise ConfigError("modulation feature_dim must equal lfv_dim")
            if self.modulation.layer_index > len(self.lstm_layers):
                raise ConfigError(
                    "modulation layer_index %d exceeds the %d LSTM layers"
                    % (self.modulation.layer_index, len(self.lstm_layers))
                )
            # validate divisibility up front
            self.modulation.group_size(
                self.lstm_layers[self.modulation.layer_index - 1].output_dim
            )

    # --- frequency/time bookkeeping -------------------------------------

    def output_frames(self, input_frames):
        t = input_frames
        for spec in self.conv_layers:
            t = (t - spec.kernel_time) // spec.stride_time + 1
        return t

    def frame_offset(self, input_frames):
        """Input frame index aligned with the first convolution output
        frame (centered receptive field)."""
        return (input_frames - self.output_frames(input_frames)) // 2

    def conv_output_dim(self):
        f = self.feature_dim
        for spec in self.conv_layers:
            f = (f - spec.kernel_freq) // spec.stride_freq + 1
            if f < 1:
                raise ConfigError("frequency axis exhausted by the conv stack")
            f = f // spec.pool_freq
            if f < 1:
                raise ConfigError("frequency axis exhausted by pooling")
        return f * self.conv_layers[-1].out_channels

    # --- serialization ---------------------------------------------------

    def to_dict(self):
        d = {
            "feature_dim": self.feature_dim,
            "vocab_size": self.vocab_size,
            "conv_layers": [vars(c).copy() for c in self.conv_layers],
            "lstm_layers": [vars(l).copy() for l in self.lstm_layers],
            "adaptation": self.adaptation,
            "lfv_dim": self.lfv_dim,
        }
        if self.modulation is not None:
            d["modulation"] = vars(self.modulation).copy()
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            mod = d.get("modulation")
            return cls(
                feature_dim=d["feature_dim"],
                vocab_size=d["vocab_size"],
                conv_layers=tuple(ConvLayerSpec(**c) for c in d["conv_layers"]),
                lstm_layers=tuple(BiLstmLayerSpec(**l) for l in d["lstm_layers"]),
                adaptation=d["adaptation"],
                lfv_dim=d["lfv_dim"],
                modulation=ModulationSpec(**mod) if mod else None,
            )
        except (KeyError, TypeError) as exc:
            raise FormatError("malformed model config: %s" % (exc,))


def default_model_config(vocab_size, adaptation="none", lfv_dim=8,
                         feature_dim=12, hidden=16, modulation_layer=2):
    conv = (
        ConvLayerSpec(out_channels=8, pool_freq=2),
        ConvLayerSpec(out_channels=16, pool_freq=2),
    )
    lstm = tuple(BiLstmLayerSpec(hidden_per_direction=hidden) for _ in range(4))
    if adaptation == "none":
        return AcousticModelConfig(feature_dim, vocab_size, conv, lstm)
    mod = None
    if adaptation == "modulate":
        mod = ModulationSpec(feature_dim=lfv_dim, layer_index=modulation_layer)
    return AcousticModelConfig(
        feature_dim, vocab_size, conv, lstm,
        adaptation=adaptation, lfv_dim=lfv_dim, modulation=mod,
    )


def _rng_for(seed, name):
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF,
                                  zlib.crc32(name.encode("utf-8"))])


class AcousticModel:
    """Convolution + BiLSTM CTC network with optional LFV conditioning.

    Every tensor is drawn from its own (seed, name)-keyed random stream,
    so two models built from the same seed share bitwise-identical
    values for every identically named tensor regardless of adaptation
    mode. The extra input rows the append mode adds to the first LSTM
    come from separate streams and leave the shared rows untouched.
    """

    def __init__(self, config, seed=0):
        self.config = config
        self.seed = seed
        self.conv_params = []
        cin = 1
        for i, spec in enumerate(config.conv_layers, start=1):
            w = self._draw("conv%d.w" % i,
                           (spec.kernel_time, spec.kernel_freq, cin, spec.out_channels))
            b = Parameter(np.zeros(spec.out_channels), name="conv%d.b" % i)
            self.conv_params.append((w, b))
            cin = spec.out_channels

        flat = config.conv_output_dim()
        self.bn = BatchNorm(flat, name="bn")

        self.lstm_layers = []
        in_dim = flat + (config.lfv_dim if config.adaptation == "append" else 0)
        for l, spec in enumerate(config.lstm_layers, start=1):
            layer = BiLstm(in_dim, spec.hidden_per_direction,
                           "lstm%d" % l, self._draw_lstm(l == 1, flat))
            self.lstm_layers.append(layer)
            in_dim = spec.output_dim

        out_dim = config.lstm_layers[-1].output_dim
        self.out_w = self._draw("out.w", (out_dim, config.vocab_size))
        self.out_b = Parameter(np.zeros(config.vocab_size), name="out.b")

    def _draw(self, name, shape):
        rng = _rng_for(self.seed, name)
        data = rng.uniform(-WEIGHT_RANGE, WEIGHT_RANGE, size=shape)
        return Parameter(data, name=name)

    def _draw_lstm(self, is_first, base_rows):
        """Input-weight initializer; in append mode the first layer's
        matrix is the baseline draw plus separately drawn LFV rows."""
        append = is_first and self.config.adaptation == "append"

        def draw(name, shape):
            if not (append and name.endswith(".wx")):
                return self._draw(name, shape)
            cols = shape[1]
            base = _rng_for(self.seed, name).uniform(
                -WEIGHT_RANGE, WEIGHT_RANGE, size=(base_rows, cols))
            extra = _rng_for(self.seed, name + "_lfv").uniform(
                -WEIGHT_RANGE, WEIGHT_RANGE, size=(shape[0] - base_rows, cols))
            return Parameter(np.concatenate([base, extra], axis=0), name=name)

        return draw

    def parameters(self):
        params = []
        for w, b in self.conv_params:
            params.extend([w, b])
        params.extend(self.bn.parameters())
        for layer in self.lstm_layers:
            params.extend(layer.parameters())
        params.extend([self.out_w, self.out_b])
        return params

    # --- forward ----------------------------------------------------------

    def forward_batch(self, feats, lfvs=None, train=False):
        """Run the network over a batch of raw feature matrices.

        feats : list of [T_i, F] arrays
        lfvs  : per-utterance conditioning, required iff the config uses
                adaptation; each entry is [D] or per-input-frame [T_i, D]
        Returns (log_probs, frame_counts): a flat [sum T'_i, V] tensor of
        per-frame log distributions, utterances concatenated in order,
        and the emitted frame count per utterance.
        """
        cfg = self.config
        if cfg.adaptation == "none":
            if lfvs is not None:
                raise UsageError("model built without adaptation got LFVs")
        elif lfvs is None or len(lfvs) != len(feats):
            raise UsageError("adaptation %r needs one LFV per utterance"
                             % (cfg.adaptation,))
        B = len(feats)
        if B == 0:
            raise UsageError("empty batch")
        in_lens = [f.shape[0] for f in feats]
        out_lens = np.empty(B, dtype=np.int64)
        for i, t in enumerate(in_lens):
            if feats[i].ndim != 2 or feats[i].shape[1] != cfg.feature_dim:
                raise ShapeError("utterance %d: expected [T, %d] features"
                                 % (i, cfg.feature_dim))
            out_lens[i] = cfg.output_frames(t)
            if out_lens[i] < 1:
                raise ShapeError(
                    "utterance %d: %d frames is shorter than the conv stack's"
                    " receptive field" % (i, t)
                )
        tmax = max(in_lens)
        x = np.zeros((B, tmax, cfg.feature_dim, 1))
        for i, f in enumerate(feats):
            x[i, :in_lens[i], :, 0] = f
        cur = Tensor(x)
        for spec, (w, b) in zip(cfg.conv_layers, self.conv_params):
            cur = conv2d(cur, w, b, spec.stride_time, spec.stride_freq)
            cur = autograd.relu(cur)
            cur = maxpool_freq(cur, spec.pool_freq)
        tc = cur.shape[1]
        flat_dim = cur.shape[2] * cur.shape[3]
        cur = autograd.reshape(cur, (B, tc, flat_dim))

        valid = np.concatenate(
            [i * tc + np.arange(out_lens[i]) for i in range(B)])
        rows = autograd.pick_rows(autograd.reshape(cur, (B * tc, flat_dim)), valid)
        self.bn.mode = "train" if train else "eval"
        rows = self.bn.forward(rows)
        cur = autograd.reshape(
            autograd.scatter_rows(rows, valid, B * tc), (B, tc, flat_dim))

        if cfg.adaptation == "append":
            cur = autograd.concat(
                [cur, Tensor(self._padded_lfvs(lfvs, in_lens, out_lens, tc))],
                axis=2)

        for index, layer in enumerate(self.lstm_layers, start=1):
            cur = layer.forward(cur, out_lens)
            if cfg.adaptation == "modulate" and index == cfg.modulation.layer_index:
                coeff = self._padded_lfvs(lfvs, in_lens, out_lens, tc)
                group = cfg.modulation.group_size(cur.shape[2])
                cur = autograd.mul(cur, Tensor(np.repeat(coeff, group, axis=-1)))

        width = cur.shape[2]
        rows = autograd.pick_rows(autograd.reshape(cur, (B * tc, width)), valid)
        logits = autograd.add(autograd.matmul(rows, self.out_w), self.out_b)
        return autograd.log_softmax(logits), out_lens

    def _padded_lfvs(self, lfvs, in_lens, out_lens, tc):
        d = self.config.lfv_dim
        padded = np.zeros((len(lfvs), tc, d))
        for i, vec in enumerate(lfvs):
            vec = np.asarray(vec, dtype=np.float64)
            if vec.ndim == 1:
                if vec.shape[0] != d:
                    raise ShapeError("utterance %d: LFV dim %d, expected %d"
                                     % (i, vec.shape[0], d))
                padded[i, :out_lens[i]] = vec
            elif vec.ndim == 2:
                if vec.shape != (in_lens[i], d):
                    raise ShapeError(
                        "utterance %d: per-frame LFVs %r do not match the"
                        " [%d, %d] input" % (i, vec.shape, in_lens[i], d))
                off = self.config.frame_offset(in_lens[i])
                padded[i, :out_lens[i]] = vec[off:off + out_lens[i]]
            else:
                raise ShapeError("LFV must be [D] or [T, D]")
        return padded

    def forward(self, features, lfv=None, train=False):
        """Single-utterance forward; returns a [T', V] log-prob tensor."""
        lfvs = None if lfv is None else [lfv]
        logp, _ = self.forward_batch([np.asarray(features, dtype=np.float64)],
                                     lfvs, train=train)
        return logp

    # --- persistence -------------------------------------------------------

    def state_arrays(self):
        arrays = [(p.name, p.data) for p in self.parameters()]
        arrays.append(("bn.running_mean", self.bn.running_mean))
        arrays.append(("bn.running_var", self.bn.running_var))
        return arrays

    def save(self, path):
        storage.write_checkpoint(path, storage.AM_MAGIC,
                                 self.config.to_dict(), self.state_arrays())

    @classmethod
    def load(cls, path):
        cfg_dict, arrays = storage.read_checkpoint(path, storage.AM_MAGIC)
        model = cls(AcousticModelConfig.from_dict(cfg_dict), seed=0)
        stored = dict(arrays)
        expected = [name for name, _ in model.state_arrays()]
        if sorted(stored) != sorted(expected):
            raise FormatError("%s: tensor names do not match the config" % (path,))
        for p in model.parameters():
            if stored[p.name].shape != p.data.shape:
                raise FormatError(
                    "%s: tensor %s has shape %r, expected %r"
                    % (path, p.name, stored[p.name].shape, p.data.shape))
            p.data = stored[p.name].copy()
        model.bn.running_mean = stored["bn.running_mean"].copy()
        model.bn.running_var = stored["bn.running_var"].copy()
        return model
