"""Synthetic multilingual speech corpus: language definitions, utterance
generation, filtering and batching rules, and the feature/manifest file
formats shared by the command-line tools.

Each synthetic language draws its unit inventory from a shared global pool,
so inventories overlap across languages while per-language colouring shifts
the acoustics.  Every physical utterance is emitted twice, once with a
grapheme transcript and once with a phone transcript, sharing the same
feature matrix.
"""

from dataclasses import dataclass, field, replace
import os
import string
import struct

import numpy as np

from .errors import ConfigError, FormatError, TruncationError, UsageError

FRAME_RATE = 100          # feature frames per second
WORD_BOUNDARY = "|"
MIN_DURATION_S = 1.0      # filter floor, utterances strictly below are dropped
MAX_TRANSCRIPT_CHARS = 639
FEATURE_MAGIC = b"MFCB"
FEATURE_VERSION = 1

# Grapheme pool the per-language spelling maps draw from.  Index i spells
# global unit i in at least one language, but each language permutes freely.
_GRAPHEME_POOL = string.ascii_lowercase + string.ascii_uppercase


@dataclass
class Utterance:
    id: str
    language: str
    features: np.ndarray          # [T, F] float64
    transcript: tuple             # unit tokens, word boundaries included
    unit_mode: str                # "grapheme" or "phone"
    duration_s: float
    noise: bool = False
    feature_path: str = ""        # relative path once written to disk

    @property
    def frame_count(self):
        return int(self.features.shape[0])

    @property
    def transcript_chars(self):
        return len(" ".join(self.transcript))


@dataclass
class SyntheticLanguageSpec:
    """Generative definition of one synthetic language.

    units are indices into the shared prototype table; transitions is a
    stochastic matrix over the local inventory used to build the lexicon.
    """

    name: str
    units: tuple                  # global unit ids, local index -> global id
    prototypes: np.ndarray        # [num_global_units, F], shared across languages
    coloring: np.ndarray          # [F] additive per-language offset
    transitions: np.ndarray       # [n_local, n_local] row-stochastic
    initial: np.ndarray           # [n_local] distribution over word-initial units
    lexicon: tuple                # words, each a tuple of global unit ids
    spelling: dict                # global unit id -> single grapheme
    duration_frames: tuple = (4, 7)   # inclusive range of frames per unit
    noise_sigma: float = 0.35

    def __post_init__(self):
        n = len(self.units)
        if self.transitions.shape != (n, n):
            raise ConfigError("transition matrix must be square over the inventory")
        if not np.allclose(self.transitions.sum(axis=1), 1.0, atol=1e-9):
            raise ConfigError(f"transition rows of {self.name} must sum to 1")
        if not np.isclose(self.initial.sum(), 1.0, atol=1e-9):
            raise ConfigError(f"initial distribution of {self.name} must sum to 1")
        for word in self.lexicon:
            for u in word:
                if u not in self.units:
                    raise ConfigError(f"lexicon of {self.name} uses unit {u} outside its inventory")
        missing = [u for u in self.units if u not in self.spelling]
        if missing:
            raise ConfigError(f"spelling map of {self.name} misses units {missing}")


@dataclass
class CorpusSplit:
    train: list
    test: list
    low_resource_train: list = field(default_factory=list)


def default_language_specs(num_languages=4, feature_dim=12, global_units=40,
                           inventory_size=16, lexicon_size=25, word_length=(2, 4),
                           coloring_scale=0.5, noise_sigma=0.35,
                           duration_frames=(4, 7), seed=0):
    """Build a family of overlapping synthetic languages.

    Inventories are circular windows over the global unit pool with stride
    global_units // num_languages, so each language shares units with its
    neighbours.  Prototypes and colourings are drawn once from seed.
    """
    if num_languages < 1:
        raise ConfigError("need at least one language")
    if inventory_size > global_units:
        raise ConfigError("inventory cannot exceed the global unit pool")
    if global_units > len(_GRAPHEME_POOL):
        raise ConfigError(f"at most {len(_GRAPHEME_POOL)} global units supported")
    if num_languages > 1 and global_units // num_languages >= inventory_size:
        raise ConfigError("inventories would be disjoint; shrink the stride or grow them")

    proto_rng = np.random.default_rng([seed, 0x50])
    prototypes = proto_rng.normal(0.0, 1.0, size=(global_units, feature_dim))

    specs = []
    stride = global_units // num_languages
    for lang in range(num_languages):
        rng = np.random.default_rng([seed, 0x51, lang])
        units = tuple((lang * stride + k) % global_units for k in range(inventory_size))

        coloring = rng.normal(0.0, 1.0, size=feature_dim)
        coloring *= coloring_scale / max(np.linalg.norm(coloring) / np.sqrt(feature_dim), 1e-12)

        transitions = rng.dirichlet(np.full(inventory_size, 0.4), size=inventory_size)
        initial = rng.dirichlet(np.full(inventory_size, 0.8))

        lexicon = []
        seen = set()
        while len(lexicon) < lexicon_size:
            length = int(rng.integers(word_length[0], word_length[1] + 1))
            local = int(rng.choice(inventory_size, p=initial))
            word = [units[local]]
            for _ in range(length - 1):
                local = int(rng.choice(inventory_size, p=transitions[local]))
                word.append(units[local])
            word = tuple(word)
            if word not in seen:
                seen.add(word)
                lexicon.append(word)

        graphemes = rng.permutation(global_units)
        spelling = {u: _GRAPHEME_POOL[int(graphemes[u])] for u in units}

        specs.append(SyntheticLanguageSpec(
            name=f"lang{lang}",
            units=units,
            prototypes=prototypes,
            coloring=coloring,
            transitions=transitions,
            initial=initial,
            lexicon=tuple(lexicon),
            spelling=spelling,
            duration_frames=tuple(duration_frames),
            noise_sigma=noise_sigma,
        ))
    return specs


def phone_token(unit):
    return f"p{unit:02d}"


def _word_tokens(word, spec, unit_mode):
    if unit_mode == "phone":
        return [phone_token(u) for u in word]
    return [spec.spelling[u] for u in word]


def _transcript(words, spec, unit_mode):
    tokens = []
    for i, word in enumerate(words):
        if i:
            tokens.append(WORD_BOUNDARY)
        tokens.extend(_word_tokens(word, spec, unit_mode))
    return tuple(tokens)


def _synthesize(spec, units, unit_frames, rng):
    """Render a unit sequence with presampled per-unit frame counts."""
    frames = []
    for u, n in zip(units, unit_frames):
        base = spec.prototypes[u] + spec.coloring
        frames.append(base + rng.normal(0.0, spec.noise_sigma, size=(n, base.shape[0])))
    return np.concatenate(frames, axis=0)


def _generate_language_split(spec, lang_index, split_index, seconds, seed,
                             min_words=3):
    """Utterance pairs (grapheme + phone) for one language and split."""
    rng = np.random.default_rng([seed, 0x60, lang_index, split_index])
    if not spec.lexicon:
        raise ConfigError(f"language {spec.name} has an empty lexicon")
    utterances = []
    total = 0.0
    index = 0
    while total < seconds:
        # Frame counts are sampled before synthesis so the target length is
        # met exactly and no utterance can fall under the duration filter.
        target_frames = int(rng.uniform(1.3, 2.6) * FRAME_RATE)
        words = []
        units = []
        unit_frames = []
        while sum(unit_frames) < target_frames or len(words) < min_words:
            word = spec.lexicon[int(rng.integers(len(spec.lexicon)))]
            words.append(word)
            units.extend(word)
            unit_frames.extend(int(n) for n in rng.integers(
                spec.duration_frames[0], spec.duration_frames[1] + 1, size=len(word)))
        features = _synthesize(spec, units, unit_frames, rng)
        duration_s = features.shape[0] / FRAME_RATE
        uid = f"{spec.name}-s{split_index}-{index:04d}"
        for unit_mode in ("grapheme", "phone"):
            utterances.append(Utterance(
                id=uid,
                language=spec.name,
                features=features,
                transcript=_transcript(words, spec, unit_mode),
                unit_mode=unit_mode,
                duration_s=duration_s,
                noise=False,
            ))
        total += duration_s
        index += 1
    return utterances


def generate_corpus(specs, train_seconds, test_seconds, low_seconds, seed=0):
    """Deterministically sample a CorpusSplit from language specs.

    Every utterance appears twice in each split, once per unit mode, sharing
    one feature matrix.  The low-resource set is a per-language prefix of the
    training set, so low_resource_train is a subset of train.
    """
    if not specs:
        raise ConfigError("no language specs given")
    if low_seconds > train_seconds:
        raise ConfigError("low-resource budget exceeds the training budget")
    train, test, low = [], [], []
    for lang_index, spec in enumerate(specs):
        lang_train = _generate_language_split(spec, lang_index, 0, train_seconds, seed)
        lang_test = _generate_language_split(spec, lang_index, 1, test_seconds, seed)
        train.extend(lang_train)
        test.extend(lang_test)
        taken = 0.0
        for utt in lang_train:
            if utt.unit_mode == "grapheme":
                if taken >= low_seconds:
                    break
                taken += utt.duration_s
            low.append(utt)
    return CorpusSplit(train=train, test=test, low_resource_train=low)


def select_mode(utterances, unit_mode):
    if unit_mode not in ("grapheme", "phone"):
        raise UsageError(f"unknown unit mode {unit_mode!r}")
    return [u for u in utterances if u.unit_mode == unit_mode]


def filter_corpus(utterances):
    """Drop utterances that are too short, too long to transcribe, or noise.

    Keeps relative order; running it twice returns the same list.
    """
    kept = []
    for utt in utterances:
        if utt.duration_s < MIN_DURATION_S:
            continue
        if utt.transcript_chars > MAX_TRANSCRIPT_CHARS:
            continue
        if utt.noise:
            continue
        kept.append(utt)
    return kept


def sort_and_batch(utterances, batch_size):
    """Stable ascending sort by frame count (ties by id), then fixed batches.

    The final batch may be short; batches are contiguous runs of the sorted
    order so padded length stays close to the true lengths.
    """
    if batch_size < 1:
        raise UsageError("batch size must be at least 1")
    ordered = sorted(utterances, key=lambda u: (u.frame_count, u.id))
    return [ordered[i:i + batch_size] for i in range(0, len(ordered), batch_size)]


class Vocabulary:
    """Token table for one unit mode.  Id 0 is always the blank symbol."""

    def __init__(self, tokens):
        if tokens[0] != "<b>":
            raise UsageError("vocabulary must start with the blank token <b>")
        if len(set(tokens)) != len(tokens):
            raise UsageError("duplicate tokens in vocabulary")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    @property
    def blank(self):
        return 0

    def encode(self, tokens):
        try:
            return [self.index[t] for t in tokens]
        except KeyError as exc:
            raise UsageError(f"token {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids):
        return tuple(self.tokens[i] for i in ids)


def build_vocabulary(unit_mode, global_units=40):
    """Fixed global vocabulary so ids are stable across corpora and runs."""
    if unit_mode == "phone":
        body = [phone_token(u) for u in range(global_units)]
    elif unit_mode == "grapheme":
        body = list(_GRAPHEME_POOL[:global_units])
    else:
        raise UsageError(f"unknown unit mode {unit_mode!r}")
    return Vocabulary(["<b>"] + body + [WORD_BOUNDARY])


def write_features(path, features):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
        raise UsageError("feature matrix must be [T, F] with T >= 1 and F >= 1")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, features.shape[0], features.shape[1]))
        fh.write(np.ascontiguousarray(features).astype("<f8").tobytes())


def _read_exact(fh, n, path):
    data = fh.read(n)
    if len(data) != n:
        raise TruncationError(path, n, len(data))
    return data


def read_features(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        version, t, f = struct.unpack("<III", _read_exact(fh, 12, path))
        if version != FEATURE_VERSION:
            raise FormatError(f"{path}: unsupported feature file version {version}")
        if t < 1 or f < 1:
            raise FormatError(f"{path}: feature matrix must have positive shape, got {t}x{f}")
        data = _read_exact(fh, t * f * 8, path)
        extra = fh.read(1)
        if extra:
            raise FormatError(f"{path}: trailing bytes after feature data")
    return np.frombuffer(data, dtype="<f8").reshape(t, f).astype(np.float64)


def write_corpus_features(utterances, directory):
    """Write each distinct feature matrix once; returns updated utterances.

    Records that share an id (the two unit modes) point at the same file.
    """
    os.makedirs(os.path.join(directory, "features"), exist_ok=True)
    written = {}
    out = []
    for utt in utterances:
        if utt.id not in written:
            rel = os.path.join("features", utt.id + ".mfcb")
            write_features(os.path.join(directory, rel), utt.features)
            written[utt.id] = rel
        out.append(replace(utt, feature_path=written[utt.id]))
    return out


def write_manifest(path, utterances):
    """Tab-separated index: id, language, unit mode, duration, noise flag,
    feature path, transcript."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt in utterances:
            if not utt.feature_path:
                raise UsageError(f"utterance {utt.id} has no feature file on disk")
            fh.write("\t".join([
                utt.id,
                utt.language,
                utt.unit_mode,
                f"{utt.duration_s:.2f}",
                "1" if utt.noise else "0",
                utt.feature_path,
                " ".join(utt.transcript),
            ]) + "\n")


def read_manifest(path, load_features=True):
    base = os.path.dirname(os.path.abspath(path))
    utterances = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 7:
                raise FormatError(f"{path}:{lineno}: expected 7 columns, got {len(cols)}")
            uid, language, unit_mode, duration_s, noise, feature_path, transcript = cols
            if unit_mode not in ("grapheme", "phone"):
                raise FormatError(f"{path}:{lineno}: unknown unit mode {unit_mode!r}")
            if noise not in ("0", "1"):
                raise FormatError(f"{path}:{lineno}: noise flag must be 0 or 1")
            try:
                duration = float(duration_s)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad duration {duration_s!r}") from None
            features = np.zeros((0, 0))
            if load_features:
                features = read_features(os.path.join(base, feature_path))
            utterances.append(Utterance(
                id=uid,
                language=language,
                features=features,
                transcript=tuple(transcript.split(" ")) if transcript else (),
                unit_mode=unit_mode,
                duration_s=duration,
                noise=noise == "1",
                feature_path=feature_path,
            ))
    return utterances
