"""Experiment orchestration: flat-file configuration, the multi-seed
condition sweep (unadapted / appended / modulated), and the report files.

One run trains, per seed, a shared language-vector extractor and one
acoustic model per requested condition on identical batches and the same
initialization scheme, decodes the test split, and collects per-language
token error rates.  Re-running with the same configuration and seed
rewrites report.tsv byte for byte.
"""

from dataclasses import dataclass, field
import io
import os
import statistics

from .corpus import (CorpusSplit, build_vocabulary, default_language_specs,
                     filter_corpus, generate_corpus, read_manifest, select_mode)
from .errors import ConfigError, UsageError
from .layers import default_model_config
from .lfv import LfvExtractorConfig, extract_corpus_lfvs, train_lfv_extractor
from .lm import CharRnnLmConfig, train_lm
from .scoring import score_corpus, write_token_tsv
from .training import TrainingConfig, decode_corpus, train_acoustic_model

CONDITIONS = ("baseline", "append", "modulate")

# Adaptation consumes the code at one of two granularities: appending wants
# a value per frame, modulation one scale vector per utterance.
CONDITION_GRANULARITY = {"append": "per-frame", "modulate": "utterance-mean"}


def parse_config_text(text):
    """Flat ``key = value`` lines; # starts a comment; keys may be dotted."""
    table = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in table:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        table[key] = value.strip()
    return table


def load_config_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _parse_bool(value, key):
    if value in ("true", "false"):
        return value == "true"
    raise ConfigError(f"{key} must be true or false, got {value!r}")


@dataclass
class ExperimentConfig:
    corpus_source: str = "generate"        # "generate" or a manifest directory
    unit_mode: str = "grapheme"
    data_size: str = "full"                # "full" or "low"
    conditions: tuple = CONDITIONS
    seeds: tuple = (1, 2, 3, 4, 5)

    languages: int = 4
    feature_dim: int = 12
    global_units: int = 40
    inventory_size: int = 16
    lexicon_size: int = 25
    coloring_scale: float = 0.5
    noise_sigma: float = 0.35
    spec_seed: int = 0
    train_seconds: float = 180.0
    test_seconds: float = 45.0
    low_seconds: float = 36.0

    hidden: int = 16
    lfv_dim: int = 8
    modulation_layer: int = 2

    extractor_context: int = 4
    extractor_hidden: tuple = (64, 64)
    extractor_epochs: int = 6
    extractor_lr: float = 0.3

    epochs: int = 15
    lr: float = 0.2
    momentum: float = 0.9
    clip_norm: float = 5.0
    batch_size: int = 15
    halving_threshold: float = 0.01

    wer_enabled: bool = False
    wer_language: str = "lang0"
    wer_lm_weight: float = 0.3
    wer_beam: int = 8
    lm_embedding: int = 16
    lm_hidden: int = 128
    lm_epochs: int = 8
    lm_lr: float = 0.5

    def __post_init__(self):
        if self.unit_mode not in ("grapheme", "phone"):
            raise ConfigError(f"unit_mode must be grapheme or phone, got {self.unit_mode!r}")
        if self.data_size not in ("full", "low"):
            raise ConfigError(f"data_size must be full or low, got {self.data_size!r}")
        self.conditions = tuple(self.conditions)
        for c in self.conditions:
            if c not in CONDITIONS:
                raise ConfigError(f"unknown condition {c!r}")
        if not self.conditions:
            raise ConfigError("no conditions requested")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("no seeds requested")
        self.extractor_hidden = tuple(int(h) for h in self.extractor_hidden)

    _KEYS = {
        "corpus.source": ("corpus_source", str),
        "unit_mode": ("unit_mode", str),
        "data_size": ("data_size", str),
        "conditions": ("conditions", "strlist"),
        "seeds": ("seeds", "intlist"),
        "corpus.languages": ("languages", int),
        "corpus.feature_dim": ("feature_dim", int),
        "corpus.global_units": ("global_units", int),
        "corpus.inventory_size": ("inventory_size", int),
        "corpus.lexicon_size": ("lexicon_size", int),
        "corpus.coloring_scale": ("coloring_scale", float),
        "corpus.noise_sigma": ("noise_sigma", float),
        "corpus.spec_seed": ("spec_seed", int),
        "corpus.train_seconds": ("train_seconds", float),
        "corpus.test_seconds": ("test_seconds", float),
        "corpus.low_seconds": ("low_seconds", float),
        "model.hidden": ("hidden", int),
        "model.lfv_dim": ("lfv_dim", int),
        "model.modulation_layer": ("modulation_layer", int),
        "extractor.context": ("extractor_context", int),
        "extractor.hidden": ("extractor_hidden", "intlist"),
        "extractor.epochs": ("extractor_epochs", int),
        "extractor.lr": ("extractor_lr", float),
        "train.epochs": ("epochs", int),
        "train.lr": ("lr", float),
        "train.momentum": ("momentum", float),
        "train.clip_norm": ("clip_norm", float),
        "train.batch_size": ("batch_size", int),
        "train.halving_threshold": ("halving_threshold", float),
        "wer.enabled": ("wer_enabled", bool),
        "wer.language": ("wer_language", str),
        "wer.lm_weight": ("wer_lm_weight", float),
        "wer.beam": ("wer_beam", int),
        "lm.embedding": ("lm_embedding", int),
        "lm.hidden": ("lm_hidden", int),
        "lm.epochs": ("lm_epochs", int),
        "lm.lr": ("lm_lr", float),
    }

    @classmethod
    def from_mapping(cls, table):
        kwargs = {}
        for key, value in table.items():
            if key not in cls._KEYS:
                raise ConfigError(f"unknown configuration key {key!r}")
            attr, kind = cls._KEYS[key]
            try:
                if kind is str:
                    kwargs[attr] = value
                elif kind is int:
                    kwargs[attr] = int(value)
                elif kind is float:
                    kwargs[attr] = float(value)
                elif kind is bool:
                    kwargs[attr] = _parse_bool(value, key)
                elif kind == "strlist":
                    kwargs[attr] = tuple(p.strip() for p in value.split(",") if p.strip())
                elif kind == "intlist":
                    kwargs[attr] = tuple(int(p) for p in value.split(",") if p.strip())
            except ValueError:
                raise ConfigError(f"bad value {value!r} for {key}") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path):
        return cls.from_mapping(load_config_file(path))

    def training_config(self):
        return TrainingConfig(epochs=self.epochs, lr=self.lr, momentum=self.momentum,
                              clip_norm=self.clip_norm, batch_size=self.batch_size,
                              halving_threshold=self.halving_threshold)


@dataclass
class ReportRow:
    condition: str
    unit_mode: str
    data_size: str
    language: str
    seed: int
    ter: float = None      # percent; None marks a failed cell
    wer: float = None      # percent; None when no LM decode ran


@dataclass
class WerRow:
    """Word-level rates for the fusion protocol, at each LM weight."""
    condition: str
    seed: int
    lm_weight: float
    wer: float


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    wer_rows: list = field(default_factory=list)

    def median_ter(self, condition, language="all"):
        values = [r.ter for r in self.rows
                  if r.condition == condition and r.language == language
                  and r.ter is not None]
        return statistics.median(values) if values else None

    def median_wer(self, condition, lm_weight):
        values = [r.wer for r in self.wer_rows
                  if r.condition == condition and r.lm_weight == lm_weight]
        return statistics.median(values) if values else None


def _format_cell(value):
    return "failed" if value is None else repr(value)


def write_report(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("condition\tunit_mode\tdata_size\tlanguage\tseed\tTER\tWER\n")
        for r in report.rows:
            wer = "" if r.wer is None else repr(r.wer)
            fh.write("\t".join([r.condition, r.unit_mode, r.data_size, r.language,
                                str(r.seed), _format_cell(r.ter), wer]) + "\n")


def read_report(path):
    report = ExperimentReport()
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "condition\tunit_mode\tdata_size\tlanguage\tseed\tTER\tWER":
            raise ConfigError(f"{path}: not a report file")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 7:
                raise ConfigError(f"{path}:{lineno}: expected 7 columns")
            condition, unit_mode, data_size, language, seed, ter, wer = cols
            report.rows.append(ReportRow(
                condition=condition, unit_mode=unit_mode, data_size=data_size,
                language=language, seed=int(seed),
                ter=None if ter == "failed" else float(ter),
                wer=None if wer == "" else float(wer)))
    return report


def format_report_table(report):
    """Median-over-seeds token error rates as a condition x language grid."""
    out = io.StringIO()
    rows = [r for r in report.rows if r.ter is not None]
    if not rows:
        out.write("no completed cells\n")
        return out.getvalue()
    unit_mode = rows[0].unit_mode
    data_size = rows[0].data_size
    languages = sorted({r.language for r in rows} - {"all"}) + ["all"]
    conditions = []
    for r in report.rows:
        if r.condition not in conditions:
            conditions.append(r.condition)
    out.write(f"median TER over seeds, percent ({unit_mode} units, {data_size} data)\n")
    header = "condition".ljust(12) + "".join(lang.rjust(10) for lang in languages)
    out.write(header + "\n")
    for condition in conditions:
        line = condition.ljust(12)
        for lang in languages:
            med = report.median_ter(condition, lang)
            line += ("failed".rjust(10) if med is None else f"{med:10.2f}")
        out.write(line + "\n")
    if report.wer_rows:
        out.write("\nword error rates, median over seeds\n")
        weights = sorted({w.lm_weight for w in report.wer_rows})
        out.write("condition".ljust(12)
                  + "".join(f"lm={w:g}".rjust(12) for w in weights) + "\n")
        for condition in conditions:
            line = condition.ljust(12)
            for w in weights:
                med = report.median_wer(condition, w)
                line += ("".rjust(12) if med is None else f"{med:12.2f}")
            out.write(line + "\n")
    return out.getvalue()


def _load_manifest_corpus(directory):
    paths = {name: os.path.join(directory, f"{name}.tsv")
             for name in ("train", "test", "low")}
    for name, path in paths.items():
        if not os.path.exists(path):
            raise UsageError(f"manifest directory misses {name}.tsv: {path}")
    return CorpusSplit(train=read_manifest(paths["train"]),
                       test=read_manifest(paths["test"]),
                       low_resource_train=read_manifest(paths["low"]))


def _prepare_corpus(config, seed):
    if config.corpus_source == "generate":
        specs = default_language_specs(
            num_languages=config.languages, feature_dim=config.feature_dim,
            global_units=config.global_units, inventory_size=config.inventory_size,
            lexicon_size=config.lexicon_size, coloring_scale=config.coloring_scale,
            noise_sigma=config.noise_sigma, seed=config.spec_seed)
        split = generate_corpus(specs, config.train_seconds, config.test_seconds,
                                config.low_seconds, seed=seed)
    else:
        split = _load_manifest_corpus(config.corpus_source)
    train_pool = split.low_resource_train if config.data_size == "low" else split.train
    return filter_corpus(train_pool), filter_corpus(split.test)


def run_experiment(config, out_dir, log_fn=None):
    """Full condition sweep; writes report.tsv, report.txt, train.log and the
    hypothesis/reference files under out_dir, and returns the report.

    A failure in one (seed, condition) cell is recorded as failed and the
    sweep continues; a corpus or extractor failure fails all of that seed's
    cells.
    """
    os.makedirs(out_dir, exist_ok=True)
    log_lines = []

    def log(message):
        log_lines.append(message)
        if log_fn is not None:
            log_fn(message)

    report = ExperimentReport()
    vocab = build_vocabulary(config.unit_mode, config.global_units)
    needs_lfv = any(c != "baseline" for c in config.conditions)

    for seed in config.seeds:
        log(f"seed={seed} preparing corpus")
        try:
            train_pool, test_pool = _prepare_corpus(config, seed)
            am_train = select_mode(train_pool, config.unit_mode)
            am_test = select_mode(test_pool, config.unit_mode)
            if not am_train or not am_test:
                raise UsageError("corpus has no utterances in the requested unit mode")

            lfv_codes = {}
            if needs_lfv:
                ex_config = LfvExtractorConfig(
                    feature_dim=config.feature_dim,
                    num_languages=config.languages,
                    context_window=config.extractor_context,
                    hidden_sizes=config.extractor_hidden,
                    bottleneck_dim=config.lfv_dim)
                extractor, held_acc = train_lfv_extractor(
                    train_pool, ex_config, seed=seed,
                    epochs=config.extractor_epochs, lr=config.extractor_lr,
                    log_fn=lambda m: log(f"seed={seed} {m}"))
                log(f"seed={seed} extractor held-out accuracy {held_acc:.4f}")
                everything = am_train + am_test
                for granularity in set(CONDITION_GRANULARITY[c]
                                       for c in config.conditions if c != "baseline"):
                    lfv_codes[granularity] = extract_corpus_lfvs(
                        extractor, everything, granularity)
        except Exception as exc:   # noqa: BLE001 - cell bookkeeping, then continue
            log(f"seed={seed} corpus/extractor stage failed: {exc}")
            for condition in config.conditions:
                report.rows.append(ReportRow(condition, config.unit_mode,
                                             config.data_size, "all", seed))
            continue

        refs = [(u.id, u.language, u.transcript) for u in am_test]
        write_token_tsv(os.path.join(out_dir, f"ref_seed{seed}.tsv"), refs)
        languages = sorted({u.language for u in am_test})

        lm_cache = {}
        for condition in config.conditions:
            log(f"seed={seed} condition={condition} training")
            try:
                adaptation = "none" if condition == "baseline" else condition
                model_config = default_model_config(
                    vocab_size=len(vocab), adaptation=adaptation,
                    lfv_dim=config.lfv_dim if adaptation != "none" else 0,
                    feature_dim=config.feature_dim, hidden=config.hidden,
                    modulation_layer=config.modulation_layer)
                codes = (None if adaptation == "none"
                         else lfv_codes[CONDITION_GRANULARITY[condition]])
                model, _ = train_acoustic_model(
                    am_train, vocab, model_config, lfvs=codes,
                    training_config=config.training_config(), seed=seed,
                    log_fn=lambda m: log(f"seed={seed} condition={condition} {m}"))
                hyps = decode_corpus(model, am_test, vocab, lfvs=codes,
                                     batch_size=config.batch_size)
                write_token_tsv(os.path.join(out_dir, f"hyp_seed{seed}_{condition}.tsv"),
                                [(u.id, u.language, hyps[u.id]) for u in am_test])
                scores = score_corpus(refs, hyps, level="token")
                for language in languages + ["all"]:
                    rate = scores[language].rate * 100.0 if language in scores else None
                    report.rows.append(ReportRow(condition, config.unit_mode,
                                                 config.data_size, language, seed,
                                                 ter=rate))
                    if rate is not None:
                        log(f"seed={seed} condition={condition} "
                            f"language={language} TER={rate:.2f}")

                if config.wer_enabled:
                    _wer_stage(config, seed, condition, model, vocab, codes,
                               am_train, am_test, refs, hyps, lm_cache,
                               report, out_dir, log)
            except Exception as exc:   # noqa: BLE001 - record and move on
                log(f"seed={seed} condition={condition} failed: {exc}")
                for language in languages + ["all"]:
                    report.rows.append(ReportRow(condition, config.unit_mode,
                                                 config.data_size, language, seed))

    write_report(report, os.path.join(out_dir, "report.tsv"))
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_report_table(report))
    with open(os.path.join(out_dir, "train.log"), "w", encoding="utf-8") as fh:
        for line in log_lines:
            fh.write(line + "\n")
    return report


def _wer_stage(config, seed, condition, model, vocab, codes, am_train, am_test,
               refs, greedy_hyps, lm_cache, report, out_dir, log):
    """Word-level protocol on one language: LM-fused decoding against the
    unfused hypotheses."""
    language = config.wer_language
    subset = [u for u in am_test if u.language == language]
    if not subset:
        raise UsageError(f"wer language {language!r} absent from the test split")
    subset_refs = [(u.id, u.language, u.transcript) for u in subset]

    if seed not in lm_cache:
        sequences = [vocab.encode(u.transcript) for u in am_train
                     if u.language == language]
        lm_config = CharRnnLmConfig(vocab_size=len(vocab),
                                    embedding_dim=config.lm_embedding,
                                    hidden_size=config.lm_hidden)
        lm, ppl = train_lm(sequences, lm_config, seed=seed,
                           epochs=config.lm_epochs, lr=config.lm_lr,
                           log_fn=lambda m: log(f"seed={seed} {m}"))
        log(f"seed={seed} lm final perplexity {ppl[-1]:.4f}")
        lm_cache[seed] = lm
    lm = lm_cache[seed]

    plain = score_corpus(subset_refs, greedy_hyps, level="word")
    report.wer_rows.append(WerRow(condition, seed, 0.0, plain["all"].rate * 100.0))

    fused_hyps = decode_corpus(model, subset, vocab, lfvs=codes, lm=lm,
                               lm_weight=config.wer_lm_weight, beam=config.wer_beam,
                               batch_size=config.batch_size)
    write_token_tsv(os.path.join(out_dir, f"hyp_seed{seed}_{condition}_lm.tsv"),
                    [(u.id, u.language, fused_hyps[u.id]) for u in subset])
    fused = score_corpus(subset_refs, fused_hyps, level="word")
    fused_rate = fused["all"].rate * 100.0
    report.wer_rows.append(WerRow(condition, seed, config.wer_lm_weight, fused_rate))
    log(f"seed={seed} condition={condition} wer[lm=0]={plain['all'].rate * 100.0:.2f} "
        f"wer[lm={config.wer_lm_weight:g}]={fused_rate:.2f}")

    for row in report.rows:
        if (row.condition == condition and row.seed == seed
                and row.language == language and row.ter is not None):
            row.wer = fused_rate
