"""Command-line front end.

Subcommands cover the pipeline stages (data generation, extractor and model
training, decoding, scoring) plus the one-shot experiment driver.  Exit
codes: 0 on success, 1 for usage and configuration mistakes, 2 for runtime
failures.
"""

import argparse
import os
import sys

from .corpus import (build_vocabulary, default_language_specs, filter_corpus,
                     generate_corpus, read_manifest, select_mode,
                     write_corpus_features, write_manifest)
from .errors import ConfigError, LfvAsrError, UsageError
from .experiment import (ExperimentConfig, format_report_table, read_report,
                         run_experiment)
from .layers import AcousticModel, default_model_config
from .lfv import (GRANULARITIES, LfvExtractor, LfvExtractorConfig,
                  extract_corpus_lfvs, read_lfv_file, train_lfv_extractor,
                  write_lfv_file)
from .lm import CharRnnLm, CharRnnLmConfig, train_lm
from .scoring import read_token_tsv, score_corpus, write_score_report, write_token_tsv
from .training import decode_corpus, train_acoustic_model


class _ArgumentError(Exception):
    def __init__(self, message, usage):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    """argparse normally exits with status 2 on bad arguments; command-line
    mistakes are usage errors here, so route them to exit code 1."""

    def error(self, message):
        raise _ArgumentError(message, self.format_usage())


def _load_experiment_config(args):
    if args.config is None:
        return ExperimentConfig()
    return ExperimentConfig.from_file(args.config)


def _ensure_out(args):
    if args.out is None:
        raise UsageError("this command needs --out")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _seed(args, config):
    return args.seed if args.seed is not None else config.seeds[0]


def _cmd_gen_data(args):
    config = _load_experiment_config(args)
    out = _ensure_out(args)
    seed = _seed(args, config)
    specs = default_language_specs(
        num_languages=config.languages, feature_dim=config.feature_dim,
        global_units=config.global_units, inventory_size=config.inventory_size,
        lexicon_size=config.lexicon_size, coloring_scale=config.coloring_scale,
        noise_sigma=config.noise_sigma, seed=config.spec_seed)
    split = generate_corpus(specs, config.train_seconds, config.test_seconds,
                            config.low_seconds, seed=seed)
    train = write_corpus_features(split.train, out)
    test = write_corpus_features(split.test, out)
    low_keys = {(u.id, u.unit_mode) for u in split.low_resource_train}
    low = [u for u in train if (u.id, u.unit_mode) in low_keys]
    write_manifest(os.path.join(out, "train.tsv"), train)
    write_manifest(os.path.join(out, "test.tsv"), test)
    write_manifest(os.path.join(out, "low.tsv"), low)
    print(f"wrote {len(train)} train, {len(low)} low-resource and "
          f"{len(test)} test records to {out}")
    return 0


def _cmd_train_lfv(args):
    config = _load_experiment_config(args)
    out = _ensure_out(args)
    utterances = filter_corpus(read_manifest(args.manifest))
    ex_config = LfvExtractorConfig(
        feature_dim=config.feature_dim, num_languages=config.languages,
        context_window=config.extractor_context,
        hidden_sizes=config.extractor_hidden, bottleneck_dim=config.lfv_dim)
    extractor, accuracy = train_lfv_extractor(
        utterances, ex_config, seed=_seed(args, config),
        epochs=config.extractor_epochs, lr=config.extractor_lr, log_fn=print)
    path = os.path.join(out, "lfv_extractor.ckpt")
    extractor.save(path)
    print(f"saved {path} (held-out frame accuracy {accuracy:.4f})")
    return 0


def _cmd_extract_lfv(args):
    out = _ensure_out(args)
    extractor = LfvExtractor.load(args.extractor)
    utterances = read_manifest(args.manifest)
    codes = extract_corpus_lfvs(extractor, utterances, args.granularity)
    name = "lfvs_" + args.granularity.replace("-", "_") + ".lfv"
    path = os.path.join(out, name)
    write_lfv_file(path, codes)
    print(f"wrote {len(codes)} codes to {path}")
    return 0


def _cmd_train_am(args):
    config = _load_experiment_config(args)
    out = _ensure_out(args)
    adaptation = "none" if args.condition == "baseline" else args.condition
    codes = None
    if adaptation != "none":
        if args.lfvs is None:
            raise UsageError(f"condition {args.condition} needs --lfvs")
        codes = read_lfv_file(args.lfvs)
    utterances = select_mode(filter_corpus(read_manifest(args.manifest)),
                             config.unit_mode)
    vocab = build_vocabulary(config.unit_mode, config.global_units)
    model_config = default_model_config(
        vocab_size=len(vocab), adaptation=adaptation,
        lfv_dim=config.lfv_dim if adaptation != "none" else 0,
        feature_dim=config.feature_dim, hidden=config.hidden,
        modulation_layer=config.modulation_layer)
    model, losses = train_acoustic_model(
        utterances, vocab, model_config, lfvs=codes,
        training_config=config.training_config(), seed=_seed(args, config),
        log_fn=print)
    path = os.path.join(out, f"am_{args.condition}.ckpt")
    model.save(path)
    print(f"saved {path} (final epoch loss {losses[-1]:.4f})")
    return 0


def _cmd_decode(args):
    config = _load_experiment_config(args)
    out = _ensure_out(args)
    model = AcousticModel.load(args.model)
    vocab = build_vocabulary(config.unit_mode, config.global_units)
    if model.config.vocab_size != len(vocab):
        raise UsageError(f"model outputs {model.config.vocab_size} symbols but the "
                         f"{config.unit_mode} vocabulary has {len(vocab)}")
    codes = read_lfv_file(args.lfvs) if args.lfvs is not None else None
    if (model.config.adaptation == "none") != (codes is None):
        raise UsageError("--lfvs must be given exactly for adapted models")
    lm = CharRnnLm.load(args.lm) if args.lm is not None else None
    utterances = select_mode(filter_corpus(read_manifest(args.manifest)),
                             config.unit_mode)
    hyps = decode_corpus(model, utterances, vocab, lfvs=codes, lm=lm,
                         lm_weight=args.lm_weight, beam=args.beam,
                         batch_size=config.batch_size)
    write_token_tsv(os.path.join(out, "hyp.tsv"),
                    [(u.id, u.language, hyps[u.id]) for u in utterances])
    write_token_tsv(os.path.join(out, "ref.tsv"),
                    [(u.id, u.language, u.transcript) for u in utterances])
    print(f"decoded {len(hyps)} utterances into {out}")
    return 0


def _cmd_score(args):
    refs = read_token_tsv(args.ref)
    hyps = {uid: tokens for uid, _, tokens in read_token_tsv(args.hyp)}
    reports = score_corpus(refs, hyps, level=args.level)
    write_score_report(sys.stdout, args.condition, reports)
    return 0


def _cmd_train_lm(args):
    config = _load_experiment_config(args)
    out = _ensure_out(args)
    utterances = select_mode(filter_corpus(read_manifest(args.manifest)),
                             config.unit_mode)
    if args.language is not None:
        utterances = [u for u in utterances if u.language == args.language]
    vocab = build_vocabulary(config.unit_mode, config.global_units)
    sequences = [vocab.encode(u.transcript) for u in utterances]
    lm_config = CharRnnLmConfig(vocab_size=len(vocab),
                                embedding_dim=config.lm_embedding,
                                hidden_size=config.lm_hidden)
    lm, perplexities = train_lm(sequences, lm_config, seed=_seed(args, config),
                                epochs=config.lm_epochs, lr=config.lm_lr,
                                log_fn=print)
    path = os.path.join(out, "lm.ckpt")
    lm.save(path)
    print(f"saved {path} (final train perplexity {perplexities[-1]:.4f})")
    return 0


def _cmd_run_experiment(args):
    config = _load_experiment_config(args)
    if args.seed is not None:
        config.seeds = (args.seed,)
    out = _ensure_out(args)
    report = run_experiment(config, out)
    print(format_report_table(report), end="")
    print(f"report written to {os.path.join(out, 'report.tsv')}")
    return 0


def _cmd_report(args):
    report = read_report(args.report)
    print(format_report_table(report), end="")
    return 0


def build_parser():
    parser = _Parser(prog="lfvasr",
                     description="multilingual CTC training with "
                                 "language-feature-vector adaptation")
    parser.add_argument("--config", help="experiment configuration file")
    parser.add_argument("--seed", type=int, help="override the first configured seed")
    parser.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    sub.add_parser("gen-data", help="synthesize a corpus to --out") \
        .set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-lfv", help="train the language-vector extractor")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_train_lfv)

    p = sub.add_parser("extract-lfv", help="write language codes for a manifest")
    p.add_argument("--extractor", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--granularity", choices=GRANULARITIES, default="utterance-mean")
    p.set_defaults(func=_cmd_extract_lfv)

    p = sub.add_parser("train-am", help="train one acoustic model condition")
    p.add_argument("--manifest", required=True)
    p.add_argument("--condition", choices=("baseline", "append", "modulate"),
                   required=True)
    p.add_argument("--lfvs", help="language code file for adapted conditions")
    p.set_defaults(func=_cmd_train_am)

    p = sub.add_parser("decode", help="decode a manifest with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--lfvs")
    p.add_argument("--lm")
    p.add_argument("--lm-weight", type=float, default=0.0)
    p.add_argument("--beam", type=int, default=1)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("score", help="score hypotheses against references")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--level", choices=("token", "word"), default="token")
    p.add_argument("--condition", default="unnamed")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("train-lm", help="train the fusion language model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--language", help="restrict training to one language")
    p.set_defaults(func=_cmd_train_lm)

    sub.add_parser("run-experiment", help="run the full condition sweep") \
        .set_defaults(func=_cmd_run_experiment)

    p = sub.add_parser("report", help="print the table for a report.tsv")
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _ArgumentError as exc:
        sys.stderr.write(exc.usage)
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except LfvAsrError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except KeyboardInterrupt:
        return 2


if __name__ == "__main__":
    sys.exit(main())
