"""Edit-distance scoring with substitution/insertion/deletion counts,
token-to-word regrouping at boundary markers, and per-language corpus
aggregation, plus the tab-separated hypothesis/reference exchange format.
"""

from dataclasses import dataclass
import warnings

import numpy as np

from .corpus import WORD_BOUNDARY
from .errors import FormatError, UsageError


@dataclass
class ScoreReport:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    reference_length: int = 0
    empty_reference: bool = False   # a rate was formed against an empty reference

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self):
        return self.errors / max(1, self.reference_length)

    def add(self, other):
        self.substitutions += other.substitutions
        self.insertions += other.insertions
        self.deletions += other.deletions
        self.reference_length += other.reference_length
        self.empty_reference = self.empty_reference or other.empty_reference


def edit_distance(reference, hypothesis):
    """Levenshtein alignment with a deterministic backtrace.

    Equal-cost steps prefer match, then substitution, then deletion, then
    insertion, so the S/I/D split is reproducible.  An empty reference
    against a non-empty hypothesis is flagged; its rate divides by 1.
    """
    ref = list(reference)
    hyp = list(hypothesis)
    r, h = len(ref), len(hyp)
    d = np.zeros((r + 1, h + 1), dtype=np.int64)
    d[:, 0] = np.arange(r + 1)
    d[0, :] = np.arange(h + 1)
    for i in range(1, r + 1):
        for j in range(1, h + 1):
            same = ref[i - 1] == hyp[j - 1]
            d[i, j] = min(d[i - 1, j - 1] + (0 if same else 1),
                          d[i - 1, j] + 1,
                          d[i, j - 1] + 1)
    subs = dels = ins = 0
    i, j = r, h
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and d[i, j] == d[i - 1, j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + 1:
            subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return ScoreReport(substitutions=subs, insertions=ins, deletions=dels,
                       reference_length=r, empty_reference=(r == 0 and h > 0))


def tokens_to_words(tokens, boundary=WORD_BOUNDARY):
    """Join unit tokens into word strings at boundary markers; stray
    boundaries producing empty words are dropped."""
    words = []
    current = []
    for tok in tokens:
        if tok == boundary:
            if current:
                words.append("".join(current))
                current = []
        else:
            current.append(tok)
    if current:
        words.append("".join(current))
    return tuple(words)


def score_corpus(references, hypotheses, level="token"):
    """Aggregate error rates per language and overall.

    references holds (id, language, tokens) triples; hypotheses maps id to
    token sequences.  A missing hypothesis counts as deleting the whole
    reference and emits a warning.  At word level both sides are regrouped
    at the boundary marker first.  Returns {language: ScoreReport} with an
    extra "all" entry.
    """
    if level not in ("token", "word"):
        raise UsageError(f"unknown scoring level {level!r}")
    reports = {}
    overall = ScoreReport()
    for uid, language, ref_tokens in references:
        ref = list(ref_tokens)
        if level == "word":
            ref = list(tokens_to_words(ref))
        if uid in hypotheses:
            hyp = list(hypotheses[uid])
            if level == "word":
                hyp = list(tokens_to_words(hyp))
            report = edit_distance(ref, hyp)
        else:
            warnings.warn(f"no hypothesis for {uid}; scoring as all deletions")
            report = ScoreReport(deletions=len(ref), reference_length=len(ref))
        reports.setdefault(language, ScoreReport()).add(report)
        overall.add(report)
    reports["all"] = overall
    return reports


def write_token_tsv(path, rows):
    """Hypothesis/reference exchange lines: id, language, joined tokens."""
    with open(path, "w", encoding="utf-8") as fh:
        for uid, language, tokens in rows:
            fh.write(f"{uid}\t{language}\t{' '.join(tokens)}\n")


def read_token_tsv(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 columns, got {len(cols)}")
            uid, language, joined = cols
            rows.append((uid, language, tuple(joined.split(" ")) if joined else ()))
    return rows


def write_score_report(fh, condition, reports):
    """Tab-separated scoring rows: condition, language, S, I, D, N, rate."""
    for language in sorted(reports):
        rep = reports[language]
        fh.write("\t".join([
            condition, language,
            str(rep.substitutions), str(rep.insertions), str(rep.deletions),
            str(rep.reference_length), f"{rep.rate:.4f}",
        ]) + "\n")
