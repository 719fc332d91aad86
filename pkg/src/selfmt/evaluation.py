"""Corpus BLEU-4 with exponential smoothing and bootstrap confidence
intervals, extraction precision/recall against gold alignments, and summary
report emission.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .synthlang import GoldAlignment

log = logging.getLogger(__name__)

MAX_NGRAM = 4

SUMMARY_COLUMNS = [
    "run_id", "technique", "init", "direction", "epoch_of_best",
    "dev_bleu", "test_bleu", "ci_low", "ci_high", "extraction_p", "extraction_r",
]


@dataclass
class BleuResult:
    score: float
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    sys_len: int
    ref_len: int
    ci_low: float | None = None
    ci_high: float | None = None


@dataclass
class SegmentStats:
    matches: tuple[int, ...]
    totals: tuple[int, ...]
    sys_len: int
    ref_len: int


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def segment_stats(hyp: str, ref: str) -> SegmentStats:
    h = hyp.split()
    r = ref.split()
    matches, totals = [], []
    for n in range(1, MAX_NGRAM + 1):
        hgrams = _ngrams(h, n)
        rgrams = _ngrams(r, n)
        matches.append(sum(min(c, rgrams[g]) for g, c in hgrams.items()))
        totals.append(max(len(h) - n + 1, 0))
    return SegmentStats(matches=tuple(matches), totals=tuple(totals),
                        sys_len=len(h), ref_len=len(r))


def _score_from_stats(stats: list[SegmentStats]) -> BleuResult:
    matches = [sum(s.matches[n] for s in stats) for n in range(MAX_NGRAM)]
    totals = [sum(s.totals[n] for s in stats) for n in range(MAX_NGRAM)]
    sys_len = sum(s.sys_len for s in stats)
    ref_len = sum(s.ref_len for s in stats)

    if sys_len == 0:
        return BleuResult(score=0.0, precisions=(0.0,) * MAX_NGRAM,
                          brevity_penalty=0.0, sys_len=0, ref_len=ref_len)

    # Exponential smoothing: the i-th zero-match order contributes 1/(2^i * total).
    precisions = []
    log_sum, effective = 0.0, 0
    smooth = 1.0
    for n in range(MAX_NGRAM):
        if totals[n] == 0:
            precisions.append(0.0)
            continue
        if matches[n] == 0:
            smooth *= 2.0
            p = 1.0 / (smooth * totals[n])
        else:
            p = matches[n] / totals[n]
        precisions.append(p)
        log_sum += math.log(p)
        effective += 1
    bp = 1.0 if sys_len >= ref_len else math.exp(1.0 - ref_len / sys_len)
    score = 100.0 * bp * math.exp(log_sum / effective) if effective else 0.0
    return BleuResult(score=score, precisions=tuple(precisions), brevity_penalty=bp,
                      sys_len=sys_len, ref_len=ref_len)


def bleu(hyps: list[str], refs: list[str]) -> BleuResult:
    """Corpus-level BLEU-4 on whitespace tokens.

    Zero n-gram match counts are exponentially smoothed; orders with no
    hypothesis n-grams at all are dropped from the geometric mean. Empty
    hypotheses contribute zero matches.
    """
    if len(hyps) != len(refs):
        raise ValueError(f"got {len(hyps)} hypotheses for {len(refs)} references")
    if not hyps:
        raise ValueError("empty corpus")
    return _score_from_stats([segment_stats(h, r) for h, r in zip(hyps, refs)])


def bootstrap_ci(hyps: list[str], refs: list[str], n_resamples: int = 1000,
                 p: float = 95.0, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for corpus BLEU over segment resamples."""
    if n_resamples < 10:
        raise ValueError("n_resamples must be >= 10")
    if len(hyps) != len(refs):
        raise ValueError(f"got {len(hyps)} hypotheses for {len(refs)} references")
    if len(hyps) < 2:
        raise ValueError("bootstrap needs at least 2 segments")
    stats = [segment_stats(h, r) for h, r in zip(hyps, refs)]
    rng = np.random.default_rng(seed)
    n = len(stats)
    scores = np.empty(n_resamples)
    for i in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        scores[i] = _score_from_stats([stats[j] for j in idx]).score
    lo, hi = np.percentile(scores, [(100.0 - p) / 2.0, 100.0 - (100.0 - p) / 2.0])
    return float(lo), float(hi)


@dataclass
class ExtractionPRF:
    precision: float
    recall: float
    f1: float
    n_accepted: int
    n_gold: int


def extraction_prf(accepted, gold: GoldAlignment) -> ExtractionPRF:
    """Precision/recall of accepted (doc_id, src_sent_id, tgt_sent_id) triples
    against the gold alignment. Both empty counts as perfect by convention."""
    accepted_set = {(d, int(i), int(j)) for d, i, j in accepted}
    hits = len(accepted_set & gold.pairs)
    n_acc, n_gold = len(accepted_set), len(gold.pairs)
    if n_acc == 0 and n_gold == 0:
        log.info("extraction_prf: both accepted and gold empty; scoring 1.0 by convention")
        return ExtractionPRF(1.0, 1.0, 1.0, 0, 0)
    precision = hits / n_acc if n_acc else 0.0
    recall = hits / n_gold if n_gold else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return ExtractionPRF(precision, recall, f1, n_acc, n_gold)


def emit_report(summary_rows: list[dict], out_dir) -> tuple[str, str]:
    """Write summary.csv and an aligned summary.txt. Deterministic bytes for
    identical inputs; rows are sorted by (run_id, direction)."""
    for row in summary_rows:
        missing = [c for c in SUMMARY_COLUMNS if c not in row]
        if missing:
            raise ValueError(f"summary row missing columns {missing}: {row}")
    os.makedirs(out_dir, exist_ok=True)
    rows = sorted(summary_rows, key=lambda r: (str(r["run_id"]), str(r["direction"])))

    def fmt(value):
        if isinstance(value, float):
            return f"{value:.4f}"
        return str(value)

    csv_path = os.path.join(out_dir, "summary.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([fmt(row[c]) for c in SUMMARY_COLUMNS])

    txt_path = os.path.join(out_dir, "summary.txt")
    cells = [[fmt(row[c]) for c in SUMMARY_COLUMNS] for row in rows]
    widths = [max(len(SUMMARY_COLUMNS[i]), *(len(r[i]) for r in cells)) if cells
              else len(SUMMARY_COLUMNS[i]) for i in range(len(SUMMARY_COLUMNS))]
    with open(txt_path, "w", encoding="utf-8") as f:
        f.write("  ".join(c.ljust(w) for c, w in zip(SUMMARY_COLUMNS, widths)).rstrip() + "\n")
        for r in cells:
            f.write("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n")
    return csv_path, txt_path
