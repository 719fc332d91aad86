"""Initialization providers: CBOW word embeddings with negative sampling,
seeded orthogonal mapping into a shared space, embedding-table assembly, and
(multilingual) denoising-autoencoder pretraining.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .augment import BartNoiseConfig, bart_noise
from .corpus import BpeModel, TaggedSentence
from .model import ModelState, batch_loss, train_step
from .util import stable_rng, stable_torch_seed

log = logging.getLogger(__name__)

MIN_CBOW_SENTENCES = 100
MIN_LEXICON = 20


@dataclass
class EmbeddingSet:
    lang: str
    matrix: np.ndarray            # vocab_size x dim
    counts: np.ndarray            # corpus token frequencies, len vocab_size
    min_count: int
    fingerprint: str = ""

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def trained(self, token_id: int) -> bool:
        return self.counts[token_id] >= self.min_count


@dataclass(frozen=True)
class SeedLexicon:
    """Weak supervision for the bilingual mapping, as token-id pairs."""

    entries: tuple[tuple[int, int], ...]
    source: str = "cipher-gold-sample"

    def __post_init__(self):
        srcs = [a for a, _ in self.entries]
        if len(set(srcs)) != len(srcs):
            raise ValueError("seed lexicon entries must be unique by source token")

    @classmethod
    def from_word_pairs(cls, bpe: BpeModel, word_pairs, source="cipher-gold-sample"):
        """Keep only pairs where both words map to a single BPE token."""
        entries = []
        seen = set()
        for src_word, tgt_word in word_pairs:
            src_ids = bpe.encode(src_word)
            tgt_ids = bpe.encode(tgt_word)
            if len(src_ids) == 1 and len(tgt_ids) == 1 and src_ids[0] not in seen:
                seen.add(src_ids[0])
                entries.append((src_ids[0], tgt_ids[0]))
        return cls(entries=tuple(entries), source=source)


def load_seed_lexicon_tsv(path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line:
                a, b = line.split("\t")
                pairs.append((a, b))
    return pairs


def train_cbow(token_seqs: list[list[int]], vocab_size: int, dim: int,
               window: int = 5, negatives: int = 5, min_count: int = 2,
               epochs: int = 5, lr0: float = 0.05, seed: int = 0,
               lang: str = "", fingerprint: str = "") -> EmbeddingSet:
    """CBOW with negative sampling, single-threaded and deterministic.

    Context vectors are averaged; the input matrix is returned. Tokens below
    min_count keep their random initialization and are flagged untrained.
    """
    if len(token_seqs) < MIN_CBOW_SENTENCES:
        raise ValueError(f"CBOW needs >= {MIN_CBOW_SENTENCES} sentences, got {len(token_seqs)}")
    counts = np.zeros(vocab_size, dtype=np.int64)
    for seq in token_seqs:
        for t in seq:
            counts[t] += 1

    rng = np.random.default_rng(seed)
    w_in = (rng.random((vocab_size, dim)) - 0.5) / dim
    w_out = np.zeros((vocab_size, dim))

    trainable = counts >= min_count
    neg_ids = np.flatnonzero(trainable)
    if neg_ids.size == 0:
        raise ValueError("no token reaches min_count; corpus too small")
    neg_probs = counts[neg_ids].astype(np.float64) ** 0.75
    neg_probs /= neg_probs.sum()

    positions = sum(1 for seq in token_seqs for t in seq if trainable[t])
    total_updates = max(1, positions * epochs)
    done = 0
    for epoch in range(epochs):
        for seq in token_seqs:
            n = len(seq)
            for i, center in enumerate(seq):
                if not trainable[center]:
                    continue
                lr = lr0 * max(1.0 - done / total_updates, 1e-4)
                done += 1
                b = int(rng.integers(1, window + 1))
                ctx = [seq[j] for j in range(max(0, i - b), min(n, i + b + 1))
                       if j != i and trainable[seq[j]]]
                if not ctx:
                    continue
                h = w_in[ctx].mean(axis=0)
                targets = np.empty(negatives + 1, dtype=np.int64)
                targets[0] = center
                targets[1:] = neg_ids[rng.choice(neg_ids.size, size=negatives, p=neg_probs)]
                labels = np.zeros(negatives + 1)
                labels[0] = 1.0
                scores = 1.0 / (1.0 + np.exp(-w_out[targets] @ h))
                grad = (scores - labels) * lr
                h_grad = grad @ w_out[targets]
                w_out[targets] -= np.outer(grad, h)
                w_in[ctx] -= h_grad / len(ctx)
    return EmbeddingSet(lang=lang, matrix=w_in.astype(np.float64), counts=counts,
                        min_count=min_count, fingerprint=fingerprint)


@dataclass
class MappingResult:
    mapped: EmbeddingSet
    rotation: np.ndarray
    orthogonality_residual: float
    rank_deficient: bool


def _solve_rotation(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(x.T @ y)
    return u @ vt


def map_embeddings(src: EmbeddingSet, tgt: EmbeddingSet, lexicon: SeedLexicon,
                   refine: bool = False) -> MappingResult:
    """Seeded orthogonal mapping of src into tgt's space.

    Solves min_W ||X W - Y||_F over orthogonal W via the SVD of X^T Y on the
    lexicon rows, then maps every src row. Rank-deficient seed matrices warn
    and proceed. With refine=True, one extra iteration re-solves W on the
    mutual nearest neighbors induced by the first mapping.
    """
    if len(lexicon.entries) < MIN_LEXICON:
        raise ValueError(f"seed lexicon needs >= {MIN_LEXICON} entries, got {len(lexicon.entries)}")
    if src.dim != tgt.dim:
        raise ValueError(f"dimension mismatch {src.dim} != {tgt.dim}")
    x = np.stack([src.matrix[a] for a, _ in lexicon.entries])
    y = np.stack([tgt.matrix[b] for _, b in lexicon.entries])
    rank_deficient = np.linalg.matrix_rank(x) < src.dim
    if rank_deficient:
        log.warning("seed matrix is rank deficient (%d directions < dim %d); mapping anyway",
                    np.linalg.matrix_rank(x), src.dim)
    w = _solve_rotation(x, y)

    if refine:
        src_ids = np.flatnonzero(src.counts >= src.min_count)
        tgt_ids = np.flatnonzero(tgt.counts >= tgt.min_count)
        if src_ids.size and tgt_ids.size:
            def unit(m):
                n = np.linalg.norm(m, axis=1, keepdims=True)
                return m / np.where(n < 1e-12, 1.0, n)
            sm = unit(src.matrix[src_ids] @ w)
            tm = unit(tgt.matrix[tgt_ids])
            sims = sm @ tm.T
            fwd = sims.argmax(axis=1)
            bwd = sims.argmax(axis=0)
            mutual = [(int(src_ids[i]), int(tgt_ids[j])) for i, j in enumerate(fwd)
                      if bwd[j] == i]
            if len(mutual) >= MIN_LEXICON:
                x2 = np.stack([src.matrix[a] for a, _ in mutual])
                y2 = np.stack([tgt.matrix[b] for _, b in mutual])
                w = _solve_rotation(x2, y2)

    residual = float(np.max(np.abs(w.T @ w - np.eye(src.dim))))
    mapped = EmbeddingSet(lang=src.lang, matrix=src.matrix @ w, counts=src.counts,
                          min_count=src.min_count, fingerprint=src.fingerprint)
    return MappingResult(mapped=mapped, rotation=w,
                         orthogonality_residual=residual, rank_deficient=rank_deficient)


def build_we_init(sets: list[EmbeddingSet], bpe: BpeModel, d_model: int,
                  seed: int = 0) -> tuple[np.ndarray, dict]:
    """Assemble the init embedding table from mapped per-language sets.

    A token takes its vector from the language where its corpus frequency is
    highest (among languages where it reached min_count); tokens unseen
    everywhere, and the specials, keep seeded random rows.
    """
    for s in sets:
        if s.dim != d_model:
            raise ValueError(f"embedding dim {s.dim} != d_model {d_model}")
    vocab_size = len(bpe)
    rng = np.random.default_rng(seed)
    matrix = rng.normal(0.0, d_model ** -0.5, size=(vocab_size, d_model))
    assigned = 0
    per_lang = {s.lang: 0 for s in sets}
    unassigned_ids = []
    for token_id in range(bpe.n_specials, vocab_size):
        best = None
        for s in sets:
            if s.trained(token_id) and (best is None or s.counts[token_id] > best.counts[token_id]):
                best = s
        if best is not None:
            matrix[token_id] = best.matrix[token_id]
            per_lang[best.lang] += 1
            assigned += 1
        else:
            unassigned_ids.append(token_id)
    report = {
        "assigned": assigned,
        "vocab_size": vocab_size,
        "coverage": assigned / vocab_size,
        "per_lang": per_lang,
        "unassigned_ids": unassigned_ids,
    }
    return matrix.astype(np.float32), report


# ---------------------------------------------------------------------------
# Denoising-autoencoder pretraining
# ---------------------------------------------------------------------------


@dataclass
class DaeConfig:
    mode: str                      # "bilingual" | "multilingual"
    languages: list[str]
    epochs: int = 3
    holdout: int = 200             # sentences reserved per split (dev and test)
    bart: BartNoiseConfig = field(default_factory=BartNoiseConfig)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("bilingual", "multilingual"):
            raise ValueError(f"unknown DAE mode {self.mode!r}")
        if self.mode == "bilingual" and len(self.languages) != 2:
            raise ValueError("bilingual DAE requires exactly 2 languages")
        if self.mode == "multilingual" and len(self.languages) < 2:
            raise ValueError("multilingual DAE requires >= 2 languages")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def _downsample_seqs(seqs: list[list[int]], n: int, rng) -> list[list[int]]:
    if n >= len(seqs):
        return list(seqs)
    keep = sorted(rng.sample(range(len(seqs)), n))
    return [seqs[i] for i in keep]


def _dae_instance(tokens, lang_tag: int, bart: BartNoiseConfig, rng,
                  max_len: int) -> tuple[TaggedSentence, tuple[int, ...]] | None:
    noisy, original = bart_noise(tokens, bart, rng)
    if len(noisy) + 2 > max_len or len(original) + 1 > max_len:
        return None
    src = TaggedSentence(tokens=tuple(noisy), src_tag=lang_tag, tgt_tag=lang_tag)
    return src, tuple(original)


def pretrain_dae(state: ModelState, cfg: DaeConfig, mono: dict[str, list[list[int]]],
                 bpe: BpeModel) -> dict:
    """Train the full model to reconstruct originals from span-masked inputs.

    Every language is tagged lang -> lang. The largest corpus is downsampled
    to the largest of the others, so per-language instance counts stay
    balanced. Returns a report with per-language holdout losses, which must
    end below the untrained baseline.
    """
    missing = [l for l in cfg.languages if l not in mono]
    if missing:
        raise ValueError(f"missing monolingual data for {missing}")

    sizes = {l: len(mono[l]) for l in cfg.languages}
    cap = max(sizes.values()) if len(sizes) == 1 else sorted(sizes.values())[-2]
    balanced: dict[str, list[list[int]]] = {}
    for lang in cfg.languages:
        rng = stable_rng(cfg.seed, "dae-balance", lang)
        balanced[lang] = _downsample_seqs(mono[lang], min(sizes[lang], cap), rng)

    train_split: dict[str, list[list[int]]] = {}
    dev_split: dict[str, list[list[int]]] = {}
    for lang in cfg.languages:
        seqs = balanced[lang]
        idx = list(range(len(seqs)))
        stable_rng(cfg.seed, "dae-split", lang).shuffle(idx)
        n_hold = min(cfg.holdout, max(0, len(seqs) // 4))
        dev_split[lang] = [seqs[i] for i in idx[:n_hold]]
        train_split[lang] = [seqs[i] for i in idx[2 * n_hold:]]
        if not train_split[lang]:
            raise ValueError(f"no training sentences left for {lang!r} after holdout")

    max_len = state.config.max_len
    batch_size = state.config.batch_size

    def holdout_loss(lang: str) -> float:
        tag_id = bpe.tag_id(lang)
        total, count = 0.0, 0
        batch = []
        for i, seq in enumerate(dev_split[lang]):
            inst = _dae_instance(seq, tag_id, cfg.bart,
                                 stable_rng(cfg.seed, "dae-dev", lang, i), max_len)
            if inst is not None:
                batch.append(inst)
            if len(batch) == batch_size:
                _, per = batch_loss(state, batch)
                total += float(per.sum())
                count += len(batch)
                batch = []
        if batch:
            _, per = batch_loss(state, batch)
            total += float(per.sum())
            count += len(batch)
        return total / max(count, 1)

    state.net.eval()
    with torch.no_grad():
        baseline = {lang: holdout_loss(lang) for lang in cfg.languages}

    torch.manual_seed(stable_torch_seed(cfg.seed, "dae-loop"))
    order = [(lang, i) for lang in cfg.languages for i in range(len(train_split[lang]))]
    n_instances = {lang: 0 for lang in cfg.languages}
    losses = []
    for epoch in range(cfg.epochs):
        epoch_order = list(order)
        stable_rng(cfg.seed, "dae-order", epoch).shuffle(epoch_order)
        batch = []
        for lang, i in epoch_order:
            inst = _dae_instance(train_split[lang][i], bpe.tag_id(lang), cfg.bart,
                                 stable_rng(cfg.seed, "dae-noise", epoch, lang, i), max_len)
            if inst is None:
                continue
            batch.append(inst)
            n_instances[lang] += 1
            if len(batch) == batch_size:
                losses.append(train_step(state, batch).loss)
                batch = []
        if batch:
            losses.append(train_step(state, batch).loss)

    state.net.eval()
    with torch.no_grad():
        final = {lang: holdout_loss(lang) for lang in cfg.languages}
    for lang in cfg.languages:
        if final[lang] >= baseline[lang]:
            raise RuntimeError(
                f"DAE pretraining did not improve holdout loss for {lang!r} "
                f"({final[lang]:.4f} >= {baseline[lang]:.4f})")
    return {
        "baseline_loss": baseline,
        "final_loss": final,
        "mean_train_loss": float(np.mean(losses)) if losses else float("nan"),
        "instances": n_instances,
    }
