"""Synthetic training-pair generation for sentences the extractor rejected:
filtered online back-translation, unfiltered nearest-neighbor word
translation, noised source copies, and span-mask noising for denoising
pretraining. Synthetic pairs always train synthetic -> clean.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace

import numpy as np

from .corpus import TaggedSentence
from .model import MASK_ID, UNK_ID, ModelState, translate_batch
from .scoring import MarginConfig, SentenceRepr, build_pools, represent_batch
from .util import bounded_permutation, stable_rng

PROV_SPE = "SPE"
PROV_BT = "BT"
PROV_WT = "WT"


@dataclass(frozen=True)
class SyntheticPair:
    """One training instance. tgt is always clean corpus text; src may be
    synthetic. Direction is carried by src's language tags."""

    src: TaggedSentence
    tgt: tuple[int, ...]
    provenance: str

    def noised(self, noisy_tokens) -> "SyntheticPair":
        return SyntheticPair(
            src=replace(self.src, tokens=tuple(noisy_tokens)),
            tgt=self.tgt,
            provenance=f"N-of-{self.provenance}",
        )


@dataclass(frozen=True)
class NoiseConfig:
    p_delete: float = 0.1
    p_substitute: float = 0.1
    permute_window: int = 3
    filler_id: int = UNK_ID
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.p_delete <= 1 and 0 <= self.p_substitute <= 1):
            raise ValueError("noise probabilities must be in [0, 1]")
        if self.permute_window < 0:
            raise ValueError("permute_window must be >= 0")


@dataclass(frozen=True)
class BartNoiseConfig:
    lam: float = 3.5
    p_mask: float = 0.35
    extra_mask_insertions: int = 1
    permute_segments: bool = True
    mask_id: int = MASK_ID
    seed: int = 0

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be > 0")
        if not 0.0 <= self.p_mask <= 1.0:
            raise ValueError("p_mask must be in [0, 1]")


# ---------------------------------------------------------------------------
# Back-translation (filtered like extraction)
# ---------------------------------------------------------------------------


@dataclass
class BtResult:
    accepted: list[SyntheticPair]
    still_rejected: list[TaggedSentence]
    n_generated: int


def backtranslate(state: ModelState, rejected: list[TaggedSentence],
                  own_side: list[TaggedSentence], own_reprs: list[SentenceRepr],
                  other_reprs: list[SentenceRepr], cfg: MarginConfig,
                  max_out_len: int | None = None) -> BtResult:
    """Back-translate rejected sentences and re-apply the extraction filter.

    `rejected` are sentences of one document side (subset of `own_side`); the
    filter pool is the opposite side's originals plus all back-translations,
    scored against the full own side. A pair (bt(s), s) survives only if it
    is mutual argmax under both representations, exactly like extraction.
    """
    if not rejected:
        return BtResult(accepted=[], still_rejected=[], n_generated=0)
    src_tag, tgt_tag = rejected[0].src_tag, rejected[0].tgt_tag
    outputs = translate_batch(state, [s.tokens for s in rejected], src_tag, tgt_tag,
                              max_out_len)
    bt_sents = [
        TaggedSentence(tokens=tuple(out), src_tag=tgt_tag, tgt_tag=src_tag, origin=s.origin)
        for s, out in zip(rejected, outputs)
    ]
    nonempty = [i for i, b in enumerate(bt_sents) if b.tokens]
    decisions = {}
    if nonempty:
        bt_reprs = represent_batch(state, [bt_sents[i] for i in nonempty])
        synth_reprs = list(other_reprs) + bt_reprs
        pools = build_pools(synth_reprs, own_reprs, cfg)
        own_index = {id(s): i for i, s in enumerate(own_side)}
        n_other = len(other_reprs)
        for pos, i in enumerate(nonempty):
            decisions[i] = pools.decide(n_other + pos, own_index[id(rejected[i])])
    accepted: list[SyntheticPair] = []
    still_rejected: list[TaggedSentence] = []
    for i, s in enumerate(rejected):
        d = decisions.get(i)
        if d is not None and d.accepted:
            accepted.append(SyntheticPair(src=bt_sents[i], tgt=s.tokens, provenance=PROV_BT))
        else:
            still_rejected.append(s)
    return BtResult(accepted=accepted, still_rejected=still_rejected,
                    n_generated=len(rejected))


# ---------------------------------------------------------------------------
# Word translation (never filtered)
# ---------------------------------------------------------------------------


def nearest_token_map(embedding: np.ndarray, source_ids, target_vocab_ids) -> dict[int, int]:
    """Cosine nearest neighbor in the embedding table, restricted to tokens of
    the target language. Ties resolve to the lowest target id."""
    target_ids = sorted(int(t) for t in target_vocab_ids)
    if not target_ids:
        raise ValueError("target vocabulary is empty")
    src = sorted({int(t) for t in source_ids})
    emb = embedding.astype(np.float64)
    tgt_mat = emb[target_ids]
    tgt_norm = np.linalg.norm(tgt_mat, axis=1)
    tgt_norm[tgt_norm == 0] = 1.0
    src_mat = emb[src]
    src_norm = np.linalg.norm(src_mat, axis=1)
    src_norm[src_norm == 0] = 1.0
    cos = (src_mat / src_norm[:, None]) @ (tgt_mat / tgt_norm[:, None]).T
    best = cos.argmax(axis=1)
    return {s: target_ids[b] for s, b in zip(src, best)}


def word_translate(state: ModelState, sentence: TaggedSentence,
                   target_vocab_ids) -> SyntheticPair:
    return word_translate_batch(state, [sentence], target_vocab_ids)[0]


def word_translate_batch(state: ModelState, sentences: list[TaggedSentence],
                         target_vocab_ids) -> list[SyntheticPair]:
    """Token-by-token replacement with the embedding nearest neighbor in the
    target language. Length-preserving, direction synthetic -> clean, and
    never filtered."""
    all_ids = {t for s in sentences for t in s.tokens}
    mapping = nearest_token_map(state.embedding_matrix(), all_ids, target_vocab_ids) \
        if all_ids else {}
    out = []
    for s in sentences:
        wt_tokens = tuple(mapping[t] for t in s.tokens)
        out.append(SyntheticPair(
            src=TaggedSentence(tokens=wt_tokens, src_tag=s.tgt_tag, tgt_tag=s.src_tag,
                               origin=s.origin),
            tgt=s.tokens,
            provenance=PROV_WT,
        ))
    return out


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------


def noise_tokens(tokens, cfg: NoiseConfig, rng: random.Random) -> tuple[int, ...]:
    """Deletion, then filler substitution, then bounded local permutation."""
    kept = [t for t in tokens if rng.random() >= cfg.p_delete]
    if not kept:
        return (cfg.filler_id,)
    subbed = [cfg.filler_id if rng.random() < cfg.p_substitute else t for t in kept]
    order = bounded_permutation(len(subbed), cfg.permute_window, rng)
    return tuple(subbed[i] for i in order)


def add_noise(pair: SyntheticPair, cfg: NoiseConfig,
              rng: random.Random | None = None) -> SyntheticPair:
    """A new pair with a noised copy of the source; the original is retained
    by the caller. Tags are direction metadata and stay untouched."""
    if not pair.src.tokens:
        raise ValueError("cannot noise a pair with an empty source")
    rng = rng if rng is not None else stable_rng(cfg.seed)
    return pair.noised(noise_tokens(pair.src.tokens, cfg, rng))


def _poisson(rng: random.Random, lam: float) -> int:
    # Knuth's method; lam is small (~3.5) so the loop is short.
    limit = math.exp(-lam)
    k, p = 0, 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


def sample_span_lengths(n_tokens: int, cfg: BartNoiseConfig, rng: random.Random) -> list[int]:
    """Poisson(lam) span lengths (zero draws resampled) until the masked-token
    target of round(p_mask * n_tokens) is covered."""
    target = int(round(cfg.p_mask * n_tokens))
    draws: list[int] = []
    total = 0
    while total < target:
        length = 0
        while length == 0:
            length = _poisson(rng, cfg.lam)
        draws.append(length)
        total += length
    return draws


def bart_noise(tokens, cfg: BartNoiseConfig,
               rng: random.Random | None = None) -> tuple[list[int], list[int]]:
    """Span mask + one extra mask insertion + segment permutation.

    Each selected span is replaced by a single mask token (infilling); the
    last span is trimmed so the masked fraction is exactly the target. The
    mask-delimited segments are then shuffled. Returns (noisy, original).
    """
    tokens = [int(t) for t in tokens]
    if not tokens:
        raise ValueError("bart_noise requires at least one token")
    rng = rng if rng is not None else stable_rng(cfg.seed)
    n = len(tokens)
    target = int(round(cfg.p_mask * n))

    segments: list[list[int]]
    if target > 0:
        draws = sample_span_lengths(n, cfg, rng)
        lengths = list(draws)
        lengths[-1] -= sum(draws) - target  # stays >= 1: the loop stops at first overshoot
        k = len(lengths)
        free = n - target
        # Stars-and-bars placement of k ordered spans into the free positions.
        cuts = sorted(rng.sample(range(free + k), k))
        gaps = []
        prev = -1
        for c in cuts:
            gaps.append(c - prev - 1)
            prev = c
        gaps.append(free + k - 1 - prev)
        segments = []
        cursor = 0
        head = tokens[cursor: cursor + gaps[0]]
        cursor += gaps[0]
        segments.append(head)
        for li, g in zip(lengths, gaps[1:]):
            cursor += li  # masked-away span
            segments.append([cfg.mask_id] + tokens[cursor: cursor + g])
            cursor += g
    else:
        segments = [list(tokens)]

    if cfg.permute_segments and len(segments) > 1:
        rng.shuffle(segments)
    noisy = [t for seg in segments for t in seg]
    for _ in range(cfg.extra_mask_insertions):
        pos = rng.randint(0, len(noisy))
        noisy.insert(pos, cfg.mask_id)
    return noisy, tokens
