"""Sentence representations, ratio-margin similarity, and the dual-filter
mutual-argmax acceptance rule used for online pair extraction.

A candidate pair survives only if it is the top-scoring partner in both
language directions and under both sentence representations: the sum of word
embeddings (sw) and the sum of encoder outputs (se).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import TaggedSentence
from .model import ModelState, encode_batch

_EPS = 1e-12

REASON_ACCEPTED = "accepted"
REASON_NOT_SW = "not_mutual_argmax_sw"
REASON_NOT_SE = "not_mutual_argmax_se"
REASON_EMPTY = "empty_repr"


@dataclass(frozen=True)
class MarginConfig:
    k: int = 4
    cosine_floor: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class SentenceRepr:
    """sw: bag of word embeddings; se: bag of encoder outputs (tags excluded)."""

    sw: np.ndarray
    se: np.ndarray


@dataclass(frozen=True)
class AcceptanceDecision:
    pair: tuple[int, int]
    scores: tuple[float, float, float, float]  # sw fwd/bwd, se fwd/bwd
    accepted: bool
    reason: str


def represent(state: ModelState, sentence: TaggedSentence) -> SentenceRepr:
    return represent_batch(state, [sentence])[0]


def represent_batch(state: ModelState, sentences: list[TaggedSentence]) -> list[SentenceRepr]:
    """Both bag representations for each sentence.

    Language tags carry direction metadata, not content, so they are excluded
    from the sw sum and their encoder positions from the se sum. A sentence
    with no content tokens gets zero vectors.
    """
    if not sentences:
        return []
    emb = state.embedding_matrix().astype(np.float64)
    encoded = encode_batch(state, sentences)
    reprs = []
    d = state.config.d_model
    for sent, enc in zip(sentences, encoded):
        if sent.tokens:
            sw = emb[list(sent.tokens)].sum(axis=0)
            se = enc.vectors[2:].astype(np.float64).sum(axis=0)
        else:
            sw = np.zeros(d)
            se = np.zeros(d)
        reprs.append(SentenceRepr(sw=sw, se=se))
    return reprs


def _normalize_rows(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(a, axis=1)
    zero = norms < _EPS
    safe = np.where(zero, 1.0, norms)
    return a / safe[:, None], zero


def cosine_matrix(x: np.ndarray, y: np.ndarray, floor: float = 0.0) -> np.ndarray:
    xn, zx = _normalize_rows(np.asarray(x, dtype=np.float64))
    yn, zy = _normalize_rows(np.asarray(y, dtype=np.float64))
    c = xn @ yn.T
    if zx.any():
        c[zx, :] = floor
    if zy.any():
        c[:, zy] = floor
    return c


def margin_matrix(x: np.ndarray, y: np.ndarray, cfg: MarginConfig) -> np.ndarray:
    """Ratio-margin score for every cross pair.

    score(i, j) = cos(x_i, y_j) / (avg cos of x_i to its k nearest in y / 2
                                   + avg cos of y_j to its k nearest in x / 2),
    with k clamped to each pool size. A vanishing denominator scores 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("margin_matrix requires two non-empty pools")
    c = cosine_matrix(x, y, cfg.cosine_floor)
    k_row = min(cfg.k, y.shape[0])
    k_col = min(cfg.k, x.shape[0])
    row_top = np.partition(c, -k_row, axis=1)[:, -k_row:].sum(axis=1)
    col_top = np.partition(c, -k_col, axis=0)[-k_col:, :].sum(axis=0)
    den = row_top[:, None] / (2.0 * k_row) + col_top[None, :] / (2.0 * k_col)
    return np.where(np.abs(den) > _EPS, c / np.where(np.abs(den) > _EPS, den, 1.0), 0.0)


def margin_score(x: np.ndarray, y: np.ndarray, pool_x: np.ndarray, pool_y: np.ndarray,
                 cfg: MarginConfig) -> float:
    """Ratio margin for a single candidate pair against explicit pools."""
    pool_x = np.asarray(pool_x, dtype=np.float64)
    pool_y = np.asarray(pool_y, dtype=np.float64)
    if pool_x.shape[0] == 0 or pool_y.shape[0] == 0:
        raise ValueError("margin_score requires non-empty pools")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    num = float(cosine_matrix(x[None, :], y[None, :], cfg.cosine_floor)[0, 0])
    to_y = cosine_matrix(x[None, :], pool_y, cfg.cosine_floor)[0]
    to_x = cosine_matrix(y[None, :], pool_x, cfg.cosine_floor)[0]
    k_y = min(cfg.k, pool_y.shape[0])
    k_x = min(cfg.k, pool_x.shape[0])
    den = np.sort(to_y)[-k_y:].sum() / (2.0 * k_y) + np.sort(to_x)[-k_x:].sum() / (2.0 * k_x)
    if abs(den) <= _EPS:
        return 0.0
    return num / den


@dataclass
class PairPools:
    """Margin matrices and argmaxes for one candidate pool pair; reusable for
    per-pair re-checks (back-translation filtering)."""

    m_sw: np.ndarray
    m_se: np.ndarray
    zero_x: np.ndarray
    zero_y: np.ndarray
    row_arg_sw: np.ndarray = field(init=False)
    col_arg_sw: np.ndarray = field(init=False)
    row_arg_se: np.ndarray = field(init=False)
    col_arg_se: np.ndarray = field(init=False)

    def __post_init__(self):
        self.row_arg_sw = self.m_sw.argmax(axis=1)
        self.col_arg_sw = self.m_sw.argmax(axis=0)
        self.row_arg_se = self.m_se.argmax(axis=1)
        self.col_arg_se = self.m_se.argmax(axis=0)

    def decide(self, i: int, j: int) -> AcceptanceDecision:
        scores = (float(self.m_sw[i, j]), float(self.m_sw[i, j]),
                  float(self.m_se[i, j]), float(self.m_se[i, j]))
        if self.zero_x[i] or self.zero_y[j]:
            reason = REASON_EMPTY
        elif not (self.row_arg_sw[i] == j and self.col_arg_sw[j] == i):
            reason = REASON_NOT_SW
        elif not (self.row_arg_se[i] == j and self.col_arg_se[j] == i):
            reason = REASON_NOT_SE
        else:
            reason = REASON_ACCEPTED
        return AcceptanceDecision(pair=(i, j), scores=scores,
                                  accepted=reason == REASON_ACCEPTED, reason=reason)


def build_pools(reprs_x: list[SentenceRepr], reprs_y: list[SentenceRepr],
                cfg: MarginConfig) -> PairPools:
    x_sw = np.stack([r.sw for r in reprs_x])
    y_sw = np.stack([r.sw for r in reprs_y])
    x_se = np.stack([r.se for r in reprs_x])
    y_se = np.stack([r.se for r in reprs_y])
    zero_x = (np.linalg.norm(x_sw, axis=1) < _EPS) | (np.linalg.norm(x_se, axis=1) < _EPS)
    zero_y = (np.linalg.norm(y_sw, axis=1) < _EPS) | (np.linalg.norm(y_se, axis=1) < _EPS)
    return PairPools(
        m_sw=margin_matrix(x_sw, y_sw, cfg),
        m_se=margin_matrix(x_se, y_se, cfg),
        zero_x=zero_x,
        zero_y=zero_y,
    )


def accept_pairs(pools: PairPools) -> list[AcceptanceDecision]:
    """All pairs that are mutual argmax under both representations.

    Ties resolve to the lowest index (argmax first occurrence), so decisions
    are deterministic and independent of pool iteration order.
    """
    accepted = []
    n = pools.m_sw.shape[0]
    for i in range(n):
        j = int(pools.row_arg_sw[i])
        decision = pools.decide(i, j)
        if decision.accepted:
            accepted.append(decision)
    return accepted


@dataclass
class ExtractionResult:
    accepted: list[tuple[TaggedSentence, TaggedSentence, AcceptanceDecision]]
    rejected_x: list[TaggedSentence]
    rejected_y: list[TaggedSentence]
    reprs_x: list[SentenceRepr]
    reprs_y: list[SentenceRepr]
    pools: PairPools


def extract_pairs(state: ModelState, sents_x: list[TaggedSentence],
                  sents_y: list[TaggedSentence], cfg: MarginConfig) -> ExtractionResult:
    """Dual-representation mutual-argmax extraction within one document pair.

    Every sentence not in an accepted pair lands in the rejected list of its
    side, so accepted sources and rejected_x partition the x side.
    """
    if not sents_x or not sents_y:
        raise ValueError("extract_pairs requires non-empty document sides")
    reprs_x = represent_batch(state, sents_x)
    reprs_y = represent_batch(state, sents_y)
    pools = build_pools(reprs_x, reprs_y, cfg)
    decisions = accept_pairs(pools)
    used_x = {d.pair[0] for d in decisions}
    used_y = {d.pair[1] for d in decisions}
    return ExtractionResult(
        accepted=[(sents_x[d.pair[0]], sents_y[d.pair[1]], d) for d in decisions],
        rejected_x=[s for i, s in enumerate(sents_x) if i not in used_x],
        rejected_y=[s for j, s in enumerate(sents_y) if j not in used_y],
        reprs_x=reprs_x,
        reprs_y=reprs_y,
        pools=pools,
    )
