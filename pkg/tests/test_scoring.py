import numpy as np
import pytest

from selfmt.corpus import TaggedSentence
from selfmt.model import ModelConfig, init_model
from selfmt.scoring import (MarginConfig, PairPools, accept_pairs, build_pools,
                            extract_pairs, margin_matrix, margin_score,
                            represent, represent_batch, SentenceRepr)

from oracles import margin_matrix_oracle, margin_oracle, mutual_argmax_oracle


def make_state(vocab=40, d=16, seed=2):
    return init_model(ModelConfig(vocab_size=vocab, d_model=d, n_heads=2,
                                  n_enc_layers=1, n_dec_layers=1, ff_dim=32,
                                  dropout=0.0, seed=seed))


def ts(tokens, src=5, tgt=6):
    return TaggedSentence(tokens=tuple(tokens), src_tag=src, tgt_tag=tgt)


def pools_from_matrices(x_sw, y_sw, x_se, y_se, k=4):
    cfg = MarginConfig(k=k)
    reprs_x = [SentenceRepr(sw=a, se=b) for a, b in zip(x_sw, x_se)]
    reprs_y = [SentenceRepr(sw=a, se=b) for a, b in zip(y_sw, y_se)]
    return build_pools(reprs_x, reprs_y, cfg)


# ---------------------------------------------------------------------------
# represent
# ---------------------------------------------------------------------------


def test_represent_single_token_equals_embedding_row():
    st = make_state()
    r = represent(st, ts([9]))
    emb = st.embedding_matrix()
    assert np.allclose(r.sw, emb[9], atol=1e-6)


def test_represent_sw_is_permutation_invariant():
    st = make_state()
    r1 = represent(st, ts([7, 8, 9]))
    r2 = represent(st, ts([9, 7, 8]))
    assert np.allclose(r1.sw, r2.sw, atol=1e-6)
    # but the encoder sum is order-sensitive in general
    assert not np.allclose(r1.se, r2.se, atol=1e-6)


def test_represent_excludes_tags():
    st = make_state()
    r1 = represent(st, ts([7, 8], src=5, tgt=6))
    r2 = represent(st, ts([7, 8], src=6, tgt=5))
    assert np.allclose(r1.sw, r2.sw)  # sw ignores tags entirely


def test_represent_se_depends_on_state():
    a = make_state(seed=2)
    b = make_state(seed=3)
    s = ts([7, 8])
    assert not np.allclose(represent(a, s).se, represent(b, s).se)


def test_represent_empty_content_is_zero():
    st = make_state()
    r = represent(st, ts([]))
    assert not r.sw.any() and not r.se.any()


# ---------------------------------------------------------------------------
# margin_score / margin_matrix
# ---------------------------------------------------------------------------


def test_margin_identical_pair_singleton_pools():
    x = np.array([1.0, 2.0, 3.0])
    cfg = MarginConfig(k=1)
    assert margin_score(x, x, pool_x=x[None, :], pool_y=x[None, :], cfg=cfg) == \
        pytest.approx(1.0)


def test_margin_orthogonal_is_zero():
    x = np.array([1.0, 0.0])
    y = np.array([0.0, 1.0])
    pools = np.stack([x, y])
    cfg = MarginConfig(k=2)
    assert margin_score(x, y, pools, pools, cfg) == pytest.approx(0.0, abs=1e-9)


def test_margin_matrix_matches_bruteforce_oracle():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(20, 8))
    y = rng.normal(size=(20, 8))
    cfg = MarginConfig(k=4)
    ours = margin_matrix(x, y, cfg)
    oracle = margin_matrix_oracle([list(r) for r in x], [list(r) for r in y], 4)
    assert np.max(np.abs(ours - np.array(oracle))) < 1e-6


def test_margin_score_agrees_with_matrix_entry():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(7, 5))
    y = rng.normal(size=(9, 5))
    cfg = MarginConfig(k=3)
    m = margin_matrix(x, y, cfg)
    for i in (0, 3, 6):
        for j in (0, 4, 8):
            assert margin_score(x[i], y[j], x, y, cfg) == pytest.approx(m[i, j], abs=1e-9)


def test_margin_empty_pool_errors():
    cfg = MarginConfig()
    with pytest.raises(ValueError):
        margin_matrix(np.zeros((0, 3)), np.ones((2, 3)), cfg)
    with pytest.raises(ValueError):
        margin_score(np.ones(3), np.ones(3), np.zeros((0, 3)), np.ones((1, 3)), cfg)


def test_margin_zero_vector_uses_floor():
    cfg = MarginConfig(k=1)
    x = np.zeros(3)
    y = np.array([1.0, 0.0, 0.0])
    m = margin_matrix(x[None, :], y[None, :], cfg)
    assert m[0, 0] == 0.0


# ---------------------------------------------------------------------------
# acceptance
# ---------------------------------------------------------------------------


def test_accept_matches_bruteforce_all_conditions():
    rng = np.random.default_rng(9)
    for trial in range(30):
        n, m = rng.integers(2, 12, size=2)
        d = int(rng.integers(3, 10))
        x_sw, y_sw = rng.normal(size=(n, d)), rng.normal(size=(m, d))
        x_se, y_se = rng.normal(size=(n, d)), rng.normal(size=(m, d))
        pools = pools_from_matrices(x_sw, y_sw, x_se, y_se)
        ours = {dec.pair for dec in accept_pairs(pools)}
        m_sw = margin_matrix_oracle([list(r) for r in x_sw], [list(r) for r in y_sw], 4)
        m_se = margin_matrix_oracle([list(r) for r in x_se], [list(r) for r in y_se], 4)
        assert ours == mutual_argmax_oracle(m_sw, m_se), f"trial {trial}"


def test_accept_scale_invariance():
    rng = np.random.default_rng(12)
    x_sw, y_sw = rng.normal(size=(8, 6)), rng.normal(size=(9, 6))
    x_se, y_se = rng.normal(size=(8, 6)), rng.normal(size=(9, 6))
    base = {d.pair for d in accept_pairs(pools_from_matrices(x_sw, y_sw, x_se, y_se))}
    scaled = {d.pair for d in accept_pairs(pools_from_matrices(
        3.7 * x_sw, 3.7 * y_sw, 0.2 * x_se, 0.2 * y_se))}
    assert base == scaled


def test_decision_reasons():
    # sw matrices agree on (0,0); se disagrees -> not_mutual_argmax_se
    x_sw = np.array([[1.0, 0.0], [0.0, 1.0]])
    y_sw = np.array([[1.0, 0.0], [0.0, 1.0]])
    x_se = np.array([[1.0, 0.0], [0.0, 1.0]])
    y_se = np.array([[0.0, 1.0], [1.0, 0.0]])  # se prefers the swap
    pools = pools_from_matrices(x_sw, y_sw, x_se, y_se, k=1)
    d = pools.decide(0, 0)
    assert not d.accepted and d.reason == "not_mutual_argmax_se"
    d2 = pools.decide(0, 1)
    assert not d2.accepted and d2.reason == "not_mutual_argmax_sw"


def test_decision_empty_repr_reason():
    x_sw = np.array([[0.0, 0.0], [1.0, 0.0]])
    y_sw = np.array([[1.0, 0.0]])
    x_se = np.array([[0.0, 0.0], [1.0, 0.0]])
    y_se = np.array([[1.0, 0.0]])
    pools = pools_from_matrices(x_sw, y_sw, x_se, y_se, k=1)
    assert pools.decide(0, 0).reason == "empty_repr"


# ---------------------------------------------------------------------------
# extract_pairs
# ---------------------------------------------------------------------------


def test_extract_identity_copies_accept_full_diagonal():
    st = make_state()
    sents_x = [ts([7, 8], 5, 6), ts([9, 10, 11], 5, 6), ts([12], 5, 6)]
    sents_y = [ts([7, 8], 6, 5), ts([9, 10, 11], 6, 5), ts([12], 6, 5)]
    res = extract_pairs(st, sents_x, sents_y, MarginConfig())
    pairs = {d.pair for _, _, d in res.accepted}
    assert pairs == {(0, 0), (1, 1), (2, 2)}
    assert res.rejected_x == [] and res.rejected_y == []


def test_extract_singleton_pool_accepts():
    st = make_state()
    res = extract_pairs(st, [ts([7], 5, 6)], [ts([30], 6, 5)], MarginConfig())
    assert len(res.accepted) == 1
    assert res.accepted[0][2].pair == (0, 0)


def test_extract_rejected_partition():
    st = make_state()
    sents_x = [ts([7 + i, 8 + i], 5, 6) for i in range(6)]
    sents_y = [ts([20 + 2 * i], 6, 5) for i in range(5)]
    res = extract_pairs(st, sents_x, sents_y, MarginConfig())
    used_x = {id(sx) for sx, _, _ in res.accepted}
    assert used_x | {id(s) for s in res.rejected_x} == {id(s) for s in sents_x}
    assert len(used_x) + len(res.rejected_x) == len(sents_x)


def test_extract_empty_side_errors():
    st = make_state()
    with pytest.raises(ValueError):
        extract_pairs(st, [], [ts([7])], MarginConfig())


def test_extract_deterministic():
    st = make_state()
    sents_x = [ts([7 + i, 8], 5, 6) for i in range(5)]
    sents_y = [ts([15 + i], 6, 5) for i in range(5)]
    r1 = extract_pairs(st, sents_x, sents_y, MarginConfig())
    r2 = extract_pairs(st, sents_x, sents_y, MarginConfig())
    assert [d.pair for _, _, d in r1.accepted] == [d.pair for _, _, d in r2.accepted]
    assert [d.scores for _, _, d in r1.accepted] == [d.scores for _, _, d in r2.accepted]
