import random

import pytest

from selfmt.evaluation import (SUMMARY_COLUMNS, bleu, bootstrap_ci,
                               emit_report, extraction_prf)
from selfmt.synthlang import GoldAlignment

from oracles import bleu_oracle


def random_case(rng, n_segments):
    vocab = ["ga", "bu", "zo", "meu", "ta", "ri", "po", "ku"]
    hyps, refs = [], []
    for _ in range(n_segments):
        ref = rng.choices(vocab, k=rng.randint(1, 12))
        if rng.random() < 0.2:
            hyp = []
        elif rng.random() < 0.5:
            hyp = list(ref)
            for _ in range(rng.randint(0, 3)):
                if hyp:
                    hyp[rng.randrange(len(hyp))] = rng.choice(vocab)
        else:
            hyp = rng.choices(vocab, k=rng.randint(1, 12))
        hyps.append(" ".join(hyp))
        refs.append(" ".join(ref))
    return hyps, refs


# ---------------------------------------------------------------------------
# bleu
# ---------------------------------------------------------------------------


def test_bleu_identity_is_100():
    hyps = ["ga bu zo meu", "ta ri po"]
    assert bleu(hyps, hyps).score == pytest.approx(100.0)


def test_bleu_no_overlap_is_small_but_positive():
    hyps = ["ga bu zo meu ta"] * 20
    refs = ["ri po ku ri po"] * 20
    result = bleu(hyps, refs)
    assert 0.0 < result.score < 1.0


def test_bleu_empty_hypothesis_contributes_zero():
    result = bleu(["", "ga bu"], ["ga bu", "ga bu"])
    assert 0.0 <= result.score < 100.0


def test_bleu_all_empty_hypotheses_scores_zero():
    assert bleu([""], ["ga bu"]).score == 0.0


def test_bleu_matches_independent_oracle_on_random_cases():
    rng = random.Random(1234)
    for case in range(20):
        hyps, refs = random_case(rng, rng.randint(1, 12))
        ours = bleu(hyps, refs).score
        ref_score = bleu_oracle(hyps, refs)
        assert ours == pytest.approx(ref_score, abs=1e-4), f"case {case}"


def test_bleu_permutation_invariance():
    rng = random.Random(7)
    hyps, refs = random_case(rng, 10)
    base = bleu(hyps, refs).score
    order = list(range(10))
    rng.shuffle(order)
    assert bleu([hyps[i] for i in order], [refs[i] for i in order]).score == \
        pytest.approx(base)


def test_bleu_length_mismatch_and_empty_errors():
    with pytest.raises(ValueError):
        bleu(["a"], ["a", "b"])
    with pytest.raises(ValueError):
        bleu([], [])


def test_bleu_brevity_penalty_applied():
    long_ref = "ga bu zo meu ta ri"
    result = bleu(["ga bu zo"], [long_ref])
    assert result.brevity_penalty < 1.0
    assert result.sys_len == 3 and result.ref_len == 6


# ---------------------------------------------------------------------------
# bootstrap_ci
# ---------------------------------------------------------------------------


def test_bootstrap_identity_interval_is_100_100():
    hyps = ["ga bu zo", "meu ta ri po", "ku ga"]
    lo, hi = bootstrap_ci(hyps, hyps, n_resamples=200, seed=3)
    assert lo == pytest.approx(100.0)
    assert hi == pytest.approx(100.0)


def test_bootstrap_deterministic():
    rng = random.Random(5)
    hyps, refs = random_case(rng, 20)
    a = bootstrap_ci(hyps, refs, n_resamples=300, seed=11)
    b = bootstrap_ci(hyps, refs, n_resamples=300, seed=11)
    assert a == b
    c = bootstrap_ci(hyps, refs, n_resamples=300, seed=12)
    assert a != c


def test_bootstrap_contains_point_estimate_mostly():
    rng = random.Random(9)
    inside = 0
    for trial in range(100):
        hyps, refs = random_case(rng, 25)
        score = bleu(hyps, refs).score
        lo, hi = bootstrap_ci(hyps, refs, n_resamples=200, seed=trial)
        inside += int(lo - 1e-9 <= score <= hi + 1e-9)
    assert inside >= 99


def test_bootstrap_input_validation():
    with pytest.raises(ValueError, match="n_resamples"):
        bootstrap_ci(["a", "b"], ["a", "b"], n_resamples=5)
    with pytest.raises(ValueError, match="2 segments"):
        bootstrap_ci(["a"], ["a"])


# ---------------------------------------------------------------------------
# extraction_prf
# ---------------------------------------------------------------------------


def test_prf_perfect():
    gold = GoldAlignment(pairs={("d0", 0, 0), ("d0", 1, 2)})
    prf = extraction_prf([("d0", 0, 0), ("d0", 1, 2)], gold)
    assert (prf.precision, prf.recall, prf.f1) == (1.0, 1.0, 1.0)


def test_prf_forced_arithmetic():
    gold = GoldAlignment(pairs={("d0", 0, 0), ("d0", 1, 1),
                                ("d1", 0, 0), ("d1", 1, 1)})
    accepted = [("d0", 0, 0), ("d0", 1, 1), ("d0", 2, 3)]
    prf = extraction_prf(accepted, gold)
    assert prf.precision == pytest.approx(2 / 3)
    assert prf.recall == pytest.approx(1 / 2)
    assert prf.f1 == pytest.approx(2 * (2 / 3) * 0.5 / (2 / 3 + 0.5))


def test_prf_both_empty_convention():
    prf = extraction_prf([], GoldAlignment(pairs=set()))
    assert (prf.precision, prf.recall, prf.f1) == (1.0, 1.0, 1.0)


def test_prf_empty_accepted():
    prf = extraction_prf([], GoldAlignment(pairs={("d", 0, 0)}))
    assert prf.precision == 0.0 and prf.recall == 0.0 and prf.f1 == 0.0


def test_prf_bounds():
    rng = random.Random(3)
    for _ in range(20):
        gold_pairs = {(f"d{i}", i, i) for i in range(rng.randint(0, 6))}
        accepted = [(f"d{i}", i, i) for i in range(rng.randint(0, 6))
                    if rng.random() < 0.7]
        prf = extraction_prf(accepted, GoldAlignment(pairs=gold_pairs))
        assert 0.0 <= prf.precision <= 1.0
        assert 0.0 <= prf.recall <= 1.0
        assert 0.0 <= prf.f1 <= 1.0


# ---------------------------------------------------------------------------
# emit_report
# ---------------------------------------------------------------------------


def summary_row(run="r1", direction="a->b", **kw):
    row = {c: 0.0 for c in SUMMARY_COLUMNS}
    row.update(run_id=run, technique="B", init="none", direction=direction,
               epoch_of_best=3)
    row.update(kw)
    return row


def test_emit_report_two_runs(tmp_path):
    rows = [summary_row("r1", "a->b"), summary_row("r1", "b->a"),
            summary_row("r2", "a->b"), summary_row("r2", "b->a")]
    csv_path, txt_path = emit_report(rows, tmp_path)
    lines = open(csv_path).read().splitlines()
    assert lines[0] == ",".join(SUMMARY_COLUMNS)
    assert len(lines) == 5
    assert open(txt_path).read().count("\n") == 5


def test_emit_report_idempotent_bytes(tmp_path):
    rows = [summary_row("r1", "a->b", dev_bleu=12.3456789)]
    p1, _ = emit_report(rows, tmp_path / "one")
    p2, _ = emit_report(rows, tmp_path / "two")
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_emit_report_missing_column_errors(tmp_path):
    row = summary_row()
    del row["dev_bleu"]
    with pytest.raises(ValueError, match="dev_bleu"):
        emit_report([row], tmp_path)
