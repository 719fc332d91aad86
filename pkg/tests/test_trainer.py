import json
import os

import numpy as np
import pytest

from selfmt import augment, scoring
from selfmt.corpus import RawSentence, train_bpe
from selfmt.model import ModelConfig, init_model
from selfmt.scoring import MarginConfig
from selfmt.synthlang import GoldAlignment, SuiteProfile, gen_base_corpus, gen_suite
from selfmt.trainer import (ConfigError, DevItem, DocPair, PairData,
                            TechniqueSet, TrainConfig, TrainData, TrainResult,
                            direction_key, finetune, load_suite_data,
                            mine_corpus, prepare_pair_data, read_stats_csv,
                            run_experiment, train, write_stats_csv)
from selfmt.corpus import load_corpus, tag


MICRO = SuiteProfile("micro", n_docs=30, sents_per_doc=(3, 4), len_range=(3, 7),
                     vocab_size=60, parallel_fraction=0.5, swap_window=1,
                     mono_sents=150, dev_size=12, test_size=12, lexicon_size=40)


def micro_model_cfg(vocab, seed=0):
    return ModelConfig(vocab_size=vocab, d_model=32, n_heads=4, n_enc_layers=1,
                       n_dec_layers=1, ff_dim=64, dropout=0.0,
                       label_smoothing=0.0, warmup_steps=100, seed=seed)


# ---------------------------------------------------------------------------
# TechniqueSet / TrainConfig
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("text,expect", [
    ("B", (False, False, False)),
    ("B+BT", (True, False, False)),
    ("B+BT+WT", (True, True, False)),
    ("B+BT+WT+N", (True, True, True)),
    ("B+N", (False, False, True)),
])
def test_technique_parse_roundtrip(text, expect):
    t = TechniqueSet.parse(text)
    assert (t.bt, t.wt, t.n) == expect
    assert str(t) == text


def test_technique_wt_requires_bt():
    with pytest.raises(ConfigError, match="BT"):
        TechniqueSet.parse("B+WT")
    with pytest.raises(ConfigError):
        TechniqueSet(bt=False, wt=True)


def test_technique_rejects_unknown():
    with pytest.raises(ConfigError):
        TechniqueSet.parse("B+XX")


def test_train_config_mdae_needs_three_languages():
    with pytest.raises(ConfigError, match="mdae"):
        TrainConfig(languages=["a", "b"], init="mdae")


# ---------------------------------------------------------------------------
# identity-language data (analytic oracle for the loop)
# ---------------------------------------------------------------------------


def build_identity_data(n_docs=20, seed=3):
    """Both sides share the same text: the ideal-extraction limit."""
    docs = gen_base_corpus(60, n_docs, (3, 4), (3, 6), seed=seed)
    texts = [" ".join(w for w in s) for d in docs for s in d.sentences]
    sents = [RawSentence("all", "a", i, t) for i, t in enumerate(texts)]
    bpe = train_bpe(sents, num_merges=250, extra_langs=["a", "b"])
    doc_pairs = []
    for d in docs:
        sx = [tag(bpe, bpe.encode(" ".join(s)), "a", "b", origin=(d.doc_id, "a", i))
              for i, s in enumerate(d.sentences)]
        sy = [tag(bpe, bpe.encode(" ".join(s)), "b", "a", origin=(d.doc_id, "b", i))
              for i, s in enumerate(d.sentences)]
        doc_pairs.append(DocPair(doc_id=d.doc_id, sents_x=sx, sents_y=sy))
    held = gen_base_corpus(60, 1, (24, 24), (3, 6), seed=seed + 1,
                           vocab=docs[0].vocab)[0].sentences
    dev = [DevItem(tokens_x=tuple(bpe.encode(" ".join(s))), text_x=" ".join(s),
                   tokens_y=tuple(bpe.encode(" ".join(s))), text_y=" ".join(s))
           for s in held[:12]]
    test = [DevItem(tokens_x=tuple(bpe.encode(" ".join(s))), text_x=" ".join(s),
                    tokens_y=tuple(bpe.encode(" ".join(s))), text_y=" ".join(s))
            for s in held[12:]]
    gold = GoldAlignment(pairs={(d.doc_id, i, i) for d in docs
                                for i in range(len(d.sentences))})
    pd = PairData(langs=("a", "b"), docs=doc_pairs, dev=dev, test=test, gold=gold)
    floor = bpe.n_specials
    ids = {t for dp in doc_pairs for s in dp.sents_x for t in s.tokens if t >= floor}
    data = TrainData(bpe=bpe, pairs={("a", "b"): pd},
                     lang_token_ids={"a": ids, "b": ids})
    return data


def test_identity_language_reaches_high_bleu():
    data = build_identity_data(n_docs=800)
    cfg = TrainConfig(languages=["a", "b"], techniques=TechniqueSet(),
                      max_epochs=8, patience=8, seed=1, max_out_len=12,
                      batch_size=32)
    model_cfg = micro_model_cfg(len(data.bpe), seed=1)
    model_cfg = ModelConfig(**{**model_cfg.__dict__, "dropout": 0.1})
    state = init_model(model_cfg)
    result = train(state, cfg, data)
    final = result.stats[-1]
    assert result.best_dev_bleu > 85.0
    # identity extraction accepts nearly everything
    n_sents = sum(len(d.sents_x) for d in data.pairs[("a", "b")].docs)
    assert final.directions[direction_key("a", "b")].n_spe_accepted > 0.8 * n_sents


def test_cascade_conservation_and_bidirectionality():
    data = build_identity_data(n_docs=6)
    cfg = TrainConfig(languages=["a", "b"], techniques=TechniqueSet(bt=True, wt=True, n=True),
                      max_epochs=1, patience=1, seed=2, max_out_len=10)
    state = init_model(micro_model_cfg(len(data.bpe), seed=2))
    result = train(state, cfg, data)
    stats = result.stats[0]
    pd = data.pairs[("a", "b")]
    n_x = sum(len(d.sents_x) for d in pd.docs)
    n_y = sum(len(d.sents_y) for d in pd.docs)
    ab = stats.directions[direction_key("a", "b")]
    ba = stats.directions[direction_key("b", "a")]
    # every x-side sentence lands in exactly one bucket: SPE-accepted,
    # BT-accepted, or WT (content is never empty here, so nothing is unused)
    assert ab.n_spe_accepted + ba.n_bt_accepted + ba.n_wt == n_x
    assert ba.n_spe_accepted + ab.n_bt_accepted + ab.n_wt == n_y
    assert ab.n_spe_accepted == ba.n_spe_accepted
    assert ab.n_bt_accepted <= ab.n_bt_generated
    # +N adds one copy per produced instance
    assert ab.n_noise_copies == ab.n_spe_accepted + ab.n_bt_accepted + ab.n_wt
    assert ba.n_noise_copies == ba.n_spe_accepted + ba.n_bt_accepted + ba.n_wt


def test_wt_consumes_exactly_bt_rejects():
    data = build_identity_data(n_docs=6)
    state = init_model(micro_model_cfg(len(data.bpe), seed=5))
    pd = data.pairs[("a", "b")]
    margin = MarginConfig()
    doc = pd.docs[0]
    res = scoring.extract_pairs(state, doc.sents_x, doc.sents_y, margin)
    btr = augment.backtranslate(state, res.rejected_x, doc.sents_x, res.reprs_x,
                                res.reprs_y, margin, max_out_len=10)
    assert btr.n_generated == len(res.rejected_x)
    assert len(btr.accepted) + len(btr.still_rejected) == btr.n_generated


# ---------------------------------------------------------------------------
# finetune
# ---------------------------------------------------------------------------


def test_finetune_unknown_pair_errors():
    data = build_identity_data(n_docs=4)
    cfg = TrainConfig(languages=["a", "b"], max_epochs=1)
    state = init_model(micro_model_cfg(len(data.bpe)))
    with pytest.raises(ConfigError, match="finetune pair"):
        finetune(state, cfg, data, ("a", "z"))


def test_finetune_zero_epochs_is_identity():
    data = build_identity_data(n_docs=4)
    cfg = TrainConfig(languages=["a", "b"], max_epochs=1, seed=3)
    state = init_model(micro_model_cfg(len(data.bpe), seed=3))
    before = {k: v.clone() for k, v in state.net.state_dict().items()}
    result = finetune(state, cfg, data, ("a", "b"), max_epochs=0)
    assert result.stats == []
    after = state.net.state_dict()
    assert all(np.array_equal(before[k].numpy(), after[k].numpy()) for k in before)


def test_finetune_marks_phase():
    data = build_identity_data(n_docs=4)
    cfg = TrainConfig(languages=["a", "b"], max_epochs=1, seed=4)
    state = init_model(micro_model_cfg(len(data.bpe), seed=4))
    result = finetune(state, cfg, data, ("a", "b"), max_epochs=1)
    assert all(s.phase == "finetune" for s in result.stats)


def test_finetune_accepts_mdae_config():
    # a multilingual init marker must not block the bilingual phase config
    data = build_identity_data(n_docs=4)
    cfg = TrainConfig(languages=["a", "b", "z"], init="mdae", max_epochs=1, seed=4)
    state = init_model(micro_model_cfg(len(data.bpe), seed=4))
    result = finetune(state, cfg, data, ("a", "b"), max_epochs=1)
    assert len(result.stats) == 1


# ---------------------------------------------------------------------------
# stats csv
# ---------------------------------------------------------------------------


def test_stats_csv_roundtrip(tmp_path):
    data = build_identity_data(n_docs=4)
    cfg = TrainConfig(languages=["a", "b"], max_epochs=2, patience=2, seed=5,
                      max_out_len=10)
    state = init_model(micro_model_cfg(len(data.bpe), seed=5))
    result = train(state, cfg, data)
    path = tmp_path / "stats.csv"
    write_stats_csv(result.stats, path)
    rows = read_stats_csv(path)
    assert len(rows) == 2 * len(result.stats)
    assert {r["direction"] for r in rows} == {"a->b", "b->a"}
    assert all(r["phase"] == "train" for r in rows)


# ---------------------------------------------------------------------------
# run_experiment
# ---------------------------------------------------------------------------


def write_micro_manifest(path, corpus_dir, techniques=("B",), seeds=(1,),
                         inits=("none",), epochs=1):
    manifest = {
        "corpus": {"dir": str(corpus_dir)},
        "bpe_merges": 60,
        "model": {"d_model": 16, "n_heads": 2, "n_enc_layers": 1,
                  "n_dec_layers": 1, "ff_dim": 32, "dropout": 0.0,
                  "label_smoothing": 0.0, "warmup_steps": 40},
        "train": {"max_epochs": epochs, "patience": 2, "max_out_len": 10},
        "grid": {"techniques": list(techniques), "inits": list(inits),
                 "seeds": list(seeds)},
        "eval": {"bootstrap": 50},
    }
    with open(path, "w") as f:
        json.dump(manifest, f)
    return manifest


@pytest.fixture(scope="module")
def micro_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("micro_corpus")
    gen_suite(MICRO, 2, seed=31, out_dir=out)
    return out


def test_run_experiment_cardinality(tmp_path, micro_corpus):
    manifest_path = tmp_path / "manifest.json"
    write_micro_manifest(manifest_path, micro_corpus,
                         techniques=("B", "B+BT"), seeds=(1,))
    out = tmp_path / "out"
    run_experiment(manifest_path, out)
    stats_files = sorted(p for p in os.listdir(out) if p.startswith("stats_"))
    assert len(stats_files) == 2
    assert os.path.exists(out / "summary.csv")
    assert os.path.exists(out / "summary.txt")
    assert os.path.exists(out / "bpe.model")
    lines = open(out / "summary.csv").read().splitlines()
    assert len(lines) == 1 + 2 * 2  # header + 2 runs x 2 directions


def test_run_experiment_rerun_byte_identical(tmp_path, micro_corpus):
    manifest_path = tmp_path / "manifest.json"
    write_micro_manifest(manifest_path, micro_corpus, techniques=("B+BT+WT+N",),
                         seeds=(2,), epochs=2)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    run_experiment(manifest_path, out1)
    run_experiment(manifest_path, out2)
    for name in ("summary.csv", "stats_B+BT+WT+N_none_seed2.csv"):
        b1 = open(out1 / name, "rb").read()
        b2 = open(out2 / name, "rb").read()
        assert b1 == b2, name


def test_run_experiment_missing_corpus_errors(tmp_path):
    manifest_path = tmp_path / "manifest.json"
    write_micro_manifest(manifest_path, tmp_path / "nope")
    with pytest.raises(ConfigError, match="corpus"):
        run_experiment(manifest_path, tmp_path / "out")


def test_mine_corpus_triples_resolve(micro_corpus, tmp_path):
    corpus = load_corpus(micro_corpus / "comparable.a-b.jsonl", "comparable")
    sents = []
    for _, sa, sb in corpus.doc_pairs:
        sents.extend(sa)
        sents.extend(sb)
    bpe = train_bpe(sents, 60)
    data = load_suite_data(micro_corpus, bpe, ["a", "b"], max_len=100)
    state = init_model(micro_model_cfg(len(bpe)))
    triples = list(mine_corpus(state, data, ("a", "b"), MarginConfig()))
    gold = data.pairs[("a", "b")].gold
    doc_ids = {d for d, *_ in gold.pairs}
    for doc_id, i, j, decision, sx, sy in triples[:20]:
        assert doc_id in doc_ids
        assert decision.accepted
