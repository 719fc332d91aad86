"""Online training loop: per document pair, extract similar sentence pairs,
back-translate the rejects, word-translate the back-translation rejects,
optionally add noised copies, and train bidirectionally in deterministic
batches. Also: bilingual finetuning of multilingual models and the
manifest-driven experiment runner.
"""

from __future__ import annotations

import copy
import csv
import glob
import json
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import augment, evaluation, pretrain, scoring
from .corpus import (BpeModel, ComparableCorpus, RawSentence, TaggedSentence,
                     load_corpus, save_bpe, tag, train_bpe)
from .model import (ModelConfig, ModelState, init_model, save_checkpoint,
                    train_step, translate_batch)
from .scoring import MarginConfig
from .synthlang import GoldAlignment, gen_suite
from .util import sha256_file, stable_rng, stable_torch_seed

log = logging.getLogger(__name__)

INIT_MODES = ("none", "we", "dae", "mdae")

STATS_COLUMNS = [
    "epoch", "phase", "direction", "n_spe_accepted", "n_bt_generated",
    "n_bt_accepted", "n_wt", "n_noise_copies", "mean_train_loss", "dev_bleu",
]


class ConfigError(ValueError):
    """Invalid training configuration or manifest."""


@dataclass(frozen=True)
class TechniqueSet:
    """Augmentations on top of the always-on pair extraction."""

    bt: bool = False
    wt: bool = False
    n: bool = False

    def __post_init__(self):
        if self.wt and not self.bt:
            raise ConfigError("WT consumes BT rejects; enable BT to use WT")

    @classmethod
    def parse(cls, text: str) -> "TechniqueSet":
        parts = [p.strip().upper() for p in text.split("+") if p.strip()]
        if not parts or parts[0] != "B":
            raise ConfigError(f"technique string must start with B: {text!r}")
        extras = set(parts[1:])
        unknown = extras - {"BT", "WT", "N"}
        if unknown:
            raise ConfigError(f"unknown techniques {sorted(unknown)} in {text!r}")
        return cls(bt="BT" in extras, wt="WT" in extras, n="N" in extras)

    def __str__(self) -> str:
        parts = ["B"]
        if self.bt:
            parts.append("BT")
        if self.wt:
            parts.append("WT")
        if self.n:
            parts.append("N")
        return "+".join(parts)


@dataclass
class TrainConfig:
    languages: list[str]
    techniques: TechniqueSet = field(default_factory=TechniqueSet)
    init: str = "none"
    batch_size: int = 50
    max_len: int = 100
    max_out_len: int | None = None
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0
    margin: MarginConfig = field(default_factory=MarginConfig)
    noise: augment.NoiseConfig = field(default_factory=augment.NoiseConfig)
    keep_best: bool = True
    # Streaming-shuffle window for batch dispatch. Instances still enqueue in
    # document order then provenance order, but batches draw a seeded random
    # sample of the pending buffer: strictly sequential flushing puts both
    # directions of the same few sentences into every batch, which measurably
    # stalls training at this scale.
    shuffle_window: int = 256
    shuffle_docs: bool = True
    # optional debug dump of every trained instance: provenance, src, tgt
    pair_dump: str | None = None

    def __post_init__(self):
        if self.init not in INIT_MODES:
            raise ConfigError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if len(self.languages) < 2:
            raise ConfigError("need at least 2 languages")
        if self.init == "mdae" and len(self.languages) < 3:
            raise ConfigError("mdae init requires >= 3 languages")
        if self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("max_epochs must be >= 0 and patience >= 1")


@dataclass
class DirectionStats:
    n_spe_accepted: int = 0
    n_bt_generated: int = 0
    n_bt_accepted: int = 0
    n_wt: int = 0
    n_noise_copies: int = 0
    loss_sum: float = 0.0
    loss_count: int = 0
    dev_bleu: float = 0.0

    @property
    def mean_train_loss(self) -> float:
        return self.loss_sum / self.loss_count if self.loss_count else float("nan")


@dataclass
class EpochStats:
    """Per-epoch, per-direction counters. An extracted pair trains both
    directions, so n_spe_accepted repeats the pair count in each; the
    synthetic counters are direction-specific."""

    epoch: int
    phase: str
    directions: dict[str, DirectionStats] = field(default_factory=dict)

    def direction(self, key: str) -> DirectionStats:
        if key not in self.directions:
            self.directions[key] = DirectionStats()
        return self.directions[key]


@dataclass
class DevItem:
    tokens_x: tuple[int, ...]
    text_x: str
    tokens_y: tuple[int, ...]
    text_y: str


@dataclass
class DocPair:
    doc_id: str
    sents_x: list[TaggedSentence]
    sents_y: list[TaggedSentence]


@dataclass
class PairData:
    langs: tuple[str, str]
    docs: list[DocPair]
    dev: list[DevItem]
    test: list[DevItem]
    gold: GoldAlignment | None = None


@dataclass
class TrainData:
    bpe: BpeModel
    pairs: dict[tuple[str, str], PairData]
    lang_token_ids: dict[str, set[int]]

    def languages(self) -> list[str]:
        return sorted({l for key in self.pairs for l in key})


@dataclass
class TrainResult:
    stats: list[EpochStats]
    best_epoch: int
    best_dev_bleu: float


def direction_key(src: str, tgt: str) -> str:
    return f"{src}->{tgt}"


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------


def _encode_tagged(bpe: BpeModel, sent: RawSentence, tgt_lang: str,
                   max_len: int) -> TaggedSentence | None:
    ids = bpe.encode(sent.text)
    if not ids or len(ids) + 2 > max_len:
        return None
    return tag(bpe, ids, sent.lang, tgt_lang, origin=sent.key)


def prepare_pair_data(corpus: ComparableCorpus, bpe: BpeModel, max_len: int,
                      dev_records: list[dict] | None = None,
                      test_records: list[dict] | None = None,
                      gold: GoldAlignment | None = None) -> PairData:
    """Encode and tag a comparable corpus. Over-length sentences are skipped
    outright (not truncated) so extracted text and trained text coincide."""
    x, y = corpus.langs
    docs = []
    for doc_id, side_x, side_y in corpus.doc_pairs:
        tx = [t for s in side_x if (t := _encode_tagged(bpe, s, y, max_len)) is not None]
        ty = [t for s in side_y if (t := _encode_tagged(bpe, s, x, max_len)) is not None]
        if not tx or not ty:
            log.debug("dropping doc %s: a side is empty after length filtering", doc_id)
            continue
        docs.append(DocPair(doc_id=doc_id, sents_x=tx, sents_y=ty))

    def build_items(records):
        items = []
        for rec in records or []:
            items.append(DevItem(
                tokens_x=tuple(bpe.encode(rec[x])), text_x=rec[x],
                tokens_y=tuple(bpe.encode(rec[y])), text_y=rec[y],
            ))
        return items

    return PairData(langs=(x, y), docs=docs, dev=build_items(dev_records),
                    test=build_items(test_records), gold=gold)


def _read_pair_records(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(json.loads(line))
    return records


def load_suite_data(corpus_dir, bpe: BpeModel, langs: list[str], max_len: int) -> TrainData:
    """Assemble TrainData from a synthetic-suite (or same-layout) directory."""
    pairs = {}
    for i, x in enumerate(langs):
        for y in langs[i + 1:]:
            pair = f"{x}-{y}"
            comp_path = os.path.join(corpus_dir, f"comparable.{pair}.jsonl")
            if not os.path.exists(comp_path):
                continue
            corpus = load_corpus(comp_path, "comparable", langs=(x, y))
            gold_path = os.path.join(corpus_dir, f"gold.{pair}.jsonl")
            gold = GoldAlignment.load(gold_path) if os.path.exists(gold_path) else None
            dev_path = os.path.join(corpus_dir, f"dev.{pair}.jsonl")
            test_path = os.path.join(corpus_dir, f"test.{pair}.jsonl")
            dev = _read_pair_records(dev_path) if os.path.exists(dev_path) else []
            test = _read_pair_records(test_path) if os.path.exists(test_path) else []
            pairs[(x, y)] = prepare_pair_data(corpus, bpe, max_len, dev, test, gold)
    if not pairs:
        raise ConfigError(f"no comparable corpora found in {corpus_dir} for {langs}")

    # WT nearest-neighbor candidates: content tokens attested in each
    # language's data; specials are never translation targets.
    lang_token_ids: dict[str, set[int]] = {l: set() for l in langs}
    floor = bpe.n_specials
    for lang in langs:
        mono_path = os.path.join(corpus_dir, f"mono.{lang}.jsonl")
        if os.path.exists(mono_path):
            for s in load_corpus(mono_path, "monolingual"):
                lang_token_ids[lang].update(t for t in bpe.encode(s.text) if t >= floor)
    for (x, y), pd in pairs.items():
        for doc in pd.docs:
            for s in doc.sents_x:
                lang_token_ids[x].update(t for t in s.tokens if t >= floor)
            for s in doc.sents_y:
                lang_token_ids[y].update(t for t in s.tokens if t >= floor)
    return TrainData(bpe=bpe, pairs=pairs, lang_token_ids=lang_token_ids)


# ---------------------------------------------------------------------------
# The online loop
# ---------------------------------------------------------------------------


def _doc_instances(state: ModelState, doc: DocPair, pd: PairData, cfg: TrainConfig,
                   data: TrainData, stats: EpochStats, epoch: int,
                   phase: str) -> list[tuple[augment.SyntheticPair, str]]:
    x, y = pd.langs
    dir_xy, dir_yx = direction_key(x, y), direction_key(y, x)
    res = scoring.extract_pairs(state, doc.sents_x, doc.sents_y, cfg.margin)

    instances: list[tuple[augment.SyntheticPair, str]] = []
    for sx, sy, _ in res.accepted:
        instances.append((augment.SyntheticPair(sx, sy.tokens, augment.PROV_SPE), dir_xy))
        instances.append((augment.SyntheticPair(sy, sx.tokens, augment.PROV_SPE), dir_yx))
    stats.direction(dir_xy).n_spe_accepted += len(res.accepted)
    stats.direction(dir_yx).n_spe_accepted += len(res.accepted)

    wt_inputs: list[tuple[TaggedSentence, str, str]] = []  # (sentence, tgt_lang, direction)
    if cfg.techniques.bt:
        for rejected, own_side, own_reprs, other_reprs, bt_dir, tgt_lang in (
            (res.rejected_x, doc.sents_x, res.reprs_x, res.reprs_y, dir_yx, y),
            (res.rejected_y, doc.sents_y, res.reprs_y, res.reprs_x, dir_xy, x),
        ):
            btr = augment.backtranslate(state, rejected, own_side, own_reprs,
                                        other_reprs, cfg.margin, cfg.max_out_len)
            ds = stats.direction(bt_dir)
            ds.n_bt_generated += btr.n_generated
            ds.n_bt_accepted += len(btr.accepted)
            instances.extend((p, bt_dir) for p in btr.accepted)
            if cfg.techniques.wt:
                wt_inputs.extend((s, tgt_lang, bt_dir) for s in btr.still_rejected)

    if cfg.techniques.wt and wt_inputs:
        by_lang: dict[str, list[tuple[TaggedSentence, str]]] = {}
        for s, tgt_lang, d in wt_inputs:
            by_lang.setdefault(tgt_lang, []).append((s, d))
        for tgt_lang, items in sorted(by_lang.items()):
            vocab_ids = data.lang_token_ids[tgt_lang]
            wt_pairs = augment.word_translate_batch(state, [s for s, _ in items], vocab_ids)
            for (s, d), p in zip(items, wt_pairs):
                if p.src.tokens:
                    instances.append((p, d))
                    stats.direction(d).n_wt += 1

    if cfg.techniques.n:
        noised = []
        for idx, (p, d) in enumerate(instances):
            rng = stable_rng(cfg.seed, "noise", phase, epoch, doc.doc_id, idx)
            noised.append((augment.add_noise(p, cfg.noise, rng), d))
            stats.direction(d).n_noise_copies += 1
        instances.extend(noised)

    keep = []
    for p, d in instances:
        if not p.src.tokens or not p.tgt:
            continue
        if len(p.src) > cfg.max_len or len(p.tgt) + 1 > cfg.max_len:
            continue
        keep.append((p, d))
    return keep


def _flush(state: ModelState, batch: list[tuple[augment.SyntheticPair, str]],
           stats: EpochStats) -> None:
    result = train_step(state, [(p.src, p.tgt) for p, _ in batch])
    for (_, d), loss in zip(batch, result.per_sentence):
        ds = stats.direction(d)
        ds.loss_sum += float(loss)
        ds.loss_count += 1


def _dev_bleu(state: ModelState, pd: PairData, bpe: BpeModel, stats: EpochStats,
              cfg: TrainConfig) -> None:
    x, y = pd.langs
    items = pd.dev
    if not items:
        return
    for src_lang, tgt_lang, get_src, get_ref in (
        (x, y, lambda it: it.tokens_x, lambda it: it.text_y),
        (y, x, lambda it: it.tokens_y, lambda it: it.text_x),
    ):
        hyps = translate_texts(state, bpe, [get_src(it) for it in items],
                               src_lang, tgt_lang, cfg)
        refs = [get_ref(it) for it in items]
        stats.direction(direction_key(src_lang, tgt_lang)).dev_bleu = \
            evaluation.bleu(hyps, refs).score

def translate_texts(state: ModelState, bpe: BpeModel, token_seqs, src_lang: str,
                    tgt_lang: str, cfg: TrainConfig) -> list[str]:
    src_tag, tgt_tag = bpe.tag_id(src_lang), bpe.tag_id(tgt_lang)
    hyps = []
    for start in range(0, len(token_seqs), cfg.batch_size):
        chunk = token_seqs[start: start + cfg.batch_size]
        chunk = [seq[: cfg.max_len - 2] for seq in chunk]
        outs = translate_batch(state, chunk, src_tag, tgt_tag, cfg.max_out_len)
        hyps.extend(bpe.decode(o) for o in outs)
    return hyps


def _snapshot(state: ModelState) -> dict:
    return {
        "net": copy.deepcopy(state.net.state_dict()),
        "opt": copy.deepcopy(state.optimizer.state_dict()),
        "step": state.step,
    }


def _restore(state: ModelState, snap: dict) -> None:
    state.net.load_state_dict(snap["net"])
    state.optimizer.load_state_dict(snap["opt"])
    state.step = snap["step"]


def train(state: ModelState, cfg: TrainConfig, data: TrainData,
          phase: str = "train") -> TrainResult:
    """Run the online loop until max_epochs or dev-BLEU early stopping.

    Extracted pairs train both directions; back-translations and word
    translations train synthetic -> clean only. Batches flush in document
    order, then provenance order, so runs are reproducible. With keep_best,
    the model is restored to its best-mean-dev-BLEU epoch at the end.
    """
    pair_keys = [k for k in sorted(data.pairs)
                 if k[0] in cfg.languages and k[1] in cfg.languages]
    if not pair_keys:
        raise ConfigError(f"no comparable data for languages {cfg.languages}")

    # dropout is the only consumer of torch's global RNG in this loop
    torch.manual_seed(stable_torch_seed(cfg.seed, "train-loop", phase))
    stats_log: list[EpochStats] = []
    best = None  # (mean dev bleu, epoch, snapshot)
    window = max(cfg.shuffle_window, cfg.batch_size)
    dump = open(cfg.pair_dump, "a", encoding="utf-8") if cfg.pair_dump else None
    for epoch in range(1, cfg.max_epochs + 1):
        stats = EpochStats(epoch=epoch, phase=phase)
        docs = [(key, doc) for key in pair_keys for doc in data.pairs[key].docs]
        if cfg.shuffle_docs:
            stable_rng(cfg.seed, "docorder", phase, epoch).shuffle(docs)
        flush_rng = stable_rng(cfg.seed, "flush", phase, epoch)
        pending: list[tuple[augment.SyntheticPair, str]] = []

        def dispatch(drain: bool = False) -> None:
            while len(pending) >= window or (drain and pending):
                k = min(cfg.batch_size, len(pending))
                idx = sorted(flush_rng.sample(range(len(pending)), k))
                _flush(state, [pending[i] for i in idx], stats)
                for i in reversed(idx):
                    del pending[i]

        for key, doc in docs:
            produced = _doc_instances(state, doc, data.pairs[key], cfg, data,
                                      stats, epoch, phase)
            if dump is not None:
                for p, _ in produced:
                    dump.write(f"{p.provenance}\t{data.bpe.decode(p.src.tokens)}"
                               f"\t{data.bpe.decode(p.tgt)}\n")
            pending.extend(produced)
            dispatch()
        dispatch(drain=True)

        for key in pair_keys:
            _dev_bleu(state, data.pairs[key], data.bpe, stats, cfg)
        stats_log.append(stats)

        dev_scores = [d.dev_bleu for d in stats.directions.values()]
        mean_dev = float(np.mean(dev_scores)) if dev_scores else 0.0
        log.info("%s epoch %d: mean dev BLEU %.2f", phase, epoch, mean_dev)
        if best is None or mean_dev > best[0]:
            best = (mean_dev, epoch, _snapshot(state) if cfg.keep_best else None)
        elif epoch - best[1] >= cfg.patience:
            log.info("early stop at epoch %d (best %.2f at epoch %d)",
                     epoch, best[0], best[1])
            break

    if dump is not None:
        dump.close()
    if best is not None and cfg.keep_best and best[2] is not None:
        _restore(state, best[2])
    if best is None:
        return TrainResult(stats=stats_log, best_epoch=0, best_dev_bleu=0.0)
    return TrainResult(stats=stats_log, best_epoch=best[1], best_dev_bleu=best[0])


def finetune(state: ModelState, cfg: TrainConfig, data: TrainData,
             pair: tuple[str, str], max_epochs: int | None = None) -> TrainResult:
    """Continue training restricted to one language pair of a multilingual
    model; stats rows are marked phase=finetune."""
    missing = [l for l in pair if l not in cfg.languages]
    if missing:
        raise ConfigError(f"finetune pair {pair} not in model languages {cfg.languages}")
    key = tuple(sorted(pair))
    if key not in data.pairs:
        raise ConfigError(f"no comparable corpus for pair {pair}")
    # init describes how the model was produced and is already applied; the
    # bilingual phase config must not re-validate it against 2 languages.
    sub_cfg = replace(cfg, languages=list(key), init="none",
                      max_epochs=cfg.max_epochs if max_epochs is None else max_epochs)
    return train(state, sub_cfg, data, phase="finetune")


def mine_corpus(state: ModelState, data: TrainData, pair: tuple[str, str],
                cfg: MarginConfig):
    """Standalone extraction pass; yields (doc_id, src_sent_id, tgt_sent_id,
    decision, src_sentence, tgt_sentence) for every accepted pair."""
    pd = data.pairs[tuple(sorted(pair))]
    for doc in pd.docs:
        res = scoring.extract_pairs(state, doc.sents_x, doc.sents_y, cfg)
        for sx, sy, decision in res.accepted:
            yield (doc.doc_id, sx.origin[2], sy.origin[2], decision, sx, sy)


# ---------------------------------------------------------------------------
# Stats CSV
# ---------------------------------------------------------------------------


def write_stats_csv(stats_log: list[EpochStats], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(STATS_COLUMNS)
        for stats in stats_log:
            for direction in sorted(stats.directions):
                d = stats.directions[direction]
                writer.writerow([
                    stats.epoch, stats.phase, direction,
                    d.n_spe_accepted, d.n_bt_generated, d.n_bt_accepted,
                    d.n_wt, d.n_noise_copies,
                    f"{d.mean_train_loss:.6f}", f"{d.dev_bleu:.6f}",
                ])


def read_stats_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


# ---------------------------------------------------------------------------
# Manifest-driven experiments
# ---------------------------------------------------------------------------

DEFAULT_EVAL = {"bootstrap": 300, "p": 95.0}


def _model_config(manifest: dict, vocab_size: int, seed: int, train_cfg: dict) -> ModelConfig:
    overrides = dict(manifest.get("model", {}))
    overrides.setdefault("max_len", train_cfg.get("max_len", 100))
    overrides.setdefault("batch_size", train_cfg.get("batch_size", 50))
    return ModelConfig(vocab_size=vocab_size, seed=seed, **overrides)


def _build_init_state(manifest: dict, init: str, seed: int, data: TrainData,
                      langs: list[str], corpus_dir, train_cfg: dict,
                      mono_seqs: dict[str, list[list[int]]]) -> ModelState:
    bpe = data.bpe
    config = _model_config(manifest, len(bpe), seed, train_cfg)
    if init == "none":
        return init_model(config)
    if init == "we":
        cbow_cfg = dict(manifest.get("cbow", {}))
        sets = []
        for lang in langs:
            sets.append(pretrain.train_cbow(
                mono_seqs[lang], vocab_size=len(bpe), dim=config.d_model,
                window=cbow_cfg.get("window", 5), negatives=cbow_cfg.get("negatives", 5),
                min_count=cbow_cfg.get("min_count", 2), epochs=cbow_cfg.get("epochs", 5),
                seed=stable_torch_seed(seed, "cbow", lang), lang=lang))
        pivot = sets[0]
        mapped = [pivot]
        for s in sets[1:]:
            pair = f"{min(pivot.lang, s.lang)}-{max(pivot.lang, s.lang)}"
            lex_path = os.path.join(corpus_dir, f"lexicon.{pair}.tsv")
            word_pairs = pretrain.load_seed_lexicon_tsv(lex_path)
            if pivot.lang > s.lang:
                word_pairs = [(b, a) for a, b in word_pairs]
            # lexicon rows are (first-lang, second-lang); orient as s -> pivot
            lex = pretrain.SeedLexicon.from_word_pairs(bpe, [(b, a) for a, b in word_pairs])
            mapped.append(pretrain.map_embeddings(s, pivot, lex).mapped)
        matrix, report = pretrain.build_we_init(mapped, bpe, config.d_model, seed=seed)
        log.info("WE init coverage: %.3f", report["coverage"])
        return init_model(config, mode="from_embeddings", embeddings=matrix)
    if init in ("dae", "mdae"):
        state = init_model(config)
        dae_cfg = dict(manifest.get("dae", {}))
        bart = augment.BartNoiseConfig(seed=seed, **dae_cfg.pop("bart", {}))
        cfg = pretrain.DaeConfig(
            mode="bilingual" if init == "dae" else "multilingual",
            languages=langs, bart=bart, seed=seed,
            epochs=dae_cfg.get("epochs", 3), holdout=dae_cfg.get("holdout", 200))
        report = pretrain.pretrain_dae(state, cfg, {l: mono_seqs[l] for l in langs}, bpe)
        log.info("DAE holdout losses: %s -> %s", report["baseline_loss"], report["final_loss"])
        return state
    raise ConfigError(f"unknown init {init!r}")


def _load_mono_seqs(corpus_dir, langs, bpe) -> dict[str, list[list[int]]]:
    out = {}
    for lang in langs:
        path = os.path.join(corpus_dir, f"mono.{lang}.jsonl")
        seqs = []
        if os.path.exists(path):
            for s in load_corpus(path, "monolingual"):
                ids = bpe.encode(s.text)
                if ids:
                    seqs.append(ids)
        out[lang] = seqs
    return out


def _bpe_training_sentences(corpus_dir, langs) -> list[RawSentence]:
    sentences = []
    for lang in langs:
        path = os.path.join(corpus_dir, f"mono.{lang}.jsonl")
        if os.path.exists(path):
            sentences.extend(load_corpus(path, "monolingual"))
    for path in sorted(glob.glob(os.path.join(corpus_dir, "comparable.*.jsonl"))):
        name = os.path.basename(path)[len("comparable."):-len(".jsonl")]
        x, y = name.split("-")
        if x in langs and y in langs:
            corpus = load_corpus(path, "comparable", langs=(x, y))
            for _, sx, sy in corpus.doc_pairs:
                sentences.extend(sx)
                sentences.extend(sy)
    if not sentences:
        raise ConfigError(f"no corpus text found under {corpus_dir}")
    return sentences


def _summary_rows(state: ModelState, data: TrainData, manifest: dict, run_id: str,
                  technique: str, init: str, pair_keys, result: TrainResult,
                  cfg: TrainConfig, seed: int) -> list[dict]:
    eval_cfg = {**DEFAULT_EVAL, **manifest.get("eval", {})}
    rows = []
    for key in pair_keys:
        pd = data.pairs[key]
        x, y = pd.langs
        prf = None
        if pd.gold is not None:
            triples = [(doc_id, i, j) for doc_id, i, j, _, _, _ in
                       mine_corpus(state, data, key, cfg.margin)]
            prf = evaluation.extraction_prf(triples, pd.gold)
        for src, tgt, get_src, get_ref in (
            (x, y, lambda it: it.tokens_x, lambda it: it.text_y),
            (y, x, lambda it: it.tokens_y, lambda it: it.text_x),
        ):
            d_key = direction_key(src, tgt)
            if pd.test:
                hyps = translate_texts(state, data.bpe, [get_src(it) for it in pd.test],
                                       src, tgt, cfg)
                refs = [get_ref(it) for it in pd.test]
                test_result = evaluation.bleu(hyps, refs)
                ci = evaluation.bootstrap_ci(
                    hyps, refs, n_resamples=int(eval_cfg["bootstrap"]),
                    p=float(eval_cfg["p"]), seed=seed)
            else:
                test_result, ci = None, (float("nan"),) * 2
            dev_score = 0.0
            if result.best_epoch:
                best_stats = result.stats[result.best_epoch - 1]
                if d_key in best_stats.directions:
                    dev_score = best_stats.directions[d_key].dev_bleu
            rows.append({
                "run_id": run_id, "technique": technique, "init": init,
                "direction": d_key, "epoch_of_best": result.best_epoch,
                "dev_bleu": dev_score,
                "test_bleu": test_result.score if test_result else float("nan"),
                "ci_low": ci[0], "ci_high": ci[1],
                "extraction_p": prf.precision if prf else float("nan"),
                "extraction_r": prf.recall if prf else float("nan"),
            })
    return rows


def run_experiment(manifest_path, out_dir=None) -> str:
    """Run the grid described by a JSON manifest; emit per-run stats CSVs,
    checkpoints, and a summary table. Reproducible from the manifest alone."""
    with open(manifest_path, encoding="utf-8") as f:
        manifest = json.load(f)
    out_dir = out_dir or manifest.get("out_dir")
    if not out_dir:
        raise ConfigError("no output directory (manifest out_dir or --out)")
    os.makedirs(out_dir, exist_ok=True)

    corpus_spec = manifest.get("corpus")
    if not corpus_spec:
        raise ConfigError("manifest must declare a corpus")
    if "dir" in corpus_spec:
        corpus_dir = corpus_spec["dir"]
        if not os.path.isdir(corpus_dir):
            raise ConfigError(f"corpus directory {corpus_dir} does not exist")
    else:
        corpus_dir = os.path.join(out_dir, "corpus")
        gen_suite(corpus_spec.get("profile", "tiny"), corpus_spec.get("n_langs", 2),
                  corpus_spec.get("seed", 0), corpus_dir)

    langs = manifest.get("langs")
    if langs is None:
        suite_manifest = os.path.join(corpus_dir, "manifest.json")
        if os.path.exists(suite_manifest):
            with open(suite_manifest, encoding="utf-8") as f:
                langs = json.load(f)["langs"]
        else:
            raise ConfigError("manifest needs 'langs' when corpus has no manifest.json")

    grid = manifest.get("grid", {})
    techniques = [TechniqueSet.parse(t) for t in grid.get("techniques", ["B"])]
    inits = grid.get("inits", ["none"])
    for init in inits:
        if init not in INIT_MODES:
            raise ConfigError(f"unknown init {init!r}")
    seeds = grid.get("seeds", [0])
    train_cfg_dict = dict(manifest.get("train", {}))
    finetune_cfg = manifest.get("finetune", {})

    bpe_sentences = _bpe_training_sentences(corpus_dir, langs)
    bpe = train_bpe(bpe_sentences, manifest.get("bpe_merges", 200), extra_langs=langs)
    save_bpe(bpe, os.path.join(out_dir, "bpe.model"))

    max_len = train_cfg_dict.get("max_len", 100)
    data = load_suite_data(corpus_dir, bpe, langs, max_len)
    mono_seqs = _load_mono_seqs(corpus_dir, langs, bpe)

    summary_rows = []
    for technique in techniques:
        for init in inits:
            run_langs = langs if init == "mdae" else langs[:2]
            for seed in seeds:
                run_id = f"{technique}_{init}_seed{seed}"
                log.info("=== run %s ===", run_id)
                cfg = TrainConfig(
                    languages=list(run_langs), techniques=technique, init=init,
                    seed=seed,
                    batch_size=train_cfg_dict.get("batch_size", 50),
                    max_len=max_len,
                    max_out_len=train_cfg_dict.get("max_out_len"),
                    max_epochs=train_cfg_dict.get("max_epochs", 10),
                    patience=train_cfg_dict.get("patience", 3),
                    margin=MarginConfig(**manifest.get("margin", {})),
                    noise=augment.NoiseConfig(seed=seed, **manifest.get("noise", {})),
                )
                state = _build_init_state(manifest, init, seed, data, list(run_langs),
                                          corpus_dir, train_cfg_dict, mono_seqs)
                result = train(state, cfg, data)
                stats_log = list(result.stats)
                pair_keys = [k for k in sorted(data.pairs)
                             if k[0] in run_langs and k[1] in run_langs]
                summary_rows.extend(_summary_rows(
                    state, data, manifest, run_id, str(technique), init, pair_keys,
                    result, cfg, seed))
                if init == "mdae" and finetune_cfg.get("pair"):
                    ft_pair = tuple(finetune_cfg["pair"])
                    ft_result = finetune(state, cfg, data, ft_pair,
                                         max_epochs=finetune_cfg.get("max_epochs"))
                    stats_log.extend(ft_result.stats)
                    summary_rows.extend(_summary_rows(
                        state, data, manifest, run_id + "+F", str(technique) + "+F",
                        init, [tuple(sorted(ft_pair))], ft_result, cfg, seed))
                write_stats_csv(stats_log, os.path.join(out_dir, f"stats_{run_id}.csv"))
                save_checkpoint(state, os.path.join(out_dir, f"ckpt_{run_id}.pt"))

    evaluation.emit_report(summary_rows, out_dir)
    run_manifest = {
        "manifest": manifest,
        "inputs": {
            "manifest_path": str(manifest_path),
            "manifest_sha256": sha256_file(manifest_path),
            "corpus_dir": str(corpus_dir),
        },
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w", encoding="utf-8") as f:
        json.dump(run_manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return out_dir
