"""Synthetic cipher-language corpora with known gold-parallel pairs.

A cipher language is a bijective word substitution of a generated base
language, optionally re-scripted through a bijective glyph map and reordered
by bounded local swaps. Because the mapping is invertible, every comparable
corpus comes with exact gold alignments and an exact reference translator,
so extraction precision/recall and BLEU are measured against ground truth.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import random
from dataclasses import dataclass, field

from .corpus import RawSentence, write_jsonl
from .util import bounded_permutation, sha256_file, stable_rng

MIN_VOCAB = 50

# Target-script alphabet for non-identity glyph maps (Cyrillic, 26+ letters).
_CYRILLIC = "абвгдежзийклмнопрстуфхцчшщъыьэюя"


class CipherError(ValueError):
    """Raised when a cipher cannot be applied (e.g. unmapped word)."""


@dataclass(frozen=True)
class CipherSpec:
    """Bijective word map + optional glyph map + local-reordering window."""

    lexicon_map: dict[str, str]
    glyph_map: dict[str, str] | None
    swap_window: int
    parallel_fraction: float
    seed: int

    def __post_init__(self):
        if len(set(self.lexicon_map.values())) != len(self.lexicon_map):
            raise ValueError("lexicon_map must be bijective")
        if self.glyph_map is not None and len(set(self.glyph_map.values())) != len(self.glyph_map):
            raise ValueError("glyph_map must be bijective")
        if not 0 <= self.swap_window <= 3:
            raise ValueError("swap_window must be in [0, 3]")
        if not 0.0 <= self.parallel_fraction <= 1.0:
            raise ValueError("parallel_fraction must be in [0, 1]")

    def cipher_word(self, word: str) -> str:
        try:
            mapped = self.lexicon_map[word]
        except KeyError:
            raise CipherError(f"word {word!r} not in cipher lexicon") from None
        if self.glyph_map is not None:
            try:
                mapped = "".join(self.glyph_map[c] for c in mapped)
            except KeyError as e:
                raise CipherError(f"glyph {e.args[0]!r} not in glyph map") from None
        return mapped

    def cipher_sentence(self, words: list[str]) -> list[str]:
        """Canonical (swap-free) cipher image; the reference translation."""
        return [self.cipher_word(w) for w in words]

    def inverse(self) -> "CipherSpec":
        inv_lex = {v: k for k, v in self.lexicon_map.items()}
        inv_glyph = None if self.glyph_map is None else {v: k for k, v in self.glyph_map.items()}
        if inv_glyph is not None:
            # Inverse applies glyphs first, then the lexicon, so fold the glyph
            # inversion into the lexicon keys instead.
            inv_lex = {
                ("".join(self.glyph_map[c] for c in v)): k for k, v in self.lexicon_map.items()
            }
            inv_glyph = None
        return CipherSpec(
            lexicon_map=inv_lex,
            glyph_map=inv_glyph,
            swap_window=self.swap_window,
            parallel_fraction=self.parallel_fraction,
            seed=self.seed,
        )


@dataclass
class GoldAlignment:
    """Set of (doc_id, src_sent_id, tgt_sent_id) gold-parallel links."""

    pairs: set[tuple[str, int, int]] = field(default_factory=set)

    def __post_init__(self):
        src_seen, tgt_seen = set(), set()
        for doc_id, i, j in self.pairs:
            if (doc_id, i) in src_seen or (doc_id, j) in tgt_seen:
                raise ValueError(f"sentence in doc {doc_id!r} has multiple gold partners")
            src_seen.add((doc_id, i))
            tgt_seen.add((doc_id, j))

    def __len__(self) -> int:
        return len(self.pairs)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for doc_id, i, j in sorted(self.pairs):
                f.write(json.dumps(
                    {"doc_id": doc_id, "src_sent_id": i, "tgt_sent_id": j}, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "GoldAlignment":
        pairs = set()
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    rec = json.loads(line)
                    pairs.add((rec["doc_id"], int(rec["src_sent_id"]), int(rec["tgt_sent_id"])))
        return cls(pairs=pairs)


@dataclass
class SynthDoc:
    """One generated document: word-list sentences plus its topic sampler."""

    doc_id: str
    sentences: list[list[str]]
    vocab: list[str]
    cum_weights: list[float]
    len_range: tuple[int, int]

    def sample_sentence(self, rng: random.Random) -> list[str]:
        # without replacement: short topical sentences dominated by one
        # repeated word make bag representations degenerate
        n = rng.randint(self.len_range[0], self.len_range[1])
        out: list[str] = []
        seen: set[str] = set()
        while len(out) < n:
            for w in rng.choices(self.vocab, cum_weights=self.cum_weights,
                                 k=2 * (n - len(out))):
                if w not in seen:
                    seen.add(w)
                    out.append(w)
                    if len(out) == n:
                        break
        return out


def _make_vocab(vocab_size: int, rng: random.Random) -> list[str]:
    """Syllabic pseudo-words; shared substructure keeps BPE merges meaningful."""
    consonants = "bdfgklmnprstvz"
    vowels = "aeiou"
    words: list[str] = []
    seen = set()
    while len(words) < vocab_size:
        n_syll = rng.randint(1, 3)
        w = "".join(rng.choice(consonants) + rng.choice(vowels) for _ in range(n_syll))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _zipf_weights(n: int) -> list[float]:
    return [1.0 / (r + 2.7) for r in range(n)]


def _make_topics(vocab: list[str]) -> list[list[int]]:
    """Persistent overlapping topics, a pure function of the vocabulary.

    Word co-occurrence must be stable across documents (and across the mono
    and comparable corpora of one suite), otherwise distributional word
    vectors carry no identity signal and embedding-based initialization has
    nothing to align.
    """
    rng = stable_rng("topics", "|".join(vocab))
    n_topics = max(8, len(vocab) // 20)
    size = max(6, len(vocab) // 8)
    return [sorted(rng.sample(range(len(vocab)), size)) for _ in range(n_topics)]


def gen_base_corpus(vocab_size: int, n_docs: int, sents_per_doc, len_range,
                    seed, vocab: list[str] | None = None,
                    doc_prefix: str = "d") -> list[SynthDoc]:
    """Generate topical documents over a shared vocabulary.

    Every document boosts one or two topics from a global topic inventory on
    top of a Zipf base distribution, giving topic-aligned but non-parallel
    text. Sentences are deterministic given (seed, doc index).
    """
    if vocab is None and vocab_size < MIN_VOCAB:
        raise ValueError(f"vocab_size must be >= {MIN_VOCAB}")
    if isinstance(sents_per_doc, int):
        sents_per_doc = (sents_per_doc, sents_per_doc)
    lo, hi = len_range
    if lo < 1 or hi < lo:
        raise ValueError(f"degenerate len_range {len_range}")
    if sents_per_doc[0] < 1 or sents_per_doc[1] < sents_per_doc[0]:
        raise ValueError(f"degenerate sents_per_doc {sents_per_doc}")

    if vocab is None:
        vocab = _make_vocab(vocab_size, stable_rng(seed, "vocab"))
    base_weights = _zipf_weights(len(vocab))
    topics = _make_topics(vocab)

    docs = []
    for d in range(n_docs):
        rng = stable_rng(seed, "doc", d)
        doc_id = f"{doc_prefix}{d:05d}"
        weights = list(base_weights)
        for t in rng.sample(range(len(topics)), rng.randint(1, 2)):
            for idx in topics[t]:
                weights[idx] *= 30.0
        cum = list(itertools.accumulate(weights))
        doc = SynthDoc(doc_id=doc_id, sentences=[], vocab=vocab,
                       cum_weights=cum, len_range=(lo, hi))
        n_sents = rng.randint(*sents_per_doc)
        doc.sentences = [doc.sample_sentence(rng) for _ in range(n_sents)]
        docs.append(doc)
    return docs


def apply_cipher(doc: SynthDoc, spec: CipherSpec) -> tuple[list[list[str]], list[tuple[int, int]]]:
    """Produce the opposite-language side of a document.

    A parallel_fraction subset of sentences is word-mapped, locally reordered
    within swap_window, and glyph-mapped; the remainder is replaced by fresh
    comparable filler from the document's topic distribution. Returns the
    ciphered side and the (src_sent_id, tgt_sent_id) gold links.
    """
    rng = stable_rng(spec.seed, "cipher", doc.doc_id)
    n = len(doc.sentences)
    target = spec.parallel_fraction * n
    k = math.floor(target)
    if rng.random() < target - k:
        k += 1
    k = min(k, n)
    parallel = set(rng.sample(range(n), k))

    ciphered: list[list[str]] = []
    gold: list[tuple[int, int]] = []
    for i, words in enumerate(doc.sentences):
        if i in parallel:
            mapped = [spec.cipher_word(w) for w in words]
            order = bounded_permutation(len(mapped), spec.swap_window, rng)
            ciphered.append([mapped[j] for j in order])
            gold.append((i, i))
        else:
            ciphered.append(spec.cipher_sentence(doc.sample_sentence(rng)))
    return ciphered, gold


# ---------------------------------------------------------------------------
# Suite generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuiteProfile:
    name: str
    n_docs: int
    sents_per_doc: tuple[int, int]
    len_range: tuple[int, int]
    vocab_size: int
    parallel_fraction: float
    swap_window: int
    mono_sents: int
    dev_size: int
    test_size: int
    lexicon_size: int = 200
    identity_fraction: float = 0.08  # lexicon overlap for identity-glyph languages


# Documents hold enough sentences that the dual mutual-argmax filter is
# selective when representations are still poor; extraction counts then have
# room to rise as the model improves.
PROFILES = {
    "tiny": SuiteProfile("tiny", n_docs=2000, sents_per_doc=(14, 22), len_range=(4, 9),
                         vocab_size=340, parallel_fraction=0.22, swap_window=1,
                         mono_sents=6000, dev_size=150, test_size=150),
    "low": SuiteProfile("low", n_docs=2500, sents_per_doc=(14, 22), len_range=(4, 9),
                        vocab_size=380, parallel_fraction=0.25, swap_window=1,
                        mono_sents=9000, dev_size=200, test_size=200),
    "mid": SuiteProfile("mid", n_docs=3500, sents_per_doc=(14, 22), len_range=(4, 9),
                        vocab_size=420, parallel_fraction=0.45, swap_window=1,
                        mono_sents=12000, dev_size=200, test_size=200),
    "multi": SuiteProfile("multi", n_docs=1000, sents_per_doc=(6, 10), len_range=(4, 9),
                          vocab_size=340, parallel_fraction=0.30, swap_window=1,
                          mono_sents=6000, dev_size=120, test_size=120,
                          identity_fraction=0.12),
}


def _fixed_point_free(items: list[str], rng: random.Random) -> dict[str, str]:
    """Bijection over items without fixed points (neighbor-swap repair)."""
    shuffled = list(items)
    rng.shuffle(shuffled)
    for i, (a, b) in enumerate(zip(items, shuffled)):
        if a == b:
            j = (i + 1) % len(items)
            shuffled[i], shuffled[j] = shuffled[j], shuffled[i]
    return dict(zip(items, shuffled))


def make_language_spec(lang_index: int, vocab: list[str], profile: SuiteProfile,
                       seed) -> CipherSpec:
    """Cipher spec for language #i relative to the base language (index 0).

    Language 0 is the identity. Odd indexes get a disjoint script (glyph map
    into Cyrillic, zero pre-BPE vocabulary overlap); even indexes keep the
    Latin script and share identity_fraction of the lexicon with the base.
    """
    if lang_index == 0:
        return CipherSpec(lexicon_map={w: w for w in vocab}, glyph_map=None,
                          swap_window=0, parallel_fraction=profile.parallel_fraction,
                          seed=int(seed))
    rng = stable_rng(seed, "langspec", lang_index)
    if lang_index % 2 == 1:
        lexicon = _fixed_point_free(vocab, rng)
        alphabet = sorted({c for w in vocab for c in w})
        glyph = {c: _CYRILLIC[i] for i, c in enumerate(alphabet)}
    else:
        n_keep = int(round(profile.identity_fraction * len(vocab)))
        keep = set(rng.sample(vocab, n_keep))
        rest = [w for w in vocab if w not in keep]
        lexicon = {w: w for w in keep}
        lexicon.update(_fixed_point_free(rest, rng))
        glyph = None
    return CipherSpec(lexicon_map=lexicon, glyph_map=glyph,
                      swap_window=profile.swap_window,
                      parallel_fraction=profile.parallel_fraction, seed=int(seed))


def _relative_spec(src_spec: CipherSpec, tgt_spec: CipherSpec) -> CipherSpec:
    """Cipher that maps src-language words directly to tgt-language words."""
    lexicon = {}
    for base_word in src_spec.lexicon_map:
        lexicon[src_spec.cipher_word(base_word)] = tgt_spec.cipher_word(base_word)
    return CipherSpec(lexicon_map=lexicon, glyph_map=None,
                      swap_window=tgt_spec.swap_window,
                      parallel_fraction=tgt_spec.parallel_fraction, seed=tgt_spec.seed)


def gen_suite(profile: str | SuiteProfile, n_langs: int, seed: int, out_dir) -> dict:
    """Emit comparable corpora, monolingual corpora, gold alignments, seed
    lexica and dev/test reference sets for all language pairs.

    Returns the manifest dict (also written to out_dir/manifest.json).
    """
    if n_langs < 2:
        raise ValueError("n_langs must be >= 2")
    prof = PROFILES[profile] if isinstance(profile, str) else profile
    os.makedirs(out_dir, exist_ok=True)

    langs = [chr(ord("a") + i) for i in range(n_langs)]
    vocab = _make_vocab(prof.vocab_size, stable_rng(seed, "vocab"))
    specs = {lang: make_language_spec(i, vocab, prof, seed) for i, lang in enumerate(langs)}

    files: dict[str, str] = {}

    def emit(name: str, writer) -> None:
        path = os.path.join(out_dir, name)
        writer(path)
        files[name] = sha256_file(path)

    # Comparable corpora + gold, one per unordered pair.
    for x, y in itertools.combinations(langs, 2):
        pair = f"{x}-{y}"
        docs = gen_base_corpus(prof.vocab_size, prof.n_docs, prof.sents_per_doc,
                               prof.len_range, seed=f"{seed}|pair|{pair}", vocab=vocab)
        rel = _relative_spec(specs[x], specs[y])
        records: list[RawSentence] = []
        gold_pairs: set[tuple[str, int, int]] = set()
        for doc in docs:
            x_side = [specs[x].cipher_sentence(s) for s in doc.sentences]
            x_doc = SynthDoc(doc_id=doc.doc_id,
                             sentences=x_side,
                             vocab=[specs[x].cipher_word(w) for w in vocab],
                             cum_weights=doc.cum_weights, len_range=doc.len_range)
            y_side, links = apply_cipher(x_doc, rel)
            for i, words in enumerate(x_side):
                records.append(RawSentence(doc.doc_id, x, i, " ".join(words)))
            for j, words in enumerate(y_side):
                records.append(RawSentence(doc.doc_id, y, j, " ".join(words)))
            for i, j in links:
                gold_pairs.add((doc.doc_id, i, j))
        emit(f"comparable.{pair}.jsonl", lambda p, r=records: write_jsonl(p, r))
        emit(f"gold.{pair}.jsonl", lambda p, g=gold_pairs: GoldAlignment(pairs=g).save(p))

        # Held-out parallel sentences with canonical references, both halves
        # translated by the exact cipher.
        rng = stable_rng(seed, "heldout", pair)
        held_docs = gen_base_corpus(prof.vocab_size, 1,
                                    (prof.dev_size + prof.test_size,) * 2,
                                    prof.len_range, seed=f"{seed}|held|{pair}", vocab=vocab,
                                    doc_prefix=f"held-{pair}-")
        held = held_docs[0].sentences
        rng.shuffle(held)

        def write_pairs(path, sents, x=x, y=y):
            with open(path, "w", encoding="utf-8") as f:
                for i, words in enumerate(sents):
                    rec = {
                        "pair_id": i,
                        x: " ".join(specs[x].cipher_sentence(words)),
                        y: " ".join(specs[y].cipher_sentence(words)),
                    }
                    f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")

        emit(f"dev.{pair}.jsonl", lambda p: write_pairs(p, held[: prof.dev_size]))
        emit(f"test.{pair}.jsonl", lambda p: write_pairs(p, held[prof.dev_size:]))

        # Weakly supervised seed lexicon: a frequency-weighted gold sample.
        lex_rng = stable_rng(seed, "lexicon", pair)
        weights = _zipf_weights(len(vocab))
        chosen: list[str] = []
        seen: set[str] = set()
        while len(chosen) < min(prof.lexicon_size, len(vocab)):
            w = lex_rng.choices(vocab, weights=weights, k=1)[0]
            if w not in seen:
                seen.add(w)
                chosen.append(w)

        def write_lexicon(path, words=chosen, x=x, y=y):
            with open(path, "w", encoding="utf-8") as f:
                for w in words:
                    f.write(f"{specs[x].cipher_word(w)}\t{specs[y].cipher_word(w)}\n")

        emit(f"lexicon.{pair}.tsv", write_lexicon)

    # Monolingual corpora (initialization data), disjoint from the comparable docs.
    for lang in langs:
        n_docs = max(1, prof.mono_sents // max(1, sum(prof.sents_per_doc) // 2))
        docs = gen_base_corpus(prof.vocab_size, n_docs, prof.sents_per_doc,
                               prof.len_range, seed=f"{seed}|mono|{lang}", vocab=vocab,
                               doc_prefix=f"m{lang}-")
        records = []
        count = 0
        for doc in docs:
            for i, words in enumerate(doc.sentences):
                if count >= prof.mono_sents:
                    break
                records.append(RawSentence(doc.doc_id, lang, i,
                                           " ".join(specs[lang].cipher_sentence(words))))
                count += 1
        emit(f"mono.{lang}.jsonl", lambda p, r=records: write_jsonl(p, r))

    manifest = {
        "kind": "synth-suite",
        "profile": prof.name,
        "n_docs": prof.n_docs,
        "sents_per_doc": list(prof.sents_per_doc),
        "len_range": list(prof.len_range),
        "vocab_size": prof.vocab_size,
        "parallel_fraction": prof.parallel_fraction,
        "swap_window": prof.swap_window,
        "mono_sents": prof.mono_sents,
        "dev_size": prof.dev_size,
        "test_size": prof.test_size,
        "n_langs": n_langs,
        "langs": langs,
        "seed": seed,
        "files": dict(sorted(files.items())),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest
