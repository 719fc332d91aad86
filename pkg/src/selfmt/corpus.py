"""Corpus data model: JSONL ingestion, BPE subword vocabulary, language tags.

The corpus interchange format is JSONL, one sentence record per line with
fields doc_id (str), lang (str), sent_id (int), text (str). A comparable
corpus groups records of two languages by doc_id.
"""

from __future__ import annotations

import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

WORD_END = "</w>"

PAD, BOS, EOS, UNK, MASK = "<pad>", "<bos>", "<eos>", "<unk>", "<mask>"
CORE_SPECIALS = (PAD, BOS, EOS, UNK, MASK)


class CorpusFormatError(ValueError):
    """Raised for malformed or inconsistent corpus files."""


def lang_tag(lang: str) -> str:
    return f"<{lang}>"


@dataclass(frozen=True)
class RawSentence:
    doc_id: str
    lang: str
    sent_id: int
    text: str

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.doc_id, self.lang, self.sent_id)


@dataclass(frozen=True)
class TaggedSentence:
    """BPE-token content plus the two leading direction tags.

    `tokens` holds content ids only; the trainable input sequence is
    (src_tag, tgt_tag, *tokens).
    """

    tokens: tuple[int, ...]
    src_tag: int
    tgt_tag: int
    origin: tuple[str, str, int] | None = None

    @property
    def full_ids(self) -> tuple[int, ...]:
        return (self.src_tag, self.tgt_tag) + self.tokens

    def __len__(self) -> int:
        return len(self.tokens) + 2


@dataclass
class ComparableCorpus:
    langs: tuple[str, str]
    doc_pairs: list[tuple[str, list[RawSentence], list[RawSentence]]]

    def __len__(self) -> int:
        return len(self.doc_pairs)


def _read_jsonl_sentences(path) -> list[RawSentence]:
    sentences = []
    seen: set[tuple[str, str, int]] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"{path}:{lineno}: malformed JSON ({e.msg})") from e
            try:
                sent = RawSentence(
                    doc_id=str(rec["doc_id"]),
                    lang=str(rec["lang"]),
                    sent_id=int(rec["sent_id"]),
                    text=str(rec["text"]),
                )
            except (KeyError, TypeError, ValueError) as e:
                raise CorpusFormatError(f"{path}:{lineno}: bad record ({e})") from e
            if not sent.text.strip():
                raise CorpusFormatError(f"{path}:{lineno}: empty text for {sent.key}")
            if sent.key in seen:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate sentence key {sent.key}")
            seen.add(sent.key)
            sentences.append(sent)
    return sentences


def load_corpus(path, schema: str, langs: tuple[str, str] | None = None):
    """Load a JSONL corpus.

    schema="monolingual" returns a list of RawSentence; schema="comparable"
    groups by doc_id into a ComparableCorpus and requires both languages
    present in every document.
    """
    if schema not in ("monolingual", "comparable"):
        raise ValueError(f"unknown corpus schema {schema!r}")
    sentences = _read_jsonl_sentences(path)
    if not sentences:
        log.warning("corpus %s is empty", path)
        if schema == "monolingual":
            return []
        return ComparableCorpus(langs=langs or ("", ""), doc_pairs=[])

    if schema == "monolingual":
        return sentences

    observed = sorted({s.lang for s in sentences})
    if langs is None:
        if len(observed) != 2:
            raise CorpusFormatError(
                f"{path}: comparable corpus needs exactly 2 languages, found {observed}"
            )
        langs = (observed[0], observed[1])
    else:
        extra = set(observed) - set(langs)
        if extra:
            raise CorpusFormatError(f"{path}: unexpected languages {sorted(extra)}")

    by_doc: dict[str, tuple[list[RawSentence], list[RawSentence]]] = {}
    order: list[str] = []
    for s in sentences:
        if s.doc_id not in by_doc:
            by_doc[s.doc_id] = ([], [])
            order.append(s.doc_id)
        by_doc[s.doc_id][0 if s.lang == langs[0] else 1].append(s)
    doc_pairs = []
    for doc_id in order:
        side1, side2 = by_doc[doc_id]
        if not side1 or not side2:
            missing = langs[0] if not side1 else langs[1]
            raise CorpusFormatError(f"{path}: document {doc_id!r} has no {missing!r} side")
        side1.sort(key=lambda s: s.sent_id)
        side2.sort(key=lambda s: s.sent_id)
        doc_pairs.append((doc_id, side1, side2))
    return ComparableCorpus(langs=langs, doc_pairs=doc_pairs)


def write_jsonl(path, sentences: list[RawSentence]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in sentences:
            f.write(
                json.dumps(
                    {"doc_id": s.doc_id, "lang": s.lang, "sent_id": s.sent_id, "text": s.text},
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# BPE
# ---------------------------------------------------------------------------


@dataclass
class BpeModel:
    """Learned BPE merges plus the derived token vocabulary.

    Vocabulary layout: core specials, one tag per language, base symbols in
    sorted order, then one token per merge in merge order. Specials occupy
    the lowest ids.
    """

    merges: list[tuple[str, str]]
    alphabet: list[str]
    languages: list[str]
    vocab: dict[str, int] = field(default_factory=dict)
    _ranks: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)
    _cache: dict[str, tuple[str, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.vocab:
            self.vocab = self._build_vocab()
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._cache = {}
        self.inv_vocab = {i: t for t, i in self.vocab.items()}

    def _build_vocab(self) -> dict[str, int]:
        tokens = list(CORE_SPECIALS) + [lang_tag(l) for l in self.languages]
        for sym in self.alphabet:
            if sym not in tokens:
                tokens.append(sym)
        for a, b in self.merges:
            merged = a + b
            if merged not in tokens:
                tokens.append(merged)
        return {t: i for i, t in enumerate(tokens)}

    @property
    def specials(self) -> list[str]:
        return list(CORE_SPECIALS) + [lang_tag(l) for l in self.languages]

    @property
    def n_specials(self) -> int:
        return len(CORE_SPECIALS) + len(self.languages)

    def __len__(self) -> int:
        return len(self.vocab)

    def tag_id(self, lang: str) -> int:
        t = lang_tag(lang)
        if t not in self.vocab:
            raise ValueError(f"unknown language tag {lang!r}")
        return self.vocab[t]

    # -- application --

    def segment_word(self, word: str) -> tuple[str, ...]:
        """Split one word into merge-closed symbols (greedy by merge rank)."""
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        syms = list(word) + [WORD_END]
        while len(syms) > 1:
            best_rank, best_idx = None, -1
            for i in range(len(syms) - 1):
                r = self._ranks.get((syms[i], syms[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best_rank, best_idx = r, i
            if best_rank is None:
                break
            a, b = self.merges[best_rank]
            out, i = [], 0
            while i < len(syms):
                if i < len(syms) - 1 and syms[i] == a and syms[i + 1] == b:
                    out.append(a + b)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            syms = out
        result = tuple(syms)
        self._cache[word] = result
        return result

    def encode(self, text: str) -> list[int]:
        unk = self.vocab[UNK]
        ids = []
        for word in text.split():
            for sym in self.segment_word(word):
                ids.append(self.vocab.get(sym, unk))
        return ids

    def decode(self, ids) -> str:
        parts = []
        for i in ids:
            tok = self.inv_vocab.get(int(i))
            if tok is None or tok in (PAD, BOS, EOS):
                continue
            parts.append(tok)
        return "".join(parts).replace(WORD_END, " ").strip()


def _pair_sort_key(pair: tuple[str, str]) -> tuple[str, str]:
    # The word-end marker orders after every ordinary symbol, so a frequency
    # tie prefers word-internal merges.
    return tuple(s.replace(WORD_END, "￿") for s in pair)


def train_bpe(sentences: list[RawSentence], num_merges: int,
              extra_langs: list[str] | None = None) -> BpeModel:
    """Learn BPE merges greedily by pair frequency (exact recount per merge).

    Ties are broken by the lexicographically smallest pair (with the word-end
    marker ordered last), so training is deterministic. Learns
    min(num_merges, attainable merges).
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    if not sentences:
        raise CorpusFormatError("cannot train BPE on an empty corpus")

    langs = sorted({s.lang for s in sentences} | set(extra_langs or []))
    word_freq = Counter()
    for s in sentences:
        word_freq.update(s.text.split())

    alphabet = sorted({c for w in word_freq for c in w} | {WORD_END})
    seqs: dict[str, list[str]] = {w: list(w) + [WORD_END] for w in word_freq}

    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pair_freq = Counter()
        for w, syms in seqs.items():
            f = word_freq[w]
            for a, b in zip(syms, syms[1:]):
                pair_freq[(a, b)] += f
        if not pair_freq:
            break
        best = min(pair_freq.items(), key=lambda kv: (-kv[1], _pair_sort_key(kv[0])))[0]
        merges.append(best)
        a, b = best
        merged = a + b
        for w, syms in seqs.items():
            if a not in syms:
                continue
            out, i = [], 0
            while i < len(syms):
                if i < len(syms) - 1 and syms[i] == a and syms[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            seqs[w] = out

    return BpeModel(merges=merges, alphabet=alphabet, languages=langs)


def apply_bpe(model: BpeModel, text: str) -> list[int]:
    return model.encode(text)


def decode_bpe(model: BpeModel, ids) -> str:
    return model.decode(ids)


def save_bpe(model: BpeModel, path) -> None:
    """Write header line (version, specials, alphabet, languages) + one merge per line."""
    header = {
        "version": 1,
        "specials": model.specials,
        "languages": model.languages,
        "alphabet": model.alphabet,
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, ensure_ascii=False, sort_keys=True) + "\n")
        for a, b in model.merges:
            f.write(f"{a}\t{b}\n")


def load_bpe(path) -> BpeModel:
    with open(path, encoding="utf-8") as f:
        try:
            header = json.loads(f.readline())
        except json.JSONDecodeError as e:
            raise CorpusFormatError(f"{path}: bad BPE header ({e.msg})") from e
        if header.get("version") != 1:
            raise CorpusFormatError(f"{path}: unsupported BPE model version {header.get('version')}")
        merges = []
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusFormatError(f"{path}:{lineno}: bad merge line")
            merges.append((parts[0], parts[1]))
    return BpeModel(merges=merges, alphabet=header["alphabet"], languages=header["languages"])


# ---------------------------------------------------------------------------
# Tagging, downsampling, diagnostics
# ---------------------------------------------------------------------------


def tag(model: BpeModel, tokens, src_lang: str, tgt_lang: str,
        origin: tuple[str, str, int] | None = None) -> TaggedSentence:
    """Prefix a token sequence with its source and target language tags."""
    return TaggedSentence(
        tokens=tuple(int(t) for t in tokens),
        src_tag=model.tag_id(src_lang),
        tgt_tag=model.tag_id(tgt_lang),
        origin=origin,
    )


def downsample(sentences: list[RawSentence], n: int, seed: int) -> list[RawSentence]:
    """Uniform sample without replacement of min(n, len) sentences, order preserved."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n >= len(sentences):
        return list(sentences)
    rng = random.Random(seed)
    keep = sorted(rng.sample(range(len(sentences)), n))
    return [sentences[i] for i in keep]


def vocab_overlap(c1: list[RawSentence], c2: list[RawSentence]) -> float:
    """Pre-BPE whitespace-token type overlap, as a Jaccard percentage."""
    if not c1 or not c2:
        raise ValueError("vocab_overlap requires two non-empty corpora")
    t1 = {w for s in c1 for w in s.text.split()}
    t2 = {w for s in c2 for w in s.text.split()}
    return 100.0 * len(t1 & t2) / len(t1 | t2)
