"""Parallel corpora over synthetic languages with controlled byte widths.

Every language renders the same abstract symbol sequences with its own
injective symbol -> character table, where every character (the word
separator included) occupies exactly ``bytes_per_symbol`` UTF-8 bytes. Two
renderings of one meaning therefore differ in byte length by exactly the
ratio of their widths.

Multi-byte characters are drawn from a small grid of lead and continuation
bytes, so no single byte identifies a symbol: a model has to look at whole
characters, which is what makes wider languages want wider context.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SEPARATORS = {1: " ", 2: " ", 3: "　"}
ONE_BYTE_ALPHABET = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"


@dataclass(frozen=True)
class SyntheticLangSpec:
    code: str
    alphabet_size: int = 16
    bytes_per_symbol: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.bytes_per_symbol not in (1, 2, 3):
            raise ValueError("bytes_per_symbol must be 1, 2 or 3")
        if self.alphabet_size < 1:
            raise ValueError("alphabet_size must be positive")


def _grid_side(n: int, width: int) -> int:
    side = 1
    while side ** width < n:
        side += 1
    return side


def symbol_table(spec: SyntheticLangSpec) -> list[str]:
    """Characters for symbols ``0..alphabet_size-1`` (shuffled per ``spec.seed``)."""
    n, w = spec.alphabet_size, spec.bytes_per_symbol
    rng = np.random.default_rng([spec.seed, w, n])
    if w == 1:
        if n > len(ONE_BYTE_ALPHABET):
            raise ValueError(f"1-byte languages support at most {len(ONE_BYTE_ALPHABET)} symbols")
        chars = list(ONE_BYTE_ALPHABET[:n])
    elif w == 2:
        # lead bytes 0xC4.. (U+0100 upwards), continuation bits from a small grid
        side = _grid_side(n, 2)
        if side > 24:
            raise ValueError("alphabet too large for 2-byte symbols")
        chars = [chr(((4 + a) << 6) | (3 + 2 * b)) for a, b in itertools.product(range(side), repeat=2)]
    else:
        # U+4000..U+9FFF: lead nibble 4..9, two continuation fields
        side = _grid_side(n, 3)
        if side > 6:
            raise ValueError("alphabet too large for 3-byte symbols")
        chars = [chr(((4 + a) << 12) | ((5 + 3 * b) << 6) | (7 + 5 * c))
                 for a, b, c in itertools.product(range(side), repeat=3)]
    chars = [chars[i] for i in rng.permutation(len(chars))[:n]]
    for ch in chars:
        if len(ch.encode("utf-8")) != w:
            raise ValueError(f"character {ch!r} is not {w} bytes")
    return chars


def render(meaning: list[list[int]], spec: SyntheticLangSpec, table: list[str] | None = None) -> str:
    """Words of symbol ids -> text in ``spec``'s script."""
    table = table or symbol_table(spec)
    sep = SEPARATORS[spec.bytes_per_symbol]
    return sep.join("".join(table[s] for s in word) for word in meaning)


def sample_meaning(rng: np.random.Generator, alphabet_size: int, length_range: tuple[int, int],
                   word_range: tuple[int, int] = (1, 4)) -> list[list[int]]:
    """Random words whose symbol count (separators excluded) lies in ``length_range``."""
    n = int(rng.integers(length_range[0], length_range[1] + 1))
    words, left = [], n
    while left > 0:
        w = min(left, int(rng.integers(word_range[0], word_range[1] + 1)))
        words.append([int(s) for s in rng.integers(0, alphabet_size, size=w)])
        left -= w
    return words


@dataclass(frozen=True)
class Record:
    src_lang: str
    tgt_lang: str
    src_text: str
    tgt_text: str


@dataclass
class ParallelCorpus:
    records: list[Record] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def languages(self) -> list[str]:
        return sorted({r.src_lang for r in self.records} | {r.tgt_lang for r in self.records})

    def direction(self, src_lang: str, tgt_lang: str) -> "ParallelCorpus":
        return ParallelCorpus([r for r in self.records
                               if r.src_lang == src_lang and r.tgt_lang == tgt_lang])

    def split(self, n_valid: int, seed: int = 0) -> tuple["ParallelCorpus", "ParallelCorpus"]:
        order = np.random.default_rng(seed).permutation(len(self.records))
        valid = [self.records[i] for i in sorted(order[:n_valid])]
        train = [self.records[i] for i in sorted(order[n_valid:])]
        return ParallelCorpus(train), ParallelCorpus(valid)


def read_tsv(path) -> ParallelCorpus:
    """Four UTF-8 columns, no header: src_lang, tgt_lang, src_text, tgt_text."""
    records = []
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, row in enumerate(csv.reader(f, delimiter="\t", quoting=csv.QUOTE_NONE), 1):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated columns, got {len(row)}")
            records.append(Record(*row))
    return ParallelCorpus(records)


def write_tsv(corpus: ParallelCorpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        for r in corpus.records:
            f.write(f"{r.src_lang}\t{r.tgt_lang}\t{r.src_text}\t{r.tgt_text}\n")


def make_synthetic_corpus(specs: list[SyntheticLangSpec], pairs: list[tuple[str, str]] | None = None,
                          n_per_pair: int = 1000, length_range: tuple[int, int] = (4, 12),
                          seed: int = 0, pivot: str | None = None) -> ParallelCorpus:
    """Sample ``n_per_pair`` parallel sentences for each ``(src, tgt)`` pair.

    ``pairs`` defaults to both directions between ``pivot`` (the first spec
    unless given) and every other language. A pair with ``src == tgt`` is a
    copy task; otherwise the target substitutes each symbol with its own
    language's character.
    """
    if len(specs) < 2:
        raise ValueError("need at least two language specs")
    by_code = {s.code: s for s in specs}
    if len(by_code) != len(specs):
        raise ValueError("duplicate language codes")
    pivot = pivot or specs[0].code
    if pivot not in by_code:
        raise ValueError(f"pivot {pivot!r} is not among the specs")
    if pairs is None:
        pairs = []
        for s in specs:
            if s.code != pivot:
                pairs += [(s.code, pivot), (pivot, s.code)]
    alphabet = min(s.alphabet_size for s in specs)
    tables = {c: symbol_table(s) for c, s in by_code.items()}
    rng = np.random.default_rng(seed)
    records = []
    for src, tgt in pairs:
        for _ in range(n_per_pair):
            m = sample_meaning(rng, alphabet, length_range)
            records.append(Record(src, tgt, render(m, by_code[src], tables[src]),
                                  render(m, by_code[tgt], tables[tgt])))
    return ParallelCorpus(records)


def make_multiparallel(specs: list[SyntheticLangSpec], n: int, length_range: tuple[int, int] = (4, 12),
                       seed: int = 0) -> dict[str, list[str]]:
    """The same ``n`` meanings rendered in every language."""
    alphabet = min(s.alphabet_size for s in specs)
    rng = np.random.default_rng(seed)
    meanings = [sample_meaning(rng, alphabet, length_range) for _ in range(n)]
    return {s.code: [render(m, s) for m in meanings] for s in specs}


def write_multiparallel(texts: dict[str, list[str]], path) -> None:
    langs = list(texts)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\t".join(langs) + "\n")
        for row in zip(*(texts[l] for l in langs)):
            f.write("\t".join(row) + "\n")


def read_multiparallel(path) -> dict[str, list[str]]:
    """Header row of language codes, then one aligned sentence per column."""
    with open(path, encoding="utf-8", newline="") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip("\n")]
    if not lines:
        raise ValueError(f"{path}: empty file")
    langs = lines[0].split("\t")
    out: dict[str, list[str]] = {l: [] for l in langs}
    for lineno, ln in enumerate(lines[1:], 2):
        cols = ln.split("\t")
        if len(cols) != len(langs):
            raise ValueError(f"{path}:{lineno}: expected {len(langs)} columns, got {len(cols)}")
        for l, c in zip(langs, cols):
            out[l].append(c)
    return out


def is_valid_utf8(data: bytes) -> bool:
    try:
        data.decode("utf-8", errors="strict")
    except UnicodeDecodeError:
        return False
    return True
