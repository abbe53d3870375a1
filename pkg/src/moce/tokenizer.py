"""UTF-8 byte tokenization with prepended language tokens.

Ids 0-255 are raw byte values, 256 is padding, 257 is end-of-sentence and
every language code gets one id from 258 upwards in sorted order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

PAD_ID = 256
EOS_ID = 257
FIRST_LANG_ID = 258


@dataclass(frozen=True)
class Vocab:
    languages: tuple[str, ...]
    lang_to_id: dict[str, int] = field(compare=False, repr=False)

    @property
    def size(self) -> int:
        return FIRST_LANG_ID + len(self.languages)

    def __len__(self) -> int:
        return self.size

    def lang_id(self, code: str) -> int:
        try:
            return self.lang_to_id[code]
        except KeyError:
            raise KeyError(f"unknown language code {code!r}") from None

    def id_to_lang(self, token: int) -> str:
        if not self.is_lang(token):
            raise KeyError(f"id {token} is not a language token")
        return self.languages[token - FIRST_LANG_ID]

    def is_lang(self, token: int) -> bool:
        return FIRST_LANG_ID <= token < self.size

    def token_name(self, token: int) -> str:
        if token == PAD_ID:
            return "<pad>"
        if token == EOS_ID:
            return "</s>"
        if self.is_lang(token):
            return f"<{self.id_to_lang(token)}>"
        return str(token)


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple[int, ...]
    lang: str

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


def build_vocab(language_codes) -> Vocab:
    codes = [c.strip() for c in language_codes]
    if not codes:
        raise ValueError("empty language set")
    seen = set()
    for c in codes:
        if not c:
            raise ValueError("blank language code")
        if c in seen:
            raise ValueError(f"duplicate language code {c!r}")
        seen.add(c)
    ordered = tuple(sorted(codes))
    return Vocab(ordered, {c: FIRST_LANG_ID + i for i, c in enumerate(ordered)})


def encode(text: str, lang: str, vocab: Vocab) -> TokenSeq:
    """``[<lang>] + utf8(text) + [EOS]``."""
    lid = vocab.lang_id(lang)
    return TokenSeq((lid, *text.encode("utf-8"), EOS_ID), lang)


def decode(ids, vocab: Vocab | None = None) -> str:
    """Drop special tokens and decode the remaining bytes, replacing bad UTF-8."""
    if isinstance(ids, TokenSeq):
        ids = ids.ids
    raw = bytes(int(t) for t in ids if 0 <= int(t) < 256)
    return raw.decode("utf-8", errors="replace")
