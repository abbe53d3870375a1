import pytest
from hypothesis import given, settings, strategies as st

from moce.tokenizer import EOS_ID, FIRST_LANG_ID, PAD_ID, TokenSeq, build_vocab, decode, encode


@pytest.fixture
def vocab():
    return build_vocab(["fr", "en", "zh"])


def test_language_ids_follow_sorted_codes(vocab):
    assert vocab.languages == ("en", "fr", "zh")
    assert [vocab.lang_id(c) for c in ("en", "fr", "zh")] == [258, 259, 260]
    assert vocab.size == 258 + 3
    assert vocab.id_to_lang(259) == "fr"


def test_vocab_is_independent_of_input_order():
    assert build_vocab(["b", "a", "c"]) == build_vocab(["c", "b", "a"])


def test_vocab_rejects_empty_and_duplicates():
    with pytest.raises(ValueError, match="empty"):
        build_vocab([])
    with pytest.raises(ValueError, match="duplicate language code 'en'"):
        build_vocab(["en", "fr", "en"])


def test_unknown_language_names_the_code(vocab):
    with pytest.raises(KeyError, match="'de'"):
        encode("hallo", "de", vocab)


def test_encode_layout(vocab):
    seq = encode("hé", "fr", vocab)
    assert seq == TokenSeq((259, 0x68, 0xC3, 0xA9, EOS_ID), "fr")


def test_empty_string_is_two_tokens(vocab):
    assert encode("", "en", vocab).ids == (258, EOS_ID)


def test_token_names(vocab):
    assert vocab.token_name(PAD_ID) == "<pad>"
    assert vocab.token_name(EOS_ID) == "</s>"
    assert vocab.token_name(FIRST_LANG_ID) == "<en>"
    assert vocab.token_name(65) == "65"


@settings(max_examples=300, deadline=None)
@given(st.text())
def test_roundtrip_and_length_law(text):
    vocab = build_vocab(["en"])
    seq = encode(text, "en", vocab)
    assert len(seq) == len(text.encode("utf-8")) + 2
    assert decode(seq, vocab) == text
    assert all(0 <= t < 256 for t in seq.ids[1:-1])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 300)))
def test_decode_is_total(ids):
    out = decode(ids)
    assert isinstance(out, str)


def test_decode_replaces_invalid_bytes():
    assert decode([0xFF, 0x61]) == "�a"
    assert decode([0xE4, 0xB8]) == "�"
    assert decode([258, 0x61, EOS_ID, PAD_ID]) == "a"
