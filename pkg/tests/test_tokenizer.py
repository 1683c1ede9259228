import json

import numpy as np
import pytest

from conftest import SP, random_utf8_text
from matcha.errors import (
    EmptyInputError,
    TokenRangeError,
    VocabularyFormatError,
    VocabularyIntegrityError,
)
from matcha.tokenizer import (
    WordVocabulary,
    build_word_vocabulary,
    byte_to_unicode,
    decode,
    encode,
    load_vocabulary,
)
from oracles import bpe_encode_naive


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestLoadVocabulary:
    def test_minimal_vocab(self, tmp_path):
        vocab_path = _write(tmp_path / "v.json", json.dumps({"a": 0, "b": 1, "c": 2}))
        merges_path = _write(tmp_path / "m.txt", "#header\n")
        vocab = load_vocabulary(vocab_path, merges_path)
        assert vocab.vocab_size == 3
        assert vocab.merges == []

    def test_merge_result_missing_from_vocab(self, tmp_path):
        vocab_path = _write(tmp_path / "v.json", json.dumps({"a": 0, "b": 1}))
        merges_path = _write(tmp_path / "m.txt", "#header\na b\n")
        with pytest.raises(VocabularyIntegrityError, match="'ab'"):
            load_vocabulary(vocab_path, merges_path)

    def test_duplicate_id(self, tmp_path):
        vocab_path = _write(tmp_path / "v.json", json.dumps({"a": 0, "b": 0}))
        merges_path = _write(tmp_path / "m.txt", "#header\n")
        with pytest.raises(VocabularyIntegrityError, match="duplicate id"):
            load_vocabulary(vocab_path, merges_path)

    def test_sparse_ids_rejected(self, tmp_path):
        vocab_path = _write(tmp_path / "v.json", json.dumps({"a": 0, "b": 2}))
        merges_path = _write(tmp_path / "m.txt", "#header\n")
        with pytest.raises(VocabularyIntegrityError):
            load_vocabulary(vocab_path, merges_path)

    def test_malformed_json_names_line(self, tmp_path):
        vocab_path = _write(tmp_path / "v.json", '{"a": 0,\n "b": }')
        merges_path = _write(tmp_path / "m.txt", "#header\n")
        with pytest.raises(VocabularyFormatError, match="line 2"):
            load_vocabulary(vocab_path, merges_path)

    def test_malformed_merge_line(self, tmp_path):
        vocab_path = _write(tmp_path / "v.json", json.dumps({"a": 0}))
        merges_path = _write(tmp_path / "m.txt", "#header\na b c\n")
        with pytest.raises(VocabularyFormatError, match="m.txt:2"):
            load_vocabulary(vocab_path, merges_path)

    def test_full_fixture_loads(self, bpe_vocab):
        assert bpe_vocab.vocab_size == 256 + len(bpe_vocab.merges)


class TestEncode:
    def test_empty_text(self, bpe_vocab):
        with pytest.raises(EmptyInputError):
            encode(bpe_vocab, "")

    def test_single_char_no_merges(self, bpe_vocab):
        ids = encode(bpe_vocab, "q")
        assert ids == [bpe_vocab.token_to_id["q"]]

    def test_merges_fire(self, bpe_vocab):
        # "t h" outranks the space merges in the fixture, so " the" stays
        # two tokens: the space, then the fully merged word.
        assert encode(bpe_vocab, "the") == [bpe_vocab.token_to_id["the"]]
        assert encode(bpe_vocab, " the") == [
            bpe_vocab.token_to_id[SP],
            bpe_vocab.token_to_id["the"],
        ]

    def test_matches_naive_oracle_on_sentences(self, bpe_vocab, bpe_files):
        sentences = [
            "the cat sat on the mat",
            "hello world",
            "this and that, or the other!",
            "  leading and   internal spaces ",
            "tab\tand\nnewline",
            "numbers 12345 mixed with words",
            "don't stop, it's fine",
            "ünïcödé wörds përsist",
        ]
        for text in sentences:
            expected = bpe_encode_naive(bpe_files.merges, bpe_files.token_to_id, text, 512)
            assert encode(bpe_vocab, text) == expected, text

    def test_determinism(self, bpe_vocab):
        text = "the world and his cat"
        assert encode(bpe_vocab, text) == encode(bpe_vocab, text)

    def test_truncation(self, bpe_vocab):
        text = " ".join(["word"] * 50)
        assert len(encode(bpe_vocab, text, max_len=7)) == 7

    def test_bad_max_len(self, bpe_vocab):
        with pytest.raises(ValueError):
            encode(bpe_vocab, "a", max_len=0)


class TestDecode:
    def test_round_trip_hello_world(self, bpe_vocab):
        assert decode(bpe_vocab, encode(bpe_vocab, "hello world")) == "hello world"

    def test_round_trip_multibyte(self, bpe_vocab):
        text = "héllo wörld — ça va? 日本語 🙂"
        assert decode(bpe_vocab, encode(bpe_vocab, text)) == text

    def test_unknown_id(self, bpe_vocab):
        with pytest.raises(TokenRangeError):
            decode(bpe_vocab, [bpe_vocab.vocab_size])

    def test_round_trip_random_strings(self, bpe_vocab):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            text = random_utf8_text(rng)
            assert decode(bpe_vocab, encode(bpe_vocab, text)) == text


class TestByteEncoder:
    def test_bijection(self):
        mapping = byte_to_unicode()
        assert len(mapping) == 256
        assert len(set(mapping.values())) == 256
        inverse = {c: b for b, c in mapping.items()}
        for b in range(256):
            assert inverse[mapping[b]] == b


class TestWordVocabulary:
    def test_build_and_round_trip(self):
        vocab = build_word_vocabulary(["the cat sat", "the dog ran"])
        ids = vocab.encode("the cat ran")
        assert vocab.decode(ids) == "the cat ran"

    def test_unknown_maps_to_unk(self):
        vocab = build_word_vocabulary(["a b"])
        assert vocab.encode("zebra") == [vocab.token_to_id[WordVocabulary.UNK]]

    def test_empty_text(self):
        vocab = build_word_vocabulary(["a"])
        with pytest.raises(EmptyInputError):
            vocab.encode("   ")

    def test_truncation(self):
        vocab = build_word_vocabulary(["a b c d e"])
        assert len(vocab.encode("a b c d e", max_len=3)) == 3

    def test_save_load(self, tmp_path):
        vocab = build_word_vocabulary(["the cat sat"])
        path = str(tmp_path / "word.json")
        vocab.save(path)
        loaded = WordVocabulary.load(path)
        assert loaded.token_to_id == vocab.token_to_id

    def test_unknown_id_on_decode(self):
        vocab = build_word_vocabulary(["a"])
        with pytest.raises(TokenRangeError):
            vocab.decode([99])
