"""Tokenizer, vocabulary, bag-of-words, JSONL, and synthetic generator."""

import numpy as np
import pytest

from topicsum import synth
from topicsum.corpus import (
    DEFAULT_STOPWORDS,
    N_RESERVED,
    UNK,
    Vocabulary,
    bow,
    build_vocab,
    dataset_hash,
    encode_records,
    read_jsonl,
    record_token_seqs,
    tokenize,
    write_jsonl,
)


class TestTokenize:
    def test_basic_sentence(self):
        assert tokenize("The cat sat.") == ["the", "cat", "sat", "."]

    def test_empty(self):
        assert tokenize("") == []

    def test_hyphen_kept_digits_kept(self):
        assert tokenize("Fire-fighters, 2010") == ["fire-fighters", ",", "2010"]

    def test_leading_and_trailing_punctuation(self):
        assert tokenize('"Hello!"') == ['"', "hello", "!", '"']

    def test_pure_punctuation_chunk(self):
        assert tokenize("--") == ["-", "-"]


class TestVocabulary:
    def test_min_count_filters(self):
        vocab = build_vocab([["a", "a", "b"]], min_count=2)
        assert "a" in vocab.token_to_id
        assert "b" not in vocab.token_to_id
        assert vocab.encode(["b"]) == [UNK]

    def test_min_count_one_keeps_everything(self):
        vocab = build_vocab([["a", "b"], ["c"]], min_count=1)
        assert {"a", "b", "c"} <= set(vocab.token_to_id)

    def test_roundtrip_identity(self):
        vocab = build_vocab([["red", "fox", "jumps"]], min_count=1)
        tokens = ["fox", "jumps", "red", "fox"]
        assert vocab.decode(vocab.encode(tokens)) == tokens

    def test_ids_dense_and_reserved(self):
        vocab = build_vocab([["x", "y", "z"]], min_count=1)
        assert sorted(vocab.token_to_id.values()) == list(range(vocab.size))
        assert vocab.id_to_token[:N_RESERVED] == [
            "<pad>", "<bos>", "<eos>", "<unk>", "<sep>"]

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            build_vocab([], min_count=1)

    def test_save_load_preserves_hash(self, tmp_path):
        vocab = build_vocab([["alpha", "beta"]], min_count=1)
        vocab.save(tmp_path / "v.json")
        again = Vocabulary.load(tmp_path / "v.json")
        assert again.content_hash() == vocab.content_hash()
        assert again.id_to_token == vocab.id_to_token

    def test_default_stopwords_size(self):
        assert len(DEFAULT_STOPWORDS) == 50


class TestBow:
    def test_counts(self):
        vocab = build_vocab([["a", "a", "b"]], min_count=1)
        vec = bow(vocab.encode(["a", "a", "b"]), vocab)
        assert vec[vocab.token_to_id["a"]] == 2
        assert vec[vocab.token_to_id["b"]] == 1
        assert vec.sum() == 3

    def test_empty(self):
        vocab = build_vocab([["a"]], min_count=1)
        assert bow([], vocab).sum() == 0

    def test_conservation_excludes_reserved(self):
        rng = np.random.default_rng(0)
        vocab = build_vocab([[f"w{i}" for i in range(20)]], min_count=1)
        for _ in range(25):
            n = int(rng.integers(0, 30))
            ids = list(rng.integers(0, vocab.size, size=n))
            expected = sum(1 for i in ids if i >= N_RESERVED)
            assert bow(ids, vocab).sum() == expected


class TestJsonl:
    def test_roundtrip_and_encode(self, tmp_path):
        records = [
            {"id": "x1", "source": "The fox runs.", "summary": "fox runs",
             "target_topics": [[0, 1.0]]},
            {"id": "x2", "source": "dogs bark", "summary": "bark",
             "topic_prompt": "dogs"},
        ]
        path = tmp_path / "d.jsonl"
        write_jsonl(path, records)
        loaded = read_jsonl(path)
        assert [r["id"] for r in loaded] == ["x1", "x2"]
        vocab = build_vocab(record_token_seqs(loaded), min_count=1)
        examples = encode_records(loaded, vocab)
        assert examples[0].target_topics == [(0, 1.0)]
        assert vocab.decode(examples[1].topic_prompt) == ["dogs"]
        assert dataset_hash(loaded) == dataset_hash(read_jsonl(path))

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"source": "no id"}\n')
        with pytest.raises(ValueError, match="id"):
            read_jsonl(path)

    def test_empty_source_rejected(self):
        vocab = build_vocab([["a"]], min_count=1)
        with pytest.raises(ValueError, match="empty source"):
            encode_records([{"id": "e", "source": "", "summary": "a"}], vocab)


class TestSynthCorpus:
    def test_deterministic(self):
        cfg = synth.SynthConfig(seed=7)
        a, _ = synth.synth_corpus(cfg)
        b, _ = synth.synth_corpus(synth.SynthConfig(seed=7))
        assert a == b

    def test_different_seed_differs(self):
        a, _ = synth.synth_corpus(synth.SynthConfig(seed=1))
        b, _ = synth.synth_corpus(synth.SynthConfig(seed=2))
        assert a != b

    def test_summaries_pure_under_disjoint_vocabs(self):
        cfg = synth.SynthConfig(k_true=2, n_docs=30, seed=3)
        records, _ = synth.synth_corpus(cfg)
        for rec in records:
            topic = rec["target_topics"][0][0]
            prefix = f"t{topic}w"
            assert all(tok.startswith(prefix) for tok in rec["summary"].split())

    def test_topic_mass_concentrates(self):
        # at least 95% of summary token mass lands on the labeled topic's
        # words (100% here because vocabularies are disjoint)
        records, _ = synth.synth_corpus(synth.SynthConfig(k_true=3, n_docs=50, seed=5))
        per_topic: dict[int, list[int]] = {}
        for rec in records:
            topic = rec["target_topics"][0][0]
            toks = rec["summary"].split()
            own = sum(tok.startswith(f"t{topic}w") for tok in toks)
            per_topic.setdefault(topic, []).append((own, len(toks)))
        for topic, counts in per_topic.items():
            own = sum(o for o, _ in counts)
            total = sum(t for _, t in counts)
            assert own / total >= 0.95

    def test_two_summaries_per_document(self):
        records, truth = synth.synth_corpus(synth.SynthConfig(n_docs=10, seed=0))
        assert len(records) == 20
        for i in range(0, 20, 2):
            assert records[i]["source"] == records[i + 1]["source"]
            assert records[i]["target_topics"] != records[i + 1]["target_topics"]

    def test_vocab_per_topic_too_small_rejected(self):
        with pytest.raises(ValueError):
            synth.synth_corpus(synth.SynthConfig(vocab_per_topic=1))

    def test_true_phi_rows_are_distributions(self):
        records, truth = synth.synth_corpus(synth.SynthConfig(seed=11))
        vocab = build_vocab(record_token_seqs(records), min_count=1)
        phi = synth.true_phi(truth, vocab)
        np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-12)

    def test_split_keeps_pairs_together(self):
        records, _ = synth.synth_corpus(synth.SynthConfig(n_docs=20, seed=2))
        train, test = synth.split_records(records, test_fraction=0.25)
        assert len(train) + len(test) == len(records)
        for part in (train, test):
            ids = [r["id"].split("-")[0] for r in part]
            assert all(ids.count(d) == 2 for d in set(ids))
