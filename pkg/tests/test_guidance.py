"""Guidance: word vectors, alignment, controlled mixtures, reconstructor."""

import numpy as np
import pytest

from topicsum import lda, synth
from topicsum.corpus import (
    bow, build_vocab, encode_records, record_token_seqs, tokenize,
)
from topicsum.guidance import (
    GUIDANCE_FLOOR,
    FfnConfig,
    FfnWeights,
    align_to_source,
    controlled_mixture,
    ffn_forward,
    ffn_training_pairs,
    guidance_for_example,
    kl_divergence,
    topic_word_vector,
    train_ffn,
)
from topicsum.lda import LdaConfig, TopicMixture, TopicModel


def toy_model(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return TopicModel.from_phi(rows, LdaConfig(k=rows.shape[0]))


class TestTopicWordVector:
    def test_one_hot_returns_exact_row(self):
        model = toy_model([[0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5]])
        tau = topic_word_vector(model, TopicMixture(np.array([0.0, 1.0])))
        np.testing.assert_array_equal(tau, model.phi[1])

    def test_uniform_mixture_is_mean(self):
        model = toy_model([[0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5]])
        tau = topic_word_vector(model, TopicMixture(np.array([0.5, 0.5])))
        np.testing.assert_allclose(tau, model.phi.mean(axis=0))

    def test_hand_case(self):
        model = toy_model([[0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5]])
        tau = topic_word_vector(model, TopicMixture(np.array([0.3, 0.7])))
        np.testing.assert_allclose(tau, [0.15, 0.15, 0.35, 0.35], atol=1e-15)

    def test_length_mismatch_rejected(self):
        model = toy_model([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError, match="topics"):
            topic_word_vector(model, TopicMixture(np.array([1.0, 0.0, 0.0])))

    def test_linearity(self):
        rng = np.random.default_rng(0)
        phi = rng.dirichlet(np.ones(6), size=3)
        model = toy_model(phi)
        for _ in range(20):
            t1 = rng.dirichlet(np.ones(3))
            t2 = rng.dirichlet(np.ones(3))
            a = rng.uniform()
            lhs = topic_word_vector(model, TopicMixture(a * t1 + (1 - a) * t2))
            rhs = a * topic_word_vector(model, TopicMixture(t1)) + (
                1 - a) * topic_word_vector(model, TopicMixture(t2))
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(1)
        phi = rng.dirichlet(np.ones(10), size=4)
        model = toy_model(phi)
        for _ in range(20):
            tau = topic_word_vector(model, TopicMixture(rng.dirichlet(np.ones(4))))
            np.testing.assert_allclose(tau.sum(), 1.0, atol=1e-9)
            assert (tau >= 0).all()


class TestControlledMixture:
    def test_single_target(self):
        mix = controlled_mixture([(2, 1.0)], 4)
        np.testing.assert_array_equal(mix.theta, [0, 0, 1, 0])

    def test_two_targets_normalized(self):
        mix = controlled_mixture([(0, 1.0), (1, 1.0)], 3)
        np.testing.assert_array_equal(mix.theta, [0.5, 0.5, 0])

    def test_zero_weight_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            controlled_mixture([(1, 0.0)], 3)

    def test_exact_zero_off_target(self):
        mix = controlled_mixture([(1, 0.7), (3, 0.3)], 5)
        assert mix.theta[0] == 0.0 and mix.theta[2] == 0.0 and mix.theta[4] == 0.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="range"):
            controlled_mixture([(4, 1.0)], 3)


class TestAlignToSource:
    def test_stopword_floor(self):
        vocab = build_vocab([["fire", "the", "blaze"]], min_count=1)
        tau = np.zeros(vocab.size)
        tau[vocab.token_to_id["fire"]] = 0.2
        tau[vocab.token_to_id["blaze"]] = 0.1
        tau[vocab.token_to_id["the"]] = 0.7
        source = vocab.encode(["fire", "the", "blaze"])
        gv = align_to_source(tau, source, vocab, stopwords={"the"})
        np.testing.assert_array_equal(gv.scores, [0.2, GUIDANCE_FLOOR, 0.1])

    def test_repeated_word_same_score(self):
        vocab = build_vocab([["storm", "hits"]], min_count=1)
        tau = np.full(vocab.size, 1.0 / vocab.size)
        gv = align_to_source(tau, vocab.encode(["storm", "hits", "storm"]), vocab)
        assert gv.scores[0] == gv.scores[2]

    def test_all_stopwords_constant_floor(self):
        vocab = build_vocab([["the", "a", "of"]], min_count=1)
        tau = np.full(vocab.size, 1.0 / vocab.size)
        gv = align_to_source(tau, vocab.encode(["the", "a", "of"]), vocab,
                             stopwords={"the", "a", "of"})
        np.testing.assert_array_equal(gv.scores, [GUIDANCE_FLOOR] * 3)

    def test_unk_gets_floor(self):
        vocab = build_vocab([["known"]], min_count=1)
        tau = np.full(vocab.size, 1.0 / vocab.size)
        gv = align_to_source(tau, vocab.encode(["known", "martian"]), vocab)
        assert gv.scores[1] == GUIDANCE_FLOOR
        assert gv.scores[0] > GUIDANCE_FLOOR

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        vocab = build_vocab([[f"w{i}" for i in range(12)]], min_count=1)
        tau = rng.dirichlet(np.ones(vocab.size))
        source = list(rng.integers(5, vocab.size, size=9))
        perm = rng.permutation(9)
        direct = align_to_source(tau, [source[i] for i in perm], vocab).scores
        permuted = align_to_source(tau, source, vocab).scores[perm]
        np.testing.assert_array_equal(direct, permuted)


class TestFfn:
    def test_output_sums_to_one(self):
        rng = np.random.default_rng(0)
        weights = FfnWeights(8, FfnConfig(hidden=3, seed=1))
        for _ in range(10):
            out = ffn_forward(rng.uniform(0, 5, size=8), weights)
            np.testing.assert_allclose(out.sum(), 1.0, atol=1e-12)

    def test_zero_init_uniform_output(self):
        weights = FfnWeights(6, FfnConfig())
        out = ffn_forward(np.array([3.0, 0, 1, 0, 0, 2]), weights)
        np.testing.assert_allclose(out, np.full(6, 1 / 6), atol=1e-15)

    def test_negative_freq_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            ffn_forward(np.array([-1.0, 1.0]), FfnWeights(2, FfnConfig()))

    def test_default_epochs_fifteen(self):
        assert FfnConfig().epochs == 15

    def test_loss_non_increasing_on_small_set(self):
        rng = np.random.default_rng(4)
        freqs = rng.uniform(0, 1, size=(10, 12))
        targets = rng.dirichlet(np.ones(12), size=10)
        _, losses = train_ffn(
            list(zip(freqs, targets)),
            FfnConfig(epochs=15, lr=2e-3, batch_size=10, seed=0),
        )
        diffs = np.diff(losses)
        assert (diffs <= 1e-6).all()

    def test_single_pair_converges_to_target_entropy(self):
        rng = np.random.default_rng(5)
        target = rng.dirichlet(np.ones(6))
        freq = rng.uniform(0.2, 1.0, size=6)
        _, losses = train_ffn(
            [(freq, target)], FfnConfig(epochs=400, lr=5e-2, batch_size=1))
        entropy = -(target * np.log(target)).sum()
        assert losses[-1] - entropy < 0.05
        assert losses[-1] >= entropy - 1e-9  # CE lower-bounded by entropy

    def test_save_load_roundtrip(self, tmp_path):
        weights, _ = train_ffn(
            [(np.ones(5), np.full(5, 0.2))], FfnConfig(epochs=2), vocab_hash="vh")
        weights.save(tmp_path / "ffn.ckpt")
        again = FfnWeights.load(tmp_path / "ffn.ckpt")
        assert again.vocab_hash == "vh"
        for name in weights.tensors:
            np.testing.assert_array_equal(
                again.tensors[name].data, weights.tensors[name].data)

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError, match="pairs"):
            train_ffn([], FfnConfig())


@pytest.fixture(scope="module")
def synth_setup():
    """Synthetic corpus + trained topic model, one reference per document.

    The reconstructor's map from source frequencies to a word vector is
    well-posed only with a single target per source, so this fixture keeps
    each document's dominant-topic summary (the one-reference-per-article
    regime the reconstructor exists for).
    """
    cfg = synth.SynthConfig(k_true=3, vocab_per_topic=8, doc_len=36,
                            summary_len=12, n_docs=80, seed=13)
    records, truth = synth.synth_corpus(cfg)
    dominant = {f"d{i:04d}": (a if w >= 0.5 else b)
                for i, (a, b, w) in enumerate(truth["doc_topics"])}
    one_to_one = [r for r in records
                  if r["target_topics"][0][0] == dominant[r["id"].split("-")[0]]]
    train_recs, test_recs = synth.split_records(one_to_one, 0.25)
    vocab = build_vocab(record_token_seqs(records), min_count=1)
    train = encode_records(train_recs, vocab)
    test = encode_records(test_recs, vocab)
    ldacfg = LdaConfig(k=3, alpha=0.5, eta=0.1, iterations=500, burn_in=250,
                       sample_lag=25, seed=0)
    docs = [lda.filter_doc(vocab.encode(tokenize(r["source"])))
            for r in train_recs]
    model = lda.train_gibbs(docs, vocab.size, ldacfg)
    foldin = LdaConfig(k=3, alpha=0.5, eta=0.1, iterations=300, burn_in=150,
                       sample_lag=15, seed=0)
    return vocab, model, train, test, foldin, truth


class TestGuidanceForExample:
    def test_controlled_only_target_words_above_floor(self, synth_setup):
        vocab, _, train, _, _, truth = synth_setup
        true_model = TopicModel.from_phi(
            synth.true_phi(truth, vocab), LdaConfig(k=3))
        ex = train[0]
        topic = ex.target_topics[0][0]
        gv = guidance_for_example(ex, true_model, None, "controlled", vocab)
        for pos, wid in enumerate(ex.source):
            token = vocab.id_to_token[wid]
            if token.startswith(f"t{topic}w"):
                assert gv.scores[pos] > GUIDANCE_FLOOR
            else:
                assert gv.scores[pos] == GUIDANCE_FLOOR

    def test_ffn_mode_length_matches_source(self, synth_setup):
        vocab, model, train, _, foldin, _ = synth_setup
        weights = FfnWeights(vocab.size, FfnConfig())
        ex = train[1]
        gv = guidance_for_example(ex, model, weights, "ffn", vocab)
        assert len(gv) == len(ex.source)

    def test_controlled_without_targets_rejected(self, synth_setup):
        vocab, model, train, _, _, _ = synth_setup
        ex = train[0]
        stripped = type(ex)(id=ex.id, source=ex.source, summary=ex.summary)
        with pytest.raises(ValueError, match="target_topics"):
            guidance_for_example(stripped, model, None, "controlled", vocab)

    def test_unknown_mode_rejected(self, synth_setup):
        vocab, model, train, _, _, _ = synth_setup
        with pytest.raises(ValueError, match="mode"):
            guidance_for_example(train[0], model, None, "oracle", vocab)

    def test_trained_ffn_beats_uniform_kl(self, synth_setup):
        vocab, model, train, test, foldin, _ = synth_setup
        pairs = ffn_training_pairs(train, vocab, model, foldin)
        weights, _ = train_ffn(pairs, FfnConfig(epochs=15, lr=5e-2, batch_size=8, seed=0))
        uniform = np.full(vocab.size, 1.0 / vocab.size)
        better = 0
        for ex in test:
            tau_lda = topic_word_vector(model, lda.fold_in(model, ex.summary, foldin))
            tau_ffn = ffn_forward(bow(ex.source, vocab), weights)
            if kl_divergence(tau_lda, tau_ffn) < 0.5 * kl_divergence(tau_lda, uniform):
                better += 1
        assert better / len(test) >= 0.9

    def test_lda_target_and_ffn_agree_on_argmax(self, synth_setup):
        vocab, model, train, test, foldin, _ = synth_setup
        pairs = ffn_training_pairs(train, vocab, model, foldin)
        weights, _ = train_ffn(pairs, FfnConfig(epochs=15, lr=5e-2, batch_size=8, seed=0))
        agree = 0
        for ex in test:
            gv_a = guidance_for_example(ex, model, weights, "lda-target", vocab,
                                        foldin_cfg=foldin)
            gv_b = guidance_for_example(ex, model, weights, "ffn", vocab)
            agree += int(np.argmax(gv_a.scores) == np.argmax(gv_b.scores))
        assert agree / len(test) >= 0.7
