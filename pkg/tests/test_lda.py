"""Gibbs LDA: posterior behavior, likelihood estimation, model selection."""

import math

import numpy as np
import pytest

from topicsum import gibbs, lda
from topicsum.corpus import Vocabulary, build_vocab, tokenize, record_token_seqs
from topicsum import synth

from oracles import exact_lda_posterior, exact_foldin_posterior, relabeled_gibbs_means

VOCAB = Vocabulary(["a", "b", "c", "d"])
A, B, C, D = (VOCAB.token_to_id[t] for t in "abcd")
TWO_DOCS = [np.array([A, B, A, B]), np.array([C, D, C, D])]


def small_cfg(**kw):
    base = dict(k=2, alpha=0.1, eta=0.01, iterations=600, burn_in=300,
                sample_lag=10, seed=0)
    base.update(kw)
    return lda.LdaConfig(**base)


class TestTrainGibbs:
    def test_single_word_corpus_concentrates(self):
        # only one word exists, so both (sample-averaged) rows favor it
        model = lda.train_gibbs([np.array([A, A, A])], VOCAB.size, small_cfg(alpha=None))
        assert model.phi[0, A] > 0.5
        assert model.phi[1, A] > 0.5

    def test_disjoint_docs_separate_topics(self):
        model = lda.train_gibbs(TWO_DOCS, VOCAB.size, small_cfg())
        mass_ab = model.phi[:, [A, B]].sum(axis=1)
        mass_cd = model.phi[:, [C, D]].sum(axis=1)
        # one topic owns {a,b}, the other {c,d}
        assert max(min(mass_ab[0], mass_cd[1]), min(mass_cd[0], mass_ab[1])) >= 0.9

    def test_same_seed_identical_phi(self):
        m1 = lda.train_gibbs(TWO_DOCS, VOCAB.size, small_cfg(seed=5))
        m2 = lda.train_gibbs(TWO_DOCS, VOCAB.size, small_cfg(seed=5))
        np.testing.assert_array_equal(m1.phi, m2.phi)

    def test_phi_rows_valid_distributions(self):
        model = lda.train_gibbs(TWO_DOCS, VOCAB.size, small_cfg())
        np.testing.assert_allclose(model.phi.sum(axis=1), 1.0, atol=1e-9)
        assert (model.phi > 0).all()

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            lda.train_gibbs([], VOCAB.size, small_cfg())

    def test_empty_document_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            lda.train_gibbs([np.array([A]), np.array([], dtype=np.int64)],
                            VOCAB.size, small_cfg())

    def test_count_conservation_every_iteration(self):
        # run sweeps by hand and check the bookkeeping each time
        rng = np.random.default_rng(0)
        docs = TWO_DOCS
        doc_ids = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        word_ids = np.concatenate(docs)
        z = rng.integers(0, 2, size=8)
        n_dk = np.zeros((2, 2), dtype=np.int64)
        n_kw = np.zeros((2, VOCAB.size), dtype=np.int64)
        n_k = np.zeros(2, dtype=np.int64)
        np.add.at(n_dk, (doc_ids, z), 1)
        np.add.at(n_kw, (z, word_ids), 1)
        np.add.at(n_k, z, 1)
        for _ in range(50):
            gibbs.train_sweep(z, doc_ids, word_ids, n_dk, n_kw, n_k,
                              0.5, 0.01, VOCAB.size, rng.random(8))
            np.testing.assert_array_equal(n_dk.sum(axis=1), [4, 4])
            np.testing.assert_array_equal(n_kw.sum(axis=1), n_k)
            assert n_k.sum() == 8
            assert (n_dk >= 0).all() and (n_kw >= 0).all()


@pytest.mark.skipif(gibbs.train_sweep_numba is None, reason="numba unavailable")
def test_backends_bit_identical():
    rng = np.random.default_rng(9)
    doc_ids = np.repeat(np.arange(3), 6)
    word_ids = rng.integers(5, VOCAB.size, size=18)
    z = rng.integers(0, 2, size=18)

    def counts(zz):
        n_dk = np.zeros((3, 2), dtype=np.int64)
        n_kw = np.zeros((2, VOCAB.size), dtype=np.int64)
        n_k = np.zeros(2, dtype=np.int64)
        np.add.at(n_dk, (doc_ids, zz), 1)
        np.add.at(n_kw, (zz, word_ids), 1)
        np.add.at(n_k, zz, 1)
        return n_dk, n_kw, n_k

    z_nb, z_np = z.copy(), z.copy()
    c_nb, c_np = counts(z_nb), counts(z_np)
    for _ in range(200):
        u = rng.random(18)
        gibbs.train_sweep_numba(z_nb, doc_ids, word_ids, *c_nb, 0.3, 0.05,
                                VOCAB.size, u)
        gibbs.train_sweep_numpy(z_np, doc_ids, word_ids, *c_np, 0.3, 0.05,
                                VOCAB.size, u)
    np.testing.assert_array_equal(z_nb, z_np)
    for a, b in zip(c_nb, c_np):
        np.testing.assert_array_equal(a, b)


@pytest.fixture(scope="module")
def foldin_model():
    return lda.train_gibbs(TWO_DOCS, VOCAB.size, small_cfg())


class TestFoldIn:

    def test_theta_sums_to_one(self, foldin_model):
        model = foldin_model
        mix = lda.fold_in(model, [A, B, A])
        np.testing.assert_allclose(mix.theta.sum(), 1.0, atol=1e-9)
        assert (mix.theta >= 0).all()

    def test_pure_topic_doc_concentrates(self, foldin_model):
        model = foldin_model
        mix = lda.fold_in(model, [A, B, A, B])
        ab_topic = int(np.argmax(model.phi[:, [A, B]].sum(axis=1)))
        assert mix.theta[ab_topic] >= 0.9

    def test_empty_doc_uniform_with_flag(self, foldin_model):
        model = foldin_model
        mix = lda.fold_in(model, [0, 1, 3])  # reserved ids only
        assert mix.uniform_fallback
        np.testing.assert_array_equal(mix.theta, [0.5, 0.5])

    def test_matches_enumeration(self, foldin_model):
        model = foldin_model
        doc = np.array([A, B, A])
        exact = exact_foldin_posterior(doc, model.phi, 0.1)
        mine = lda.fold_in(
            model, doc,
            small_cfg(iterations=2000, burn_in=500, sample_lag=5, seed=3),
        ).theta
        assert np.abs(exact - mine).max() < 0.05


class TestNegLogLikelihood:
    def test_single_token_closed_form(self):
        vocab = Vocabulary(["a"])
        cfg = lda.LdaConfig(k=1, alpha=1.0, eta=0.01, iterations=100,
                            burn_in=50, sample_lag=5, seed=0)
        model = lda.train_gibbs([np.array([5])], vocab.size, cfg)
        # one token, one topic: P(corpus) = eta / (V * eta) = 1 / V
        assert abs(lda.neg_log_likelihood(model) - math.log(vocab.size)) < 1e-6

    def test_duplicated_corpus_roughly_doubles(self):
        rng = np.random.default_rng(1)
        vocab = Vocabulary([f"w{i}" for i in range(12)])
        docs = [rng.integers(5, vocab.size, size=20) for _ in range(8)]
        cfg = lda.LdaConfig(k=2, alpha=0.5, eta=0.5, iterations=800,
                            burn_in=400, sample_lag=20, seed=0)
        single = lda.neg_log_likelihood(lda.train_gibbs(docs, vocab.size, cfg))
        doubled = lda.neg_log_likelihood(
            lda.train_gibbs(docs + [d.copy() for d in docs], vocab.size, cfg))
        assert 1.6 < doubled / single < 2.4

    def test_finite_on_ten_docs(self):
        rng = np.random.default_rng(2)
        vocab = Vocabulary([f"w{i}" for i in range(30)])
        docs = [rng.integers(5, vocab.size, size=50) for _ in range(10)]
        model = lda.train_gibbs(docs, vocab.size, small_cfg(k=5, alpha=None))
        assert np.isfinite(lda.neg_log_likelihood(model))

    def test_no_samples_rejected(self):
        model = lda.TopicModel.from_phi(
            np.full((2, VOCAB.size), 1.0 / VOCAB.size), small_cfg())
        with pytest.raises(ValueError, match="samples"):
            lda.neg_log_likelihood(model)


class TestSelectK:
    def test_single_candidate_returned(self):
        best, model, table = lda.select_k(
            TWO_DOCS, [2], small_cfg(iterations=200, burn_in=100), VOCAB.size)
        assert best == 2 and model.k == 2 and len(table) == 1

    def test_default_candidates(self):
        assert lda.DEFAULT_CANDIDATE_KS == (50, 100, 150, 200, 250, 300)

    def test_failures_recorded_and_skipped(self):
        # k=0 fails validation, k=2 succeeds
        best, _, table = lda.select_k(
            TWO_DOCS, [0, 2], small_cfg(iterations=200, burn_in=100), VOCAB.size)
        assert best == 2
        assert "error" in table[0] and "neg_log_likelihood" in table[1]

    def test_all_failures_raise(self):
        with pytest.raises(RuntimeError):
            lda.select_k(TWO_DOCS, [0, -1],
                         small_cfg(iterations=200, burn_in=100), VOCAB.size)

    def test_recovers_true_topic_count_one_seed(self):
        cfg = synth.SynthConfig(k_true=3, vocab_per_topic=8, doc_len=40,
                                summary_len=12, n_docs=60, seed=0)
        records, _ = synth.synth_corpus(cfg)
        vocab = build_vocab(record_token_seqs(records), min_count=1)
        seen, docs = set(), []
        for rec in records:
            doc_id = rec["id"].split("-")[0]
            if doc_id in seen:
                continue
            seen.add(doc_id)
            docs.append(lda.filter_doc(vocab.encode(tokenize(rec["source"]))))
        base = lda.LdaConfig(alpha=0.5, eta=0.5, iterations=600, burn_in=300,
                             sample_lag=30, seed=0)
        best, _, _ = lda.select_k(docs, [2, 3, 5], base, vocab.size)
        assert best == 3


class TestEnumerationOracle:
    @pytest.mark.parametrize("docs", [
        [[A, B, A, B], [C, D, C, D]],
        [[A, A, A]],
        [[A, B, A], [C, D]],
    ])
    def test_gibbs_matches_exact_posterior(self, docs):
        docs = [np.array(d) for d in docs]
        theta_ex, phi_ex = exact_lda_posterior(docs, VOCAB.size, 2, 0.5, 0.01)
        for seed in range(3):
            cfg = lda.LdaConfig(k=2, alpha=0.5, eta=0.01, iterations=2000,
                                burn_in=500, sample_lag=5, seed=seed)
            model = lda.train_gibbs(docs, VOCAB.size, cfg, keep_samples=True)
            theta_g, phi_g = relabeled_gibbs_means(model, docs, VOCAB.size)
            assert np.abs(theta_g - theta_ex).max() < 0.05
            assert np.abs(phi_g - phi_ex).max() < 0.05


class TestPersistence:
    def test_roundtrip_bit_exact(self, tmp_path):
        model = lda.train_gibbs(TWO_DOCS, VOCAB.size, small_cfg(),
                                stopword_ids=(7,), vocab_hash="abc")
        path = tmp_path / "lda.ckpt"
        model.save(path)
        again = lda.TopicModel.load(path)
        np.testing.assert_array_equal(again.phi, model.phi)
        np.testing.assert_array_equal(again.n_kw, model.n_kw)
        np.testing.assert_array_equal(again.sample_log_liks, model.sample_log_liks)
        assert again.config == model.config
        assert again.vocab_hash == "abc"
        assert again.stopword_ids == (7,)

    def test_wrong_kind_rejected(self, tmp_path):
        from topicsum.serialize import write_checkpoint
        path = tmp_path / "other.ckpt"
        write_checkpoint(path, "ffn", {}, {"w": np.zeros(2)})
        with pytest.raises(ValueError, match="lda"):
            lda.TopicModel.load(path)
