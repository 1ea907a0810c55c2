"""Collapsed-Gibbs LDA: training, fold-in for held-out documents, corpus
likelihood estimation, and model selection over the topic count."""

import math
from dataclasses import dataclass, asdict, replace

import numpy as np
from scipy.special import gammaln, logsumexp

from . import gibbs
from .corpus import N_RESERVED, Vocabulary
from .serialize import write_checkpoint, read_checkpoint, config_digest


@dataclass
class LdaConfig:
    k: int = 10
    alpha: float | None = None   # document-topic prior; None -> 50/k
    eta: float = 0.01            # topic-word prior
    iterations: int = 1000
    burn_in: int = 500
    sample_lag: int = 50
    seed: int = 0

    @property
    def resolved_alpha(self) -> float:
        return 50.0 / self.k if self.alpha is None else self.alpha

    def validate(self) -> None:
        # k == 1 is permitted: degenerate but well-defined, and the closed-form
        # likelihood checks rely on it.
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.resolved_alpha <= 0 or self.eta <= 0:
            raise ValueError("alpha and eta must be positive")
        if not self.iterations > self.burn_in >= 0:
            raise ValueError("need iterations > burn_in >= 0")
        if self.sample_lag < 1:
            raise ValueError("sample_lag must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TopicMixture:
    """Per-document topic probabilities; sums to 1."""

    theta: np.ndarray
    uniform_fallback: bool = False  # set when the doc had no usable tokens


class TopicModel:
    """Topic-word distributions plus the state needed for fold-in and
    likelihood estimation.

    phi is the posterior-mean estimate over retained post-burn-in samples;
    final assignment counts (n_kw, n_k) and per-sample corpus log
    likelihoods ride along. Immutable after training; safe for shared reads.
    """

    def __init__(self, phi: np.ndarray, n_kw: np.ndarray, n_k: np.ndarray,
                 config: LdaConfig, vocab_hash: str = "",
                 stopword_ids: tuple = (),
                 sample_log_liks: np.ndarray | None = None,
                 doc_thetas: np.ndarray | None = None,
                 z_samples: np.ndarray | None = None):
        self.phi = phi
        self.n_kw = n_kw
        self.n_k = n_k
        self.config = config
        self.vocab_hash = vocab_hash
        self.stopword_ids = tuple(int(i) for i in stopword_ids)
        self.sample_log_liks = (
            np.asarray(sample_log_liks, dtype=np.float64)
            if sample_log_liks is not None else np.empty(0)
        )
        self.doc_thetas = doc_thetas
        self.z_samples = z_samples

    @property
    def k(self) -> int:
        return self.phi.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.phi.shape[1]

    @classmethod
    def from_phi(cls, phi: np.ndarray, config: LdaConfig, vocab_hash: str = "",
                 stopword_ids: tuple = ()) -> "TopicModel":
        """Wrap externally supplied topic-word rows (e.g. generator truth).

        Unlike Gibbs-trained models, such rows may contain exact zeros.
        """
        phi = np.asarray(phi, dtype=np.float64)
        if not np.allclose(phi.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("phi rows must sum to 1")
        zeros = np.zeros_like(phi)
        return cls(phi, zeros, np.zeros(phi.shape[0]), config, vocab_hash,
                   stopword_ids)

    def save(self, path) -> None:
        header = {
            "config": self.config.to_dict(),
            "config_digest": config_digest(self.config.to_dict()),
            "seed": self.config.seed,
            "vocab_hash": self.vocab_hash,
            "stopword_ids": list(self.stopword_ids),
        }
        write_checkpoint(path, "lda", header, {
            "phi": self.phi,
            "n_kw": self.n_kw.astype(np.float64),
            "n_k": self.n_k.astype(np.float64),
            "sample_log_liks": self.sample_log_liks,
        })

    @classmethod
    def load(cls, path) -> "TopicModel":
        _, header, tensors = read_checkpoint(path, expect_kind="lda")
        cfg_dict = dict(header["config"])
        cfg = LdaConfig(**cfg_dict)
        return cls(
            tensors["phi"], tensors["n_kw"], tensors["n_k"], cfg,
            header.get("vocab_hash", ""),
            tuple(header.get("stopword_ids", ())),
            tensors.get("sample_log_liks"),
        )


def filter_doc(ids, stopword_ids=()) -> np.ndarray:
    """Keep content-word ids: drop reserved (PAD/BOS/EOS/UNK/SEP) and stopwords."""
    drop = set(stopword_ids)
    return np.array([i for i in ids if i >= N_RESERVED and i not in drop],
                    dtype=np.int64)


def stopword_id_set(vocab: Vocabulary, stopwords) -> tuple:
    return tuple(sorted(vocab.token_to_id[t] for t in stopwords
                        if t in vocab.token_to_id))


def _assignment_log_lik(n_kw, n_k, eta, vocab_size) -> float:
    """log P(words | z) with phi integrated out (Dirichlet-multinomial)."""
    K = n_k.shape[0]
    return float(
        K * gammaln(vocab_size * eta)
        - K * vocab_size * gammaln(eta)
        + gammaln(n_kw + eta).sum()
        - gammaln(n_k + vocab_size * eta).sum()
    )


def train_gibbs(docs: list, vocab_size: int, cfg: LdaConfig,
                keep_samples: bool = False, stopword_ids: tuple = (),
                vocab_hash: str = "") -> TopicModel:
    """Train by collapsed Gibbs sampling.

    ``docs`` are arrays of content-word ids (see filter_doc). phi and the
    per-training-doc thetas are posterior means over post-burn-in samples
    taken every ``sample_lag`` iterations.
    """
    cfg.validate()
    if not docs:
        raise ValueError("empty corpus")
    for i, doc in enumerate(docs):
        if len(doc) == 0:
            raise ValueError(f"document {i} is empty after filtering")

    K = cfg.k
    alpha = cfg.resolved_alpha
    eta = cfg.eta
    doc_ids = np.concatenate([np.full(len(d), i, dtype=np.int64)
                              for i, d in enumerate(docs)])
    word_ids = np.concatenate([np.asarray(d, dtype=np.int64) for d in docs])
    if word_ids.min() < 0 or word_ids.max() >= vocab_size:
        raise ValueError("word id out of range")
    n_tokens = word_ids.shape[0]
    n_docs = len(docs)
    doc_lens = np.array([len(d) for d in docs], dtype=np.float64)

    rng = np.random.default_rng(cfg.seed)
    z = rng.integers(0, K, size=n_tokens, dtype=np.int64)

    n_dk = np.zeros((n_docs, K), dtype=np.int64)
    n_kw = np.zeros((K, vocab_size), dtype=np.int64)
    n_k = np.zeros(K, dtype=np.int64)
    np.add.at(n_dk, (doc_ids, z), 1)
    np.add.at(n_kw, (z, word_ids), 1)
    np.add.at(n_k, z, 1)

    phi_acc = np.zeros((K, vocab_size))
    theta_acc = np.zeros((n_docs, K))
    log_liks: list[float] = []
    z_samples: list[np.ndarray] = []

    for it in range(cfg.iterations):
        uniforms = rng.random(n_tokens)
        gibbs.train_sweep(z, doc_ids, word_ids, n_dk, n_kw, n_k,
                          alpha, eta, vocab_size, uniforms)
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.sample_lag == 0:
            phi_acc += (n_kw + eta) / (n_k + vocab_size * eta)[:, None]
            theta_acc += (n_dk + alpha) / (doc_lens + K * alpha)[:, None]
            log_liks.append(_assignment_log_lik(n_kw, n_k, eta, vocab_size))
            if keep_samples:
                z_samples.append(z.copy())

    n_samples = len(log_liks)
    model = TopicModel(
        phi=phi_acc / n_samples,
        n_kw=n_kw,
        n_k=n_k,
        config=cfg,
        vocab_hash=vocab_hash,
        stopword_ids=stopword_ids,
        sample_log_liks=np.array(log_liks),
        doc_thetas=theta_acc / n_samples,
        z_samples=np.stack(z_samples) if z_samples else None,
    )
    return model


def fold_in(model: TopicModel, ids, cfg: LdaConfig | None = None) -> TopicMixture:
    """Infer a held-out document's topic mixture with phi frozen.

    ``ids`` may still contain stopwords/reserved ids; they are filtered with
    the model's stopword set. A document with no usable tokens yields the
    uniform mixture with ``uniform_fallback=True``.
    """
    cfg = model.config if cfg is None else cfg
    cfg.validate()
    K = model.k
    doc = filter_doc(ids, model.stopword_ids)
    if len(doc) == 0:
        return TopicMixture(np.full(K, 1.0 / K), uniform_fallback=True)

    alpha = cfg.resolved_alpha
    rng = np.random.default_rng(cfg.seed)
    z = rng.integers(0, K, size=len(doc), dtype=np.int64)
    n_k_doc = np.bincount(z, minlength=K).astype(np.int64)

    theta_acc = np.zeros(K)
    n_samples = 0
    for it in range(cfg.iterations):
        uniforms = rng.random(len(doc))
        gibbs.foldin_sweep(z, doc, n_k_doc, model.phi, alpha, uniforms)
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.sample_lag == 0:
            theta_acc += (n_k_doc + alpha) / (len(doc) + K * alpha)
            n_samples += 1
    return TopicMixture(theta_acc / n_samples)


def neg_log_likelihood(model: TopicModel) -> float:
    """-log P(corpus | K) via the harmonic mean of per-sample likelihoods.

    Uses the corpus log likelihoods stored at sampling time; computed in
    log space with log-sum-exp stabilization. A biased but standard
    estimator for topic-count selection.
    """
    lls = model.sample_log_liks
    if lls.size == 0:
        raise ValueError("model retains no post-burn-in samples")
    return float(logsumexp(-lls) - math.log(lls.size))


def select_k(docs: list, candidate_ks: list, base_cfg: LdaConfig,
             vocab_size: int, stopword_ids: tuple = (),
             vocab_hash: str = ""):
    """Train one model per candidate topic count; pick the one minimizing
    the negative log corpus likelihood.

    Returns ``(best_k, best_model, table)`` where table has one row per
    candidate (score or recorded error). Default candidates at full scale
    are 50..300 in steps of 50 (see DEFAULT_CANDIDATE_KS).
    """
    if not candidate_ks:
        raise ValueError("candidate_ks is empty")
    table = []
    best = None
    for k in candidate_ks:
        cfg = replace(base_cfg, k=int(k))
        try:
            model = train_gibbs(docs, vocab_size, cfg,
                                stopword_ids=stopword_ids,
                                vocab_hash=vocab_hash)
            score = neg_log_likelihood(model)
            table.append({"k": int(k), "neg_log_likelihood": score})
            if best is None or score < best[1]:
                best = (int(k), score, model)
        except Exception as exc:  # record and move on; surface if all fail
            table.append({"k": int(k), "error": str(exc)})
    if best is None:
        raise RuntimeError(f"every candidate failed: {table}")
    return best[0], best[2], table


DEFAULT_CANDIDATE_KS = (50, 100, 150, 200, 250, 300)
