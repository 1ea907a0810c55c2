"""Synthetic topical corpus: each document mixes two topics, and yields two
summaries, each realized from exactly one of them.

Topic vocabularies are disjoint by default; ``shared_vocab``/``shared_mass``
blend in a common word pool for near-disjoint setups. Generation is fully
deterministic under the config seed.
"""

from dataclasses import dataclass, asdict

import numpy as np


@dataclass
class SynthConfig:
    k_true: int = 3
    vocab_per_topic: int = 8
    doc_len: int = 40
    summary_len: int = 12
    concentration: float = 2.0   # Beta(c, c) draw for the two-topic mixture
    n_docs: int = 60
    seed: int = 0
    peakedness: float = 0.7      # Dirichlet parameter of topic word dists
    shared_vocab: int = 0
    shared_mass: float = 0.0
    with_prompts: bool = False
    prompt_words: int = 4

    def validate(self) -> None:
        if self.k_true < 2:
            raise ValueError("k_true must be >= 2")
        if self.vocab_per_topic < 2:
            raise ValueError("vocab_per_topic must be >= 2")
        for name in ("doc_len", "summary_len", "n_docs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.shared_mass < 1.0:
            raise ValueError("shared_mass must be in [0, 1)")
        if self.shared_mass > 0 and self.shared_vocab <= 0:
            raise ValueError("shared_mass > 0 requires shared_vocab > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def topic_token(k: int, j: int) -> str:
    return f"t{k}w{j}"


def shared_token(j: int) -> str:
    return f"sharedw{j}"


def synth_corpus(cfg: SynthConfig):
    """Generate records plus ground truth.

    Returns ``(records, truth)`` where records are JSONL-ready dicts (two per
    document, one per summary topic) and truth holds the generating word
    distributions and per-document topic pairs.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    K = cfg.k_true

    words: list[str] = []
    topic_slices = []
    for k in range(K):
        start = len(words)
        words.extend(topic_token(k, j) for j in range(cfg.vocab_per_topic))
        topic_slices.append((start, len(words)))
    shared_start = len(words)
    words.extend(shared_token(j) for j in range(cfg.shared_vocab))
    n_words = len(words)

    # per-topic word distribution over the whole synthetic word list
    word_dists = np.zeros((K, n_words))
    for k, (lo, hi) in enumerate(topic_slices):
        own = rng.dirichlet(np.full(hi - lo, cfg.peakedness))
        if cfg.shared_vocab and cfg.shared_mass > 0:
            word_dists[k, lo:hi] = own * (1.0 - cfg.shared_mass)
            pool = rng.dirichlet(np.full(cfg.shared_vocab, cfg.peakedness))
            word_dists[k, shared_start:] = pool * cfg.shared_mass
        else:
            word_dists[k, lo:hi] = own

    def draw_text(dist: np.ndarray, n: int) -> str:
        idx = rng.choice(n_words, size=n, p=dist)
        return " ".join(words[i] for i in idx)

    records = []
    doc_topics = []
    for i in range(cfg.n_docs):
        a, b = rng.choice(K, size=2, replace=False)
        w = rng.beta(cfg.concentration, cfg.concentration)
        mix = w * word_dists[a] + (1.0 - w) * word_dists[b]
        source = draw_text(mix, cfg.doc_len)
        doc_topics.append((int(a), int(b), float(w)))
        for topic in (int(a), int(b)):
            rec = {
                "id": f"d{i:04d}-k{topic}",
                "source": source,
                "summary": draw_text(word_dists[topic], cfg.summary_len),
                "target_topics": [[topic, 1.0]],
            }
            if cfg.with_prompts:
                top = np.argsort(word_dists[topic])[::-1][: cfg.prompt_words]
                rec["topic_prompt"] = " ".join(words[j] for j in top)
            records.append(rec)

    truth = {
        "config": cfg.to_dict(),
        "words": words,
        "word_dists": word_dists,
        "topic_slices": topic_slices,
        "doc_topics": doc_topics,
    }
    return records, truth


def true_phi(truth: dict, vocab) -> np.ndarray:
    """Map the generating word distributions onto a Vocabulary's id space.

    Rows are renormalized over the ids actually present in ``vocab`` so each
    remains a distribution; words outside the topic's support get exact 0.
    """
    word_dists = truth["word_dists"]
    K = word_dists.shape[0]
    phi = np.zeros((K, vocab.size))
    for j, word in enumerate(truth["words"]):
        wid = vocab.token_to_id.get(word)
        if wid is not None:
            phi[:, wid] = word_dists[:, j]
    row_sums = phi.sum(axis=1, keepdims=True)
    if (row_sums == 0).any():
        raise ValueError("a generating topic has no words in the vocabulary")
    return phi / row_sums


def split_records(records: list[dict], test_fraction: float = 0.2):
    """Deterministic train/test split at document granularity.

    Records for the same source document (adjacent pairs) always land in the
    same split.
    """
    docs: list[list[dict]] = []
    seen: dict[str, int] = {}
    for rec in records:
        doc_id = rec["id"].split("-")[0]
        if doc_id not in seen:
            seen[doc_id] = len(docs)
            docs.append([])
        docs[seen[doc_id]].append(rec)
    n_test = max(1, int(round(len(docs) * test_fraction)))
    step = max(1, len(docs) // n_test)
    test_idx = set(list(range(0, len(docs), step))[:n_test])
    train, test = [], []
    for i, doc in enumerate(docs):
        (test if i in test_idx else train).extend(doc)
    return train, test
