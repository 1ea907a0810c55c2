"""Topical guidance: word vectors from topic mixtures, alignment to source
positions, controlled-mode mixtures, and the feed-forward reconstructor
that predicts the word vector from source word frequencies.

The guidance signal for a document is a convex combination of topic-word
rows weighted by the document's topic mixture; aligned to the source, each
position carries its word's score, with stopwords, unknowns, and words
outside the topic model's support pinned to the 1e-9 floor.
"""

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step, backward, cross_entropy, zero_grads
from .corpus import N_RESERVED, Vocabulary, bow
from .lda import LdaConfig, TopicMixture, TopicModel, fold_in
from .serialize import write_checkpoint, read_checkpoint, config_digest

GUIDANCE_FLOOR = 1e-9

GUIDANCE_MODES = ("ffn", "lda-target", "controlled")


@dataclass
class GuidanceVector:
    """Per-source-position topical scores.

    ``scores`` has one entry per source position (no padding here; batching
    pads later). Scores are strictly positive; the floor marks positions
    the topic model says nothing about.
    """

    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if (self.scores <= 0).any():
            raise ValueError("guidance scores must be positive")

    def __len__(self):
        return len(self.scores)


def topic_word_vector(model: TopicModel, mixture: TopicMixture) -> np.ndarray:
    """Mixture-weighted sum of topic-word rows; a distribution over the
    full vocabulary."""
    theta = np.asarray(mixture.theta, dtype=np.float64)
    if theta.shape != (model.k,):
        raise ValueError(
            f"mixture has length {theta.shape}, model has {model.k} topics")
    return theta @ model.phi


def controlled_mixture(target_topics, k: int) -> TopicMixture:
    """User-specified mixture: normalized weight on the target topics,
    exact zero everywhere else."""
    if not target_topics:
        raise ValueError("no target topics given")
    theta = np.zeros(k)
    for tid, w in target_topics:
        if not 0 <= tid < k:
            raise ValueError(f"topic id {tid} out of range for k={k}")
        if w < 0:
            raise ValueError("topic weights must be non-negative")
        theta[tid] += w
    total = theta.sum()
    if total == 0:
        raise ValueError("target topic weights sum to zero")
    return TopicMixture(theta / total)


def align_to_source(tau: np.ndarray, source_ids, vocab: Vocabulary,
                    stopwords=frozenset()) -> GuidanceVector:
    """Trim and reorder a vocabulary-length score vector onto the source.

    Position t gets tau[word_t]; stopwords, reserved ids (UNK included),
    and words with no support under the topic model get exactly the 1e-9
    floor. Permuting source tokens permutes scores identically.
    """
    tau = np.asarray(tau, dtype=np.float64)
    if tau.shape != (vocab.size,):
        raise ValueError(f"tau has shape {tau.shape}, vocab size is {vocab.size}")
    stop_ids = {vocab.token_to_id[t] for t in stopwords if t in vocab.token_to_id}
    scores = np.empty(len(source_ids))
    for pos, wid in enumerate(source_ids):
        wid = int(wid)
        if wid < N_RESERVED or wid in stop_ids:
            scores[pos] = GUIDANCE_FLOOR
        else:
            scores[pos] = max(tau[wid], GUIDANCE_FLOOR)
    return GuidanceVector(scores)


# ---------------------------------------------------------------------------
# feed-forward reconstructor
# ---------------------------------------------------------------------------


@dataclass
class FfnConfig:
    hidden: int = 0        # 0 = single affine |V| -> |V| map
    epochs: int = 15
    lr: float = 5e-2
    batch_size: int = 8
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class FfnWeights:
    """Affine map (optionally with one hidden layer) plus softmax output."""

    def __init__(self, vocab_size: int, config: FfnConfig, vocab_hash: str = "",
                 tensors: dict | None = None):
        self.config = config
        self.vocab_hash = vocab_hash
        if tensors is not None:
            self.tensors = tensors
            return
        rng = np.random.default_rng(config.seed)
        if config.hidden > 0:
            h = config.hidden
            self.tensors = {
                "w1": Tensor(rng.normal(0, 0.02, (vocab_size, h)), requires_grad=True),
                "b1": Tensor(np.zeros(h), requires_grad=True),
                "w2": Tensor(rng.normal(0, 0.02, (h, vocab_size)), requires_grad=True),
                "b2": Tensor(np.zeros(vocab_size), requires_grad=True),
            }
        else:
            # zero init: a single affine layer trains fine from the origin
            # and gives exactly uniform output before training
            self.tensors = {
                "w1": Tensor(np.zeros((vocab_size, vocab_size)), requires_grad=True),
                "b1": Tensor(np.zeros(vocab_size), requires_grad=True),
            }

    @property
    def vocab_size(self) -> int:
        return self.tensors["w1"].data.shape[0]

    def logits(self, x: Tensor) -> Tensor:
        out = x @ self.tensors["w1"] + self.tensors["b1"]
        if self.config.hidden > 0:
            out = out.relu() @ self.tensors["w2"] + self.tensors["b2"]
        return out

    def save(self, path) -> None:
        header = {
            "config": self.config.to_dict(),
            "config_digest": config_digest(self.config.to_dict()),
            "seed": self.config.seed,
            "vocab_hash": self.vocab_hash,
        }
        write_checkpoint(path, "ffn", header,
                         {k: v.data for k, v in self.tensors.items()})

    @classmethod
    def load(cls, path) -> "FfnWeights":
        _, header, arrays = read_checkpoint(path, expect_kind="ffn")
        config = FfnConfig(**header["config"])
        tensors = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        obj = cls(tensors["w1"].data.shape[0], config,
                  header.get("vocab_hash", ""), tensors=tensors)
        return obj


def _normalize_freq(freq: np.ndarray) -> np.ndarray:
    freq = np.asarray(freq, dtype=np.float64)
    if (freq < 0).any():
        raise ValueError("frequency vector must be non-negative")
    total = freq.sum(axis=-1, keepdims=True)
    return np.divide(freq, total, out=np.zeros_like(freq), where=total > 0)


def ffn_forward(freq: np.ndarray, weights: FfnWeights) -> np.ndarray:
    """Predicted topical word vector for one frequency vector (or a batch).

    Input is L1-normalized internally so the map is document-length
    invariant; output rows are softmax distributions over the vocabulary.
    """
    x = _normalize_freq(freq)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    out = ad.softmax(weights.logits(Tensor(x))).data
    return out[0] if squeeze else out


def train_ffn(pairs, config: FfnConfig, vocab_hash: str = "") -> tuple:
    """Fit the reconstructor on (frequency vector, target word vector)
    pairs by Adam on cross-entropy. Returns (weights, per-epoch losses)."""
    if not pairs:
        raise ValueError("no training pairs")
    freqs = _normalize_freq(np.stack([np.asarray(f) for f, _ in pairs]))
    targets = np.stack([np.asarray(t) for _, t in pairs])
    if freqs.shape != targets.shape:
        raise ValueError("frequency/target shape mismatch")

    weights = FfnWeights(freqs.shape[1], config, vocab_hash)
    state = AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    n = freqs.shape[0]
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            zero_grads(weights.tensors)
            loss = cross_entropy(weights.logits(Tensor(freqs[idx])), targets[idx])
            backward(loss)
            adam_step(weights.tensors, state)
            epoch_loss += loss.item() * len(idx)
        losses.append(epoch_loss / n)
    return weights, losses


def ffn_training_pairs(examples, vocab: Vocabulary, model: TopicModel,
                       foldin_cfg: LdaConfig | None = None):
    """Build (source frequency, target-summary word vector) pairs.

    Targets come from folding each example's reference summary into the
    topic model; at inference the reconstructor sees only the source.
    """
    pairs = []
    for ex in examples:
        mixture = fold_in(model, ex.summary, foldin_cfg)
        tau = topic_word_vector(model, mixture)
        pairs.append((bow(ex.source, vocab), tau))
    return pairs


def guidance_for_example(example, model: TopicModel, ffn: FfnWeights | None,
                         mode: str, vocab: Vocabulary, stopwords=frozenset(),
                         foldin_cfg: LdaConfig | None = None) -> GuidanceVector:
    """Guidance for one example in the configured mode.

    lda-target: fold the reference summary into the topic model (training
    oracle; this is what the reconstructor learns to imitate).
    ffn: reconstruct the word vector from source word frequencies.
    controlled: user-specified target topics, off-target weights zero.
    """
    if mode not in GUIDANCE_MODES:
        raise ValueError(f"unknown guidance mode {mode!r}; pick from {GUIDANCE_MODES}")
    if mode == "lda-target":
        mixture = fold_in(model, example.summary, foldin_cfg)
        tau = topic_word_vector(model, mixture)
    elif mode == "ffn":
        if ffn is None:
            raise ValueError("ffn mode needs trained reconstructor weights")
        tau = ffn_forward(bow(example.source, vocab), ffn)
    else:
        if not example.target_topics:
            raise ValueError(
                f"example {example.id}: controlled mode needs target_topics")
        mixture = controlled_mixture(example.target_topics, model.k)
        tau = topic_word_vector(model, mixture)
    return align_to_source(tau, example.source, vocab, stopwords)


def kl_divergence(p: np.ndarray, q: np.ndarray, eps: float = 1e-12) -> float:
    """KL(p || q) in nats with epsilon guarding; used for guidance quality
    reporting."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    return float((p[mask] * np.log(p[mask] / np.maximum(q[mask], eps))).sum())
