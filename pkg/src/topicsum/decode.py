"""Beam-search generation with length bounds, n-gram blocking, and
length-power score normalization.

The loop is generic over a session object exposing ``start(n)``,
``select(state, rows)`` and ``step(state, prev_tokens) -> logprob rows``;
``model.GenerationSession`` provides the transformer-backed one and tests
drive the same loop with toy tables.

Conventions (documented here because the generation literature leaves them
implementation-defined): a hypothesis's length counts generated tokens
including its EOS; EOS is banned while the sequence would still be shorter
than min_length; a finished hypothesis scores logprob / length**penalty;
with early_stopping the search halts once beam_size hypotheses have
finished; ties anywhere break toward the lexicographically smaller token
sequence. If every continuation of a hypothesis is blocked, it is finished
with a forced EOS (the one case that may violate the n-gram constraint).
"""

from dataclasses import dataclass, asdict

import numpy as np

from .corpus import BOS, EOS, PAD, SEP
from .model import GenerationSession, ModelWeights


@dataclass
class DecodeConfig:
    beam_size: int = 4
    length_penalty: float = 2.0
    max_length: int = 180
    min_length: int = 56
    no_repeat_ngram: int = 3
    early_stopping: bool = True

    def validate(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if not 0 < self.min_length <= self.max_length:
            raise ValueError("need 0 < min_length <= max_length")
        if self.no_repeat_ngram < 0:
            raise ValueError("no_repeat_ngram must be >= 0 (0 disables)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BeamHypothesis:
    tokens: list
    logprob: float
    finished: bool = False
    forced_eos: bool = False


def length_normalized_score(logprob: float, length: int, penalty: float) -> float:
    """logprob / length**penalty; penalty 0 gives the raw logprob."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return logprob / (length ** penalty)


def banned_continuations(tokens, n: int) -> set:
    """Token ids that would complete an n-gram already present in ``tokens``."""
    if n <= 0 or len(tokens) < n - 1:
        return set()
    prefix = tuple(tokens[len(tokens) - (n - 1):]) if n > 1 else ()
    banned = set()
    for i in range(len(tokens) - n + 1):
        if tuple(tokens[i:i + n - 1]) == prefix:
            banned.add(tokens[i + n - 1])
    return banned


def beam_decode(session, vocab_size: int, cfg: DecodeConfig,
                banned_ids=()) -> BeamHypothesis:
    """Run the beam loop against a session; returns the best hypothesis."""
    cfg.validate()
    state = session.start(1)
    active = [BeamHypothesis([], 0.0)]
    prev = [BOS]
    finished: list[BeamHypothesis] = []

    def seq_key(h: BeamHypothesis):
        return (-length_normalized_score(h.logprob, len(h.tokens),
                                         cfg.length_penalty), h.tokens)

    for _ in range(cfg.max_length):
        logp = session.step(state, prev)
        candidates = []   # (logprob, tokens, beam_row)
        stuck = []        # rows with every continuation blocked
        for i, hyp in enumerate(active):
            row = logp[i].copy()
            for tok in banned_ids:
                row[tok] = -np.inf
            if len(hyp.tokens) + 1 < cfg.min_length:
                row[EOS] = -np.inf
            for tok in banned_continuations(hyp.tokens, cfg.no_repeat_ngram):
                row[tok] = -np.inf
            if not np.isfinite(row).any():
                stuck.append(i)
                continue
            order = np.argsort(row)[::-1][:2 * cfg.beam_size]
            for tok in order:
                if np.isfinite(row[tok]):
                    candidates.append(
                        (hyp.logprob + row[tok], hyp.tokens + [int(tok)], i))

        for i in stuck:
            hyp = active[i]
            finished.append(BeamHypothesis(
                hyp.tokens + [EOS], hyp.logprob, finished=True, forced_eos=True))

        candidates.sort(key=lambda c: (-c[0], c[1]))
        next_active = []
        next_rows = []
        # EOS banks only from the top-beam_size slate; this keeps beam_size=1
        # exactly equal to constrained greedy. Lower-ranked non-EOS
        # candidates still refill the beam.
        for rank, (logprob, tokens, row_idx) in enumerate(candidates):
            if tokens[-1] == EOS:
                if rank < cfg.beam_size:
                    finished.append(BeamHypothesis(tokens, logprob, finished=True))
            elif len(next_active) < cfg.beam_size:
                next_active.append(BeamHypothesis(tokens, logprob))
                next_rows.append(row_idx)

        if cfg.early_stopping and len(finished) >= cfg.beam_size:
            active = []
            break
        if not next_active:
            active = []
            break
        if len(next_active[0].tokens) >= cfg.max_length:
            # length budget exhausted: whatever is still active finishes here
            finished.extend(
                BeamHypothesis(h.tokens, h.logprob, finished=True)
                for h in next_active)
            active = []
            break
        state = session.select(state, next_rows)
        active = next_active
        prev = [h.tokens[-1] for h in active]

    finished.extend(BeamHypothesis(h.tokens, h.logprob, finished=True)
                    for h in active)
    if not finished:
        raise RuntimeError("beam search produced no finished hypothesis")
    finished.sort(key=seq_key)
    return finished[0]


def beam_search(weights: ModelWeights, source_ids, guidance, cfg: DecodeConfig,
                prompt_ids=None):
    """Decode one source with a trained model.

    Returns ``(tokens, logprob, normalized_score)``; tokens carry no BOS
    and include the closing EOS unless the hypothesis hit max_length.
    """
    session = GenerationSession(weights, source_ids, guidance,
                                prompt_ids=prompt_ids)
    best = beam_decode(session, weights.config.vocab_size, cfg,
                       banned_ids=(PAD, BOS, SEP))
    score = length_normalized_score(best.logprob, len(best.tokens),
                                    cfg.length_penalty)
    return best.tokens, best.logprob, score


def strip_eos(tokens) -> list:
    return [t for t in tokens if t != EOS]
