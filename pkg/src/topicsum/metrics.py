"""ROUGE-1/2/L F1 and the topic-focus score.

ROUGE here is token-level on this package's own tokenizer output, with no
stemming or stopword removal; absolute values are not comparable to the
Perl toolkit, only to other numbers from this implementation. The
topic-focus score folds each generated summary into a topic model and
reports the prevalence of its target topic.
"""

from dataclasses import dataclass
from collections import Counter

import numpy as np

from .lda import LdaConfig, TopicModel, fold_in


@dataclass
class RougeEntry:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False   # input shorter than n (or empty)


@dataclass
class RougeScore:
    rouge1: RougeEntry
    rouge2: RougeEntry
    rougeL: RougeEntry


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def rouge_n(candidate, reference, n: int) -> RougeEntry:
    """Clipped n-gram overlap F1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand = [tuple(candidate[i:i + n]) for i in range(len(candidate) - n + 1)]
    ref = [tuple(reference[i:i + n]) for i in range(len(reference) - n + 1)]
    if not cand or not ref:
        return RougeEntry(0.0, 0.0, 0.0, degenerate=True)
    overlap = sum((Counter(cand) & Counter(ref)).values())
    p = overlap / len(cand)
    r = overlap / len(ref)
    return RougeEntry(p, r, _f1(p, r))


def _lcs_length(a, b) -> int:
    """Longest common subsequence, linear space."""
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> RougeEntry:
    """LCS-based F1: P = LCS/|candidate|, R = LCS/|reference|."""
    if not candidate or not reference:
        return RougeEntry(0.0, 0.0, 0.0, degenerate=True)
    lcs = _lcs_length(list(candidate), list(reference))
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return RougeEntry(p, r, _f1(p, r))


def rouge_score(candidate, reference) -> RougeScore:
    return RougeScore(
        rouge1=rouge_n(candidate, reference, 1),
        rouge2=rouge_n(candidate, reference, 2),
        rougeL=rouge_l(candidate, reference),
    )


def corpus_rouge(candidates, references) -> dict:
    """Arithmetic mean of per-example F1 for each variant."""
    if len(candidates) != len(references):
        raise ValueError("candidate/reference counts differ")
    scores = [rouge_score(c, r) for c, r in zip(candidates, references)]
    n = len(scores)
    return {
        "rouge1": sum(s.rouge1.f1 for s in scores) / n,
        "rouge2": sum(s.rouge2.f1 for s in scores) / n,
        "rougeL": sum(s.rougeL.f1 for s in scores) / n,
    }


@dataclass
class TopicFocusReport:
    prevalences: list          # per-example target-topic prevalence
    mean: float
    flagged: list              # example indices that fell back to uniform


def topic_focus(model: TopicModel, summaries, target_topic_ids,
                foldin_cfg: LdaConfig | None = None) -> TopicFocusReport:
    """Mean fold-in prevalence of each summary's target topic.

    A summary with no usable tokens contributes the uniform prior 1/K and
    is flagged.
    """
    if len(summaries) != len(target_topic_ids):
        raise ValueError("summary/target counts differ")
    prevalences = []
    flagged = []
    for i, (ids, target) in enumerate(zip(summaries, target_topic_ids)):
        if not 0 <= target < model.k:
            raise ValueError(f"target topic {target} out of range")
        mixture = fold_in(model, ids, foldin_cfg)
        if mixture.uniform_fallback:
            flagged.append(i)
        prevalences.append(float(mixture.theta[target]))
    mean = float(np.mean(prevalences)) if prevalences else 0.0
    return TopicFocusReport(prevalences, mean, flagged)
