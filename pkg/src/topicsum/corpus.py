"""Tokenization, vocabulary, bag-of-words, and JSONL dataset ingestion.

One word-level vocabulary is shared by the topic model, the guidance
network, and the summarizer. Ids 0..4 are reserved for PAD, BOS, EOS,
UNK, and SEP; content ids are dense above them.
"""

import json
import hashlib
import string
from dataclasses import dataclass
from collections import Counter

import numpy as np

PAD, BOS, EOS, UNK, SEP = 0, 1, 2, 3, 4
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>", "<sep>")
N_RESERVED = len(RESERVED_TOKENS)

_PUNCT = set(string.punctuation)

# Default stopword list (50 common English function words). Configurable:
# pass any token set to the functions that take one, or load a newline-
# separated file with load_stopwords().
DEFAULT_STOPWORDS = frozenset((
    "the a an and or but if then is are was were be been being to of in on "
    "at by for with from as that this these those it its he she they them "
    "his her their we you i not no do does did have has had will"
).split())


def tokenize(text: str) -> list[str]:
    """Lowercase, whitespace-split, and peel leading/trailing punctuation
    into separate tokens. Internal punctuation (hyphens, apostrophes) and
    digits are kept as part of the word."""
    out: list[str] = []
    for chunk in text.lower().split():
        head: list[str] = []
        tail: list[str] = []
        while chunk and chunk[0] in _PUNCT:
            head.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in _PUNCT:
            tail.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(head)
        if chunk:
            out.append(chunk)
        out.extend(reversed(tail))
    return out


def load_stopwords(path) -> frozenset:
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip() for line in fh if line.strip())


class Vocabulary:
    """Bidirectional token/id map with document frequencies.

    Invariant: tokens and non-reserved ids are in bijection, ids dense in
    [0, size). Instances are immutable after construction and safe for
    shared concurrent reads.
    """

    def __init__(self, tokens: list[str], doc_freq: dict[str, int] | None = None):
        self.id_to_token = list(RESERVED_TOKENS) + list(tokens)
        if len(set(self.id_to_token)) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        self.doc_freq = dict(doc_freq or {})

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[int(i)] for i in ids]

    def content_hash(self) -> str:
        joined = "\n".join(self.id_to_token)
        return hashlib.sha256(joined.encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {"tokens": self.id_to_token[N_RESERVED:], "doc_freq": self.doc_freq},
                fh, sort_keys=True,
            )

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
        return cls(blob["tokens"], blob.get("doc_freq"))


def build_vocab(token_seqs: list[list[str]], min_count: int = 1) -> Vocabulary:
    """Vocabulary over tokens whose total corpus frequency is >= min_count.

    Rarer tokens encode to UNK. Token order: by descending corpus
    frequency, ties alphabetical, so construction is deterministic.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if not token_seqs:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts: Counter = Counter()
    doc_freq: Counter = Counter()
    for seq in token_seqs:
        counts.update(seq)
        doc_freq.update(set(seq))
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(kept, {t: doc_freq[t] for t in kept})


def bow(ids, vocab: Vocabulary) -> np.ndarray:
    """Count vector of length vocab.size; reserved ids contribute nothing."""
    vec = np.zeros(vocab.size, dtype=np.float64)
    for i in ids:
        if i >= N_RESERVED:
            vec[i] += 1.0
    return vec


@dataclass
class Example:
    """One source/summary pair, already encoded to token ids."""

    id: str
    source: list[int]
    summary: list[int]
    target_topics: list[tuple[int, float]] | None = None
    topic_prompt: list[int] | None = None

    def validate(self, for_training: bool = True) -> None:
        if not self.source:
            raise ValueError(f"example {self.id}: empty source")
        if for_training and not self.summary:
            raise ValueError(f"example {self.id}: empty summary")
        if self.target_topics is not None:
            for tid, w in self.target_topics:
                if w < 0:
                    raise ValueError(f"example {self.id}: negative topic weight")


def read_jsonl(path, required: tuple = ("id", "source")) -> list[dict]:
    """Raw records: {id, source, summary, target_topics?, topic_prompt?}.

    ``required`` names the fields every record must carry (generated-output
    files carry summaries but no sources).
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            for key in required:
                if key not in rec:
                    raise ValueError(f"{path}:{lineno}: missing field {key!r}")
            records.append(rec)
    return records


def write_jsonl(path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


def encode_records(records: list[dict], vocab: Vocabulary,
                   for_training: bool = True) -> list[Example]:
    """Tokenize and id-encode raw JSONL records against a fixed vocabulary."""
    examples = []
    for rec in records:
        target_topics = None
        if rec.get("target_topics") is not None:
            target_topics = [(int(t), float(w)) for t, w in rec["target_topics"]]
        prompt = None
        if rec.get("topic_prompt"):
            prompt = vocab.encode(tokenize(rec["topic_prompt"]))
        ex = Example(
            id=str(rec["id"]),
            source=vocab.encode(tokenize(rec["source"])),
            summary=vocab.encode(tokenize(rec.get("summary", ""))),
            target_topics=target_topics,
            topic_prompt=prompt,
        )
        ex.validate(for_training=for_training)
        examples.append(ex)
    return examples


def record_token_seqs(records: list[dict]) -> list[list[str]]:
    """Token sequences (source + summary) for vocabulary construction."""
    seqs = []
    for rec in records:
        seqs.append(tokenize(rec["source"]))
        if rec.get("summary"):
            seqs.append(tokenize(rec["summary"]))
    return seqs


def dataset_hash(records: list[dict]) -> str:
    """Order-sensitive hash of example ids + reference texts; used to check
    that two evaluation reports describe the same test set."""
    h = hashlib.sha256()
    for rec in records:
        h.update(str(rec["id"]).encode("utf-8"))
        h.update(b"\x00")
        h.update(rec.get("summary", "").encode("utf-8"))
        h.update(b"\x01")
    return h.hexdigest()
