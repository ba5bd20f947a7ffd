"""Dataset ingestion, vocabulary, synthetic corpus generation, downsampling.

Corpora are JSONL files, one ``{"text": ..., "labels": [...]}`` object per
line. Tokenization is deterministic lowercase word-level: runs of word
characters and single punctuation marks become tokens.

The synthetic generator builds a complete f-ary taxonomy in which every
label owns a few signature words; instances sample a leaf (occasionally
two) and emit tokens from the signature words of the labels on the sampled
root paths, with optional noise replacement. This yields a corpus whose
depth-wise structure is learnable at desk scale.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass

import numpy as np

from .taxonomy import Taxonomy, extract_local_hierarchy, load_taxonomy

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

# Special token names; depth tokens [Dth^d] follow immediately after.
PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
_BASE_SPECIALS = (PAD, UNK, CLS, SEP, MASK)


class CorpusError(ValueError):
    """Raised for malformed corpus content."""


def tokenize(text: str) -> list[str]:
    """Lowercase word-level tokenization, punctuation split off."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Instance:
    text_tokens: tuple[str, ...]
    labels: frozenset[str]


@dataclass(frozen=True)
class DatasetSplit:
    instances: tuple[Instance, ...]
    name: str

    @property
    def size(self) -> int:
        return len(self.instances)


@dataclass(frozen=True)
class Vocabulary:
    token_to_id: dict[str, int]
    depth_count: int

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def cls_id(self) -> int:
        return self.token_to_id[CLS]

    @property
    def sep_id(self) -> int:
        return self.token_to_id[SEP]

    @property
    def mask_id(self) -> int:
        return self.token_to_id[MASK]

    def depth_token_id(self, depth: int) -> int:
        if not 1 <= depth <= self.depth_count:
            raise ValueError(f"depth {depth} outside 1..{self.depth_count}")
        return len(_BASE_SPECIALS) + depth - 1

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def to_json_obj(self) -> dict:
        return {"depth_count": self.depth_count, "token_to_id": self.token_to_id}

    @staticmethod
    def from_json_obj(obj: dict) -> "Vocabulary":
        return Vocabulary(
            token_to_id=dict(obj["token_to_id"]), depth_count=int(obj["depth_count"])
        )


def depth_token_name(depth: int) -> str:
    return f"[Dth^{depth}]"


def load_corpus(
    source: str, tax: Taxonomy, name: str = "train", auto_close: bool = True
) -> DatasetSplit:
    """Parse a JSONL corpus, validating labels against the taxonomy.

    Label sets are ancestor-closed on ingestion (``auto_close``); empty
    label sets, empty texts, unknown labels and malformed lines are errors
    reported with their line number.
    """
    instances = []
    for lineno, line in enumerate(source.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: malformed JSON ({exc})") from exc
        if not isinstance(obj, dict) or "text" not in obj or "labels" not in obj:
            raise CorpusError(f"line {lineno}: expected object with text and labels")
        tokens = tokenize(str(obj["text"]))
        if not tokens:
            raise CorpusError(f"line {lineno}: empty text")
        labels = obj["labels"]
        if not isinstance(labels, list) or not labels:
            raise CorpusError(f"line {lineno}: labels must be a non-empty list")
        try:
            lh = extract_local_hierarchy(tax, set(labels), auto_close=auto_close)
        except ValueError as exc:
            raise CorpusError(f"line {lineno}: {exc}") from exc
        instances.append(
            Instance(text_tokens=tuple(tokens), labels=lh.instance_labels)
        )
    return DatasetSplit(instances=tuple(instances), name=name)


def build_vocabulary(train: DatasetSplit, min_freq: int, depth_count: int) -> Vocabulary:
    """Build the token vocabulary from the training split.

    Specials and depth tokens occupy the lowest ids; ordinary tokens with
    count >= ``min_freq`` follow in sorted order, so two builds over the
    same corpus yield identical mappings.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: dict[str, int] = {}
    for instance in train.instances:
        for token in instance.text_tokens:
            counts[token] = counts.get(token, 0) + 1
    token_to_id: dict[str, int] = {}
    for special in _BASE_SPECIALS:
        token_to_id[special] = len(token_to_id)
    for depth in range(1, depth_count + 1):
        token_to_id[depth_token_name(depth)] = len(token_to_id)
    for token in sorted(counts):
        if counts[token] >= min_freq and token not in token_to_id:
            token_to_id[token] = len(token_to_id)
    return Vocabulary(token_to_id=token_to_id, depth_count=depth_count)


@dataclass(frozen=True)
class SyntheticSpec:
    depth: int = 3
    branching: int = 3
    n_train: int = 2000
    n_dev: int = 500
    n_test: int = 500
    noise_rate: float = 0.3
    multi_path_rate: float = 0.0
    seed: int = 0
    signature_words: int = 5
    tokens_per_instance: int = 20

    def validate(self) -> None:
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.branching < 2:
            raise ValueError("branching must be >= 2")
        for rate_name in ("noise_rate", "multi_path_rate"):
            rate = getattr(self, rate_name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{rate_name} must lie in [0, 1]")


def synthetic_taxonomy_json(spec: SyntheticSpec) -> str:
    """Complete ``branching``-ary label forest of the requested depth.

    Label k's signature words are ``w{k}a .. w{k}e``; its human-readable
    name is its first two signature words, so names resolve to corpus
    vocabulary entries.
    """
    entries = []
    counter = 0

    def add(parent_id: str | None, depth: int, prefix: str) -> None:
        nonlocal counter
        for child in range(spec.branching):
            node_id = f"{prefix}{child}" if prefix else f"n{child}"
            words = _signature_words(counter, spec.signature_words)
            entries.append(
                {"id": node_id, "name": f"{words[0]} {words[1]}", "parent": parent_id}
            )
            counter += 1
            if depth < spec.depth:
                add(node_id, depth + 1, f"{node_id}_")

    add(None, 1, "")
    return json.dumps(entries, indent=1)


def _signature_words(label_index: int, count: int) -> list[str]:
    return [f"w{label_index}{chr(ord('a') + k)}" for k in range(count)]


def generate_synthetic(
    spec: SyntheticSpec,
) -> tuple[Taxonomy, DatasetSplit, DatasetSplit, DatasetSplit]:
    """Generate (taxonomy, train, dev, test) deterministically from the seed."""
    spec.validate()
    tax = load_taxonomy(synthetic_taxonomy_json(spec))
    sig = {
        label_id: _signature_words(tax.order[label_id], spec.signature_words)
        for label_id in tax.nodes
    }
    leaves = [lid for lid in tax.nodes if not tax.children(lid)]
    leaves.sort(key=lambda lid: tax.order[lid])
    rng = np.random.default_rng(spec.seed)

    def draw_split(n: int, name: str) -> DatasetSplit:
        instances = []
        for _ in range(n):
            chosen = [leaves[rng.integers(len(leaves))]]
            if rng.random() < spec.multi_path_rate:
                other = leaves[rng.integers(len(leaves))]
                while other == chosen[0]:
                    other = leaves[rng.integers(len(leaves))]
                chosen.append(other)
            labels = tax.ancestor_closure(set(chosen))
            path_labels = sorted(labels, key=lambda lid: tax.order[lid])
            tokens = []
            for _ in range(spec.tokens_per_instance):
                if rng.random() < spec.noise_rate:
                    tokens.append("noise")
                else:
                    owner = path_labels[rng.integers(len(path_labels))]
                    words = sig[owner]
                    tokens.append(words[rng.integers(len(words))])
            instances.append(
                Instance(text_tokens=tuple(tokens), labels=frozenset(labels))
            )
        return DatasetSplit(instances=tuple(instances), name=name)

    train = draw_split(spec.n_train, "train")
    dev = draw_split(spec.n_dev, "dev")
    test = draw_split(spec.n_test, "test")
    return tax, train, dev, test


def split_to_jsonl(split: DatasetSplit) -> str:
    lines = [
        json.dumps(
            {"text": " ".join(inst.text_tokens), "labels": sorted(inst.labels)}
        )
        for inst in split.instances
    ]
    return "\n".join(lines) + "\n"


def downsample(split: DatasetSplit, ratio: float, seed: int) -> DatasetSplit:
    """Uniform sample without replacement of ceil(ratio * N) instances."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    if ratio == 1.0:
        return split
    keep = math.ceil(ratio * split.size)
    rng = np.random.default_rng(seed)
    picked = sorted(rng.choice(split.size, size=keep, replace=False).tolist())
    return DatasetSplit(
        instances=tuple(split.instances[i] for i in picked), name=split.name
    )
