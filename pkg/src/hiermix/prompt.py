"""Prompt sequences and the per-depth verbalizer.

Two sequence builders live here. The classification sequence prefixes the
text with one (depth token, mask) pair per hierarchy depth:

    [CLS] [Dth^1] [MASK] ... [Dth^D] [MASK] [SEP] text ... [SEP]

The local-hierarchy sequence spells out an instance's gold labels depth by
depth, replacing each mask with the label names:

    [CLS] [Dth^1] name ... [Dth^d] name ... [SEP]

The verbalizer is one weight matrix per depth, a row per label in that
depth's order; rows start at the mean embedding of the label's name words
and are trained afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Vocabulary, tokenize
from .taxonomy import LocalHierarchy, Taxonomy


@dataclass(frozen=True)
class PromptSequence:
    token_ids: tuple[int, ...]
    cls_position: int
    mask_positions: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.token_ids)


def classification_prefix_length(depth_count: int) -> int:
    # [CLS] + D x ([Dth^d] [MASK]) + [SEP]
    return 2 * depth_count + 2


def build_classification_sequence(
    vocab: Vocabulary, depth_count: int, text_tokens: list[str], max_len: int
) -> PromptSequence:
    """Prompt-prefixed token-id sequence for one instance's text.

    The prefix is never truncated; the text tail is cut so the total
    length (including the trailing separator) stays within ``max_len``.
    """
    if depth_count < 1:
        raise ValueError("depth_count must be >= 1")
    prefix_len = classification_prefix_length(depth_count)
    if max_len < prefix_len + 1:
        raise ValueError(
            f"max_len={max_len} cannot hold the {prefix_len}-token prompt prefix "
            "plus the trailing separator"
        )
    ids = [vocab.cls_id]
    mask_positions = []
    for depth in range(1, depth_count + 1):
        ids.append(vocab.depth_token_id(depth))
        mask_positions.append(len(ids))
        ids.append(vocab.mask_id)
    ids.append(vocab.sep_id)
    budget = max_len - prefix_len - 1
    ids.extend(vocab.id_of(tok) for tok in text_tokens[:budget])
    ids.append(vocab.sep_id)
    return PromptSequence(
        token_ids=tuple(ids), cls_position=0, mask_positions=tuple(mask_positions)
    )


def build_local_hierarchy_sequence(
    vocab: Vocabulary, lh: LocalHierarchy, tax: Taxonomy
) -> PromptSequence:
    """Token-id sequence spelling out a local hierarchy depth by depth.

    Depths past the deepest gold label are omitted; labels sharing a depth
    are concatenated after the one depth token, in taxonomy order.
    """
    ids = [vocab.cls_id]
    for depth in range(1, lh.deepest + 1):
        members = lh.per_depth[depth - 1]
        if not members:
            continue
        ids.append(vocab.depth_token_id(depth))
        for label_id in members:
            for word in tokenize(tax.nodes[label_id].name):
                ids.append(vocab.id_of(word))
    ids.append(vocab.sep_id)
    return PromptSequence(token_ids=tuple(ids), cls_position=0, mask_positions=())


class Verbalizer:
    """Per-depth label-scoring rows; mutable training state."""

    def __init__(self, weights: list[np.ndarray]):
        self.weights = weights  # weights[d-1]: (|V^d|, d_model)

    @property
    def depth_count(self) -> int:
        return len(self.weights)

    def matrix(self, depth: int) -> np.ndarray:
        return self.weights[depth - 1]

    def param_items(self):
        for d, w in enumerate(self.weights, start=1):
            yield f"verbalizer.depth{d}", w

    def copy(self) -> "Verbalizer":
        return Verbalizer([w.copy() for w in self.weights])


def init_verbalizer(
    tax: Taxonomy, embeddings: np.ndarray, vocab: Vocabulary
) -> Verbalizer:
    """Initialize each label row to the mean embedding of its name words.

    Name words that are out of vocabulary fall back to the [UNK] embedding.
    """
    weights = []
    for depth in range(1, tax.max_depth + 1):
        rows = []
        for label_id in tax.labels_at(depth):
            words = tokenize(tax.nodes[label_id].name)
            if not words:
                raise ValueError(f"label {label_id!r} has an empty name")
            token_ids = [vocab.id_of(w) for w in words]
            rows.append(embeddings[token_ids].mean(axis=0))
        weights.append(np.array(rows, dtype=np.float64))
    return Verbalizer(weights)
