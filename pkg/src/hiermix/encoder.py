"""Reference trainable sequence encoder with exact analytic gradients.

Position p of the input embeds as ``token_embeddings[id_p] +
positional_embeddings[p]``. Each layer then computes

    h_p = tanh(W_self x_p + W_ctx xbar + W_prev x_{p-1} + b)

where ``xbar`` is the mean of the layer input over all positions and the
position before the first is the zero vector. The context term makes every
output position depend on the whole sequence; the predecessor term ties
each mask hidden to the depth token before it.

``forward`` keeps per-layer activations so ``backward`` can produce exact
gradients; ``detached_forward`` computes identical values but refuses
gradient requests, which is how similarity representations are kept out of
the training gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .prompt import PromptSequence


class DetachedGradientError(RuntimeError):
    """Gradients were requested through a detached forward pass."""


@dataclass
class LayerParams:
    w_self: np.ndarray
    w_ctx: np.ndarray
    w_prev: np.ndarray
    bias: np.ndarray


@dataclass
class EncoderParams:
    token_embeddings: np.ndarray  # (vocab, d_model)
    positional_embeddings: np.ndarray  # (max_len, d_model)
    layers: list[LayerParams]

    @property
    def d_model(self) -> int:
        return self.token_embeddings.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.token_embeddings.shape[0]

    @property
    def max_len(self) -> int:
        return self.positional_embeddings.shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def param_items(self):
        yield "token_embeddings", self.token_embeddings
        yield "positional_embeddings", self.positional_embeddings
        for i, layer in enumerate(self.layers):
            yield f"layer{i}.w_self", layer.w_self
            yield f"layer{i}.w_ctx", layer.w_ctx
            yield f"layer{i}.w_prev", layer.w_prev
            yield f"layer{i}.bias", layer.bias

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            token_embeddings=self.token_embeddings.copy(),
            positional_embeddings=self.positional_embeddings.copy(),
            layers=[
                LayerParams(
                    l.w_self.copy(), l.w_ctx.copy(), l.w_prev.copy(), l.bias.copy()
                )
                for l in self.layers
            ],
        )


def init_encoder_params(
    rng: np.random.Generator,
    vocab_size: int,
    d_model: int = 64,
    n_layers: int = 2,
    max_len: int = 256,
    init_std: float = 0.02,
) -> EncoderParams:
    """Gaussian init (mean 0, std ``init_std``) for every parameter tensor."""

    def draw(*shape):
        return rng.normal(0.0, init_std, size=shape)

    layers = [
        LayerParams(
            w_self=draw(d_model, d_model),
            w_ctx=draw(d_model, d_model),
            w_prev=draw(d_model, d_model),
            bias=np.zeros(d_model),
        )
        for _ in range(n_layers)
    ]
    return EncoderParams(
        token_embeddings=draw(vocab_size, d_model),
        positional_embeddings=draw(max_len, d_model),
        layers=layers,
    )


@dataclass
class HiddenStates:
    vectors: np.ndarray  # (length, d_model)
    cls_position: int
    mask_positions: tuple[int, ...]
    detached: bool = False
    _cache: list | None = field(default=None, repr=False)

    @property
    def h_cls(self) -> np.ndarray:
        return self.vectors[self.cls_position]

    def h_mask(self, depth: int) -> np.ndarray:
        return self.vectors[self.mask_positions[depth - 1]]

    @property
    def length(self) -> int:
        return self.vectors.shape[0]


def _embed(params: EncoderParams, seq: PromptSequence) -> np.ndarray:
    ids = np.asarray(seq.token_ids, dtype=np.intp)
    if seq.length > params.max_len:
        raise ValueError(
            f"sequence length {seq.length} exceeds max_len {params.max_len}"
        )
    if ids.size and (ids.min() < 0 or ids.max() >= params.vocab_size):
        raise ValueError("token id out of range for the embedding table")
    return params.token_embeddings[ids] + params.positional_embeddings[: seq.length]


def _layer_forward(layer: LayerParams, x: np.ndarray):
    xbar = x.mean(axis=0)
    prev = np.vstack([np.zeros((1, x.shape[1])), x[:-1]])
    h = np.tanh(x @ layer.w_self.T + xbar @ layer.w_ctx.T + prev @ layer.w_prev.T + layer.bias)
    return h, xbar, prev


def forward(params: EncoderParams, seq: PromptSequence) -> HiddenStates:
    """Per-position hidden vectors, retaining activations for ``backward``."""
    x = _embed(params, seq)
    cache = [x]
    for layer in params.layers:
        h, xbar, prev = _layer_forward(layer, x)
        cache.append((h, xbar, prev))
        x = h
    return HiddenStates(
        vectors=x,
        cls_position=seq.cls_position,
        mask_positions=seq.mask_positions,
        detached=False,
        _cache=cache,
    )


def detached_forward(params: EncoderParams, seq: PromptSequence) -> HiddenStates:
    """Value-identical to ``forward`` but excluded from gradient flow."""
    x = _embed(params, seq)
    for layer in params.layers:
        x, _, _ = _layer_forward(layer, x)
    return HiddenStates(
        vectors=x,
        cls_position=seq.cls_position,
        mask_positions=seq.mask_positions,
        detached=True,
        _cache=None,
    )


def zero_gradients(params: EncoderParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(value) for name, value in params.param_items()}


def backward(
    params: EncoderParams,
    seq: PromptSequence,
    hidden: HiddenStates,
    upstream: np.ndarray,
    grads: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Accumulate exact parameter gradients for one sequence.

    ``upstream`` is a (length, d_model) matrix of loss gradients on the
    final hidden states; rows without upstream signal are zero. Pass
    ``grads`` to accumulate across calls.
    """
    if hidden.detached or hidden._cache is None:
        raise DetachedGradientError(
            "gradients requested through a detached forward pass"
        )
    if upstream.shape != hidden.vectors.shape:
        raise ValueError(
            f"upstream shape {upstream.shape} != hidden shape {hidden.vectors.shape}"
        )
    if not np.all(np.isfinite(upstream)):
        raise ValueError("upstream gradients must be finite")
    if grads is None:
        grads = zero_gradients(params)

    cache = hidden._cache
    length = hidden.vectors.shape[0]
    d_h = upstream
    for i in range(params.n_layers - 1, -1, -1):
        layer = params.layers[i]
        h, xbar, prev = cache[i + 1]
        x = cache[i] if i == 0 else cache[i][0]
        d_pre = d_h * (1.0 - h * h)
        col_sum = d_pre.sum(axis=0)
        grads[f"layer{i}.w_self"] += d_pre.T @ x
        grads[f"layer{i}.w_ctx"] += np.outer(col_sum, xbar)
        grads[f"layer{i}.w_prev"] += d_pre.T @ prev
        grads[f"layer{i}.bias"] += col_sum
        d_x = d_pre @ layer.w_self
        d_x += (layer.w_ctx.T @ col_sum) / length  # mean term reaches every position
        d_from_prev = d_pre @ layer.w_prev
        d_x[:-1] += d_from_prev[1:]
        d_h = d_x

    ids = np.asarray(seq.token_ids, dtype=np.intp)
    np.add.at(grads["token_embeddings"], ids, d_h)
    grads["positional_embeddings"][:length] += d_h
    return grads
