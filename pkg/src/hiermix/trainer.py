"""Two-phase training: warmup without mixing, then mixing, with Adam,
early stopping on dev Macro-F1, and JSON checkpoints.

Schedule. Epochs 1..warmup_epochs train on the supervised loss only and
are not evaluated; from the first post-warmup epoch the mixed loss joins
(when the mode asks for it), the dev set is scored after every epoch, the
best-scoring parameters are kept, and training stops after ``patience``
consecutive evaluated epochs without strict improvement.

Loss. The supervised term sums the per-depth losses, each averaged over
the batch. The mixed term does the same over pairs and is added with
weight ``mix_loss_weight``, so weight zero reproduces the warmup objective
exactly. Gradients flow through the classification hiddens and the mixed
scores; the similarity hiddens come from a detached pass (or a frozen
snapshot) and never carry gradient.

Determinism. Every random stream is derived from (seed, purpose, epoch,
batch), never from shared mutable state, so identical configs give
identical runs and a resumed run replays exactly like an uninterrupted
one.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .corpus import DatasetSplit, Vocabulary
from .encoder import (
    EncoderParams,
    LayerParams,
    backward,
    detached_forward,
    forward,
    init_encoder_params,
    zero_gradients,
)
from .evaluation import MetricsReport, build_report
from .mixup import (
    MixPair,
    MixupConfig,
    make_pairs_lh,
    make_pairs_vanilla,
    pair_batch,
)
from .objective import (
    DepthLabelSplit,
    close_predictions,
    mixed_zmlce,
    mixed_zmlce_grad,
    predict,
    score_depth,
    splits_for_hierarchy,
    zmlce,
    zmlce_grad,
)
from .prompt import (
    PromptSequence,
    Verbalizer,
    build_classification_sequence,
    build_local_hierarchy_sequence,
    init_verbalizer,
)
from .taxonomy import Taxonomy, extract_local_hierarchy

CHECKPOINT_FORMAT_VERSION = 1

# rng stream tags, combined with the run seed as (seed, tag, epoch, batch)
_STREAM_INIT, _STREAM_SHUFFLE, _STREAM_PAIRS = 0, 1, 2


class DivergenceError(RuntimeError):
    """Non-finite loss; carries the partial training log."""

    def __init__(self, message: str, log: list | None = None):
        super().__init__(message)
        self.log = log or []


class CheckpointError(ValueError):
    """Unreadable, version-mismatched, or inconsistent checkpoint."""


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 64
    n_layers: int = 2
    max_len: int = 256
    init_std: float = 0.02


@dataclass(frozen=True)
class TrainConfig:
    # 1e-2 is the smallest rate at which the reference encoder reliably
    # clears 0.90 dev Macro-F1 inside 40 epochs on the default corpus.
    learning_rate: float = 1e-2
    batch_size: int = 16
    max_epochs: int = 60
    warmup_epochs: int = 5
    patience: int = 5
    mix_loss_weight: float = 1.0
    seed: int = 0
    mixup: MixupConfig = field(default_factory=MixupConfig)
    freeze_similarity_encoder: bool = False

    def __post_init__(self):
        if self.warmup_epochs > self.max_epochs:
            raise ValueError("warmup_epochs must not exceed max_epochs")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.mix_loss_weight < 0:
            raise ValueError("mix_loss_weight must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class ModelState:
    encoder: EncoderParams
    verbalizer: Verbalizer

    def named_parameters(self) -> dict[str, np.ndarray]:
        items = dict(self.encoder.param_items())
        items.update(self.verbalizer.param_items())
        return items

    def copy(self) -> "ModelState":
        return ModelState(encoder=self.encoder.copy(), verbalizer=self.verbalizer.copy())


def init_model(
    tax: Taxonomy, vocab: Vocabulary, enc: EncoderConfig, seed: int
) -> ModelState:
    rng = np.random.default_rng([seed, _STREAM_INIT])
    encoder = init_encoder_params(
        rng,
        vocab_size=vocab.size,
        d_model=enc.d_model,
        n_layers=enc.n_layers,
        max_len=enc.max_len,
        init_std=enc.init_std,
    )
    verbalizer = init_verbalizer(tax, encoder.token_embeddings, vocab)
    return ModelState(encoder=encoder, verbalizer=verbalizer)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(p) for name, p in params.items()},
        v={name: np.zeros_like(p) for name, p in params.items()},
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """Bias-corrected Adam update, applied in place to every tensor."""
    state.step += 1
    t = state.step
    for name in params:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {name}")
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1**t)
        v_hat = state.v[name] / (1 - state.beta2**t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# Batch loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreparedInstance:
    seq: PromptSequence
    lh_seq: PromptSequence
    splits: tuple[DepthLabelSplit, ...]
    gold: frozenset[str]


def prepare_instances(
    split: DatasetSplit, tax: Taxonomy, vocab: Vocabulary, max_len: int
) -> list[PreparedInstance]:
    prepared = []
    for inst in split.instances:
        lh = extract_local_hierarchy(tax, set(inst.labels), auto_close=True)
        prepared.append(
            PreparedInstance(
                seq=build_classification_sequence(
                    vocab, tax.max_depth, list(inst.text_tokens), max_len
                ),
                lh_seq=build_local_hierarchy_sequence(vocab, lh, tax),
                splits=tuple(splits_for_hierarchy(tax, lh)),
                gold=inst.labels,
            )
        )
    return prepared


@dataclass
class BatchResult:
    loss: float
    supervised_loss: float
    mixed_loss: float
    grads: dict[str, np.ndarray]
    pairs: list[MixPair]


def batch_loss(
    model: ModelState,
    batch: list[PreparedInstance],
    mix_active: bool,
    config: TrainConfig,
    pair_rng: np.random.Generator | None = None,
    pair_override: list[MixPair] | None = None,
    similarity_encoder: EncoderParams | None = None,
) -> BatchResult:
    """Loss and exact gradients for one batch.

    ``pair_override`` substitutes precomputed (i, j, s, lambda) pairs for
    the usual pairing-and-similarity step; since similarity never carries
    gradient, overriding it with the same numbers must not change any
    gradient.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    depth_count = len(batch[0].splits)
    n = len(batch)
    grads = zero_gradients(model.encoder)
    for name, w in model.verbalizer.param_items():
        grads[name] = np.zeros_like(w)

    hiddens = [forward(model.encoder, inst.seq) for inst in batch]
    upstreams = [np.zeros_like(h.vectors) for h in hiddens]

    supervised = 0.0
    for d in range(1, depth_count + 1):
        w_d = model.verbalizer.matrix(d)
        name = f"verbalizer.depth{d}"
        for inst, hidden, upstream in zip(batch, hiddens, upstreams):
            h = hidden.h_mask(d)
            p = score_depth(h, w_d)
            split = inst.splits[d - 1]
            supervised += zmlce(p, split) / n
            g = zmlce_grad(p, split) / n
            grads[name] += np.outer(g, h)
            upstream[inst.seq.mask_positions[d - 1]] += w_d.T @ g

    mixed = 0.0
    pairs: list[MixPair] = []
    if mix_active:
        if pair_override is not None:
            pairs = pair_override
        else:
            skeleton = pair_batch(n, pair_rng)
            if skeleton:
                if config.mixup.mode == "lh":
                    sim_encoder = (
                        similarity_encoder
                        if similarity_encoder is not None
                        else model.encoder
                    )
                    h_cls = [
                        detached_forward(sim_encoder, inst.lh_seq).h_cls
                        for inst in batch
                    ]
                    pairs = make_pairs_lh(h_cls, skeleton, config.mixup)
                elif config.mixup.mode == "vanilla":
                    pairs = make_pairs_vanilla(skeleton, config.mixup, pair_rng)
                else:
                    raise ValueError(f"mixing requested with mode {config.mixup.mode!r}")
    if pairs:
        n_pairs = len(pairs)
        scale = config.mix_loss_weight / n_pairs
        for d in range(1, depth_count + 1):
            w_d = model.verbalizer.matrix(d)
            name = f"verbalizer.depth{d}"
            for pair in pairs:
                inst_i, inst_j = batch[pair.index_i], batch[pair.index_j]
                h_i = hiddens[pair.index_i].h_mask(d)
                h_j = hiddens[pair.index_j].h_mask(d)
                h_mix = pair.lam * h_i + (1.0 - pair.lam) * h_j
                p = score_depth(h_mix, w_d)
                split_i = inst_i.splits[d - 1]
                split_j = inst_j.splits[d - 1]
                mixed += mixed_zmlce(pair.lam, p, split_i, split_j) / n_pairs
                g = mixed_zmlce_grad(pair.lam, p, split_i, split_j) * scale
                grads[name] += np.outer(g, h_mix)
                d_h = w_d.T @ g
                upstreams[pair.index_i][
                    inst_i.seq.mask_positions[d - 1]
                ] += pair.lam * d_h
                upstreams[pair.index_j][
                    inst_j.seq.mask_positions[d - 1]
                ] += (1.0 - pair.lam) * d_h

    loss = supervised + config.mix_loss_weight * mixed
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite batch loss {loss}")

    for inst, hidden, upstream in zip(batch, hiddens, upstreams):
        backward(model.encoder, inst.seq, hidden, upstream, grads)

    return BatchResult(
        loss=float(loss),
        supervised_loss=float(supervised),
        mixed_loss=float(mixed),
        grads=grads,
        pairs=pairs,
    )


# ---------------------------------------------------------------------------
# Evaluation helpers
# ---------------------------------------------------------------------------


def predict_instance(
    model: ModelState, inst: PreparedInstance, tax: Taxonomy
) -> set[str]:
    hidden = detached_forward(model.encoder, inst.seq)
    scores = [
        score_depth(hidden.h_mask(d), model.verbalizer.matrix(d))
        for d in range(1, tax.max_depth + 1)
    ]
    return predict(scores, tax)


def evaluate_model(
    model: ModelState,
    prepared: list[PreparedInstance],
    tax: Taxonomy,
    buckets: dict[str, int] | None = None,
    closure: bool = False,
) -> MetricsReport:
    preds, golds = [], []
    for inst in prepared:
        pred = predict_instance(model, inst, tax)
        if closure:
            pred = close_predictions(pred, tax)
        preds.append(pred)
        golds.append(set(inst.gold))
    return build_report(preds, golds, tax, buckets)


# ---------------------------------------------------------------------------
# Fit loop
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    mixed_loss: float
    dev_micro_f1: float | None
    dev_macro_f1: float | None


@dataclass
class PairRecord:
    epoch: int
    batch: int
    index_i: int
    index_j: int
    s: float | None
    lam: float


@dataclass
class FitResult:
    best_model: ModelState
    best_epoch: int | None
    best_dev: MetricsReport | None
    log: list[EpochRecord]
    pair_log: list[PairRecord]
    final_model: ModelState
    adam: AdamState
    epochs_run: int
    stopped: str  # "early" or "max_epochs"
    epoch_seconds: list[float]
    bad_epochs: int = 0
    best_macro: float = -np.inf

    def resume_state(self) -> "ResumeState":
        return ResumeState(
            model=self.final_model,
            adam=self.adam,
            epoch=self.epochs_run,
            best_model=self.best_model if self.best_epoch is not None else None,
            best_epoch=self.best_epoch,
            best_macro=self.best_macro,
            bad_epochs=self.bad_epochs,
        )


@dataclass
class ResumeState:
    """Mid-training snapshot sufficient to continue a run exactly."""

    model: ModelState
    adam: AdamState
    epoch: int
    best_model: ModelState | None
    best_epoch: int | None
    best_macro: float
    bad_epochs: int


def fit(
    train: list[PreparedInstance],
    dev: list[PreparedInstance],
    tax: Taxonomy,
    vocab: Vocabulary,
    config: TrainConfig,
    enc: EncoderConfig,
    resume_from: ResumeState | None = None,
    log_pairs: bool = True,
) -> FitResult:
    """Run the two-phase schedule and return the best checkpointed model.

    Warmup epochs are never evaluated or early-stopped; evaluation, best
    tracking and patience all start at the first post-warmup epoch. When
    no epoch was evaluated (warmup_epochs == max_epochs) the final
    parameters are returned as best.
    """
    if not train:
        raise ValueError("training split is empty")
    if resume_from is None:
        model = init_model(tax, vocab, enc, config.seed)
        adam = init_adam(model.named_parameters())
        start_epoch = 1
        best_model, best_epoch, best_macro, bad_epochs = None, None, -np.inf, 0
    else:
        model = resume_from.model
        adam = init_adam(model.named_parameters())
        adam.m, adam.v, adam.step = (
            resume_from.adam.m,
            resume_from.adam.v,
            resume_from.adam.step,
        )
        start_epoch = resume_from.epoch + 1
        best_model = resume_from.best_model
        best_epoch = resume_from.best_epoch
        best_macro = resume_from.best_macro
        bad_epochs = resume_from.bad_epochs

    params = model.named_parameters()
    frozen_similarity: EncoderParams | None = None
    mix_requested = config.mixup.mode != "off"
    log: list[EpochRecord] = []
    pair_log: list[PairRecord] = []
    epoch_seconds: list[float] = []
    best_dev: MetricsReport | None = None
    stopped = "max_epochs"
    epochs_run = start_epoch - 1

    for epoch in range(start_epoch, config.max_epochs + 1):
        tick = time.perf_counter()
        mix_active = mix_requested and epoch > config.warmup_epochs
        if (
            mix_active
            and config.freeze_similarity_encoder
            and config.mixup.mode == "lh"
            and frozen_similarity is None
        ):
            frozen_similarity = model.encoder.copy()

        order = np.random.default_rng(
            [config.seed, _STREAM_SHUFFLE, epoch]
        ).permutation(len(train))
        loss_sum = 0.0
        mixed_sum = 0.0
        pair_count = 0
        for batch_index in range(0, len(order), config.batch_size):
            indices = order[batch_index : batch_index + config.batch_size]
            batch = [train[i] for i in indices]
            pair_rng = np.random.default_rng(
                [config.seed, _STREAM_PAIRS, epoch, batch_index]
            )
            try:
                result = batch_loss(
                    model,
                    batch,
                    mix_active,
                    config,
                    pair_rng=pair_rng,
                    similarity_encoder=frozen_similarity,
                )
            except DivergenceError as exc:
                exc.log = log
                raise
            adam_step(params, result.grads, adam, config.learning_rate)
            loss_sum += result.supervised_loss * len(batch)
            mixed_sum += result.mixed_loss * len(result.pairs)
            pair_count += len(result.pairs)
            if log_pairs:
                for pair in result.pairs:
                    pair_log.append(
                        PairRecord(
                            epoch=epoch,
                            batch=batch_index // config.batch_size,
                            index_i=int(indices[pair.index_i]),
                            index_j=int(indices[pair.index_j]),
                            s=pair.s,
                            lam=pair.lam,
                        )
                    )

        train_loss = loss_sum / len(train)
        mixed_loss = mixed_sum / pair_count if pair_count else 0.0
        dev_report: MetricsReport | None = None
        if epoch > config.warmup_epochs and dev:
            dev_report = evaluate_model(model, dev, tax)
        log.append(
            EpochRecord(
                epoch=epoch,
                train_loss=train_loss,
                mixed_loss=mixed_loss,
                dev_micro_f1=dev_report.micro_f1 if dev_report else None,
                dev_macro_f1=dev_report.macro_f1 if dev_report else None,
            )
        )
        epoch_seconds.append(time.perf_counter() - tick)
        epochs_run = epoch

        if dev_report is not None:
            if dev_report.macro_f1 > best_macro:
                best_macro = dev_report.macro_f1
                best_model = model.copy()
                best_epoch = epoch
                best_dev = dev_report
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    stopped = "early"
                    break

    if best_model is None:  # nothing was evaluated
        best_model = model.copy()
    return FitResult(
        best_model=best_model,
        best_epoch=best_epoch,
        best_dev=best_dev,
        log=log,
        pair_log=pair_log,
        final_model=model,
        adam=adam,
        epochs_run=epochs_run,
        stopped=stopped,
        epoch_seconds=epoch_seconds,
        bad_epochs=bad_epochs,
        best_macro=best_macro,
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _array_obj(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": arr.astype(np.float64).ravel().tolist()}


def _array_from_obj(obj: dict) -> np.ndarray:
    return np.asarray(obj["data"], dtype=np.float64).reshape(obj["shape"])


def model_to_obj(model: ModelState) -> dict:
    return {name: _array_obj(p) for name, p in model.named_parameters().items()}


def model_from_obj(
    obj: dict, n_layers: int, depth_count: int
) -> ModelState:
    encoder = EncoderParams(
        token_embeddings=_array_from_obj(obj["token_embeddings"]),
        positional_embeddings=_array_from_obj(obj["positional_embeddings"]),
        layers=[
            LayerParams(
                w_self=_array_from_obj(obj[f"layer{i}.w_self"]),
                w_ctx=_array_from_obj(obj[f"layer{i}.w_ctx"]),
                w_prev=_array_from_obj(obj[f"layer{i}.w_prev"]),
                bias=_array_from_obj(obj[f"layer{i}.bias"]),
            )
            for i in range(n_layers)
        ],
    )
    verbalizer = Verbalizer(
        [_array_from_obj(obj[f"verbalizer.depth{d}"]) for d in range(1, depth_count + 1)]
    )
    return ModelState(encoder=encoder, verbalizer=verbalizer)


def save_checkpoint(
    path,
    model: ModelState,
    vocab: Vocabulary,
    taxonomy_entries: list[dict],
    train_config: TrainConfig,
    enc: EncoderConfig,
    resume: ResumeState | None = None,
) -> None:
    """Write a JSON checkpoint; float64 values survive the round trip exactly."""
    obj = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "encoder": {
            "d_model": enc.d_model,
            "n_layers": enc.n_layers,
            "max_len": enc.max_len,
            "init_std": enc.init_std,
        },
        "train_config": train_config_to_obj(train_config),
        "vocab": vocab.to_json_obj(),
        "taxonomy": taxonomy_entries,
        "params": model_to_obj(model),
    }
    if resume is not None:
        obj["resume"] = {
            "epoch": resume.epoch,
            "best_epoch": resume.best_epoch,
            "best_macro": resume.best_macro,
            "bad_epochs": resume.bad_epochs,
            "adam_step": resume.adam.step,
            "adam_m": {k: _array_obj(v) for k, v in resume.adam.m.items()},
            "adam_v": {k: _array_obj(v) for k, v in resume.adam.v.items()},
            "best_params": model_to_obj(resume.best_model)
            if resume.best_model is not None
            else None,
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)


@dataclass
class LoadedCheckpoint:
    model: ModelState
    vocab: Vocabulary
    taxonomy_entries: list[dict]
    train_config: TrainConfig
    enc: EncoderConfig
    resume: ResumeState | None


def train_config_to_obj(config: TrainConfig) -> dict:
    return {
        "learning_rate": config.learning_rate,
        "batch_size": config.batch_size,
        "max_epochs": config.max_epochs,
        "warmup_epochs": config.warmup_epochs,
        "patience": config.patience,
        "mix_loss_weight": config.mix_loss_weight,
        "seed": config.seed,
        "freeze_similarity_encoder": config.freeze_similarity_encoder,
        "mixup": {
            "mode": config.mixup.mode,
            "alpha": config.mixup.alpha,
            "beta_cap": config.mixup.beta_cap,
            "vanilla_concentration": config.mixup.vanilla_concentration,
            "seed": config.mixup.seed,
        },
    }


def train_config_from_obj(obj: dict) -> TrainConfig:
    mix = obj.get("mixup", {})
    return TrainConfig(
        learning_rate=obj["learning_rate"],
        batch_size=obj["batch_size"],
        max_epochs=obj["max_epochs"],
        warmup_epochs=obj["warmup_epochs"],
        patience=obj["patience"],
        mix_loss_weight=obj["mix_loss_weight"],
        seed=obj["seed"],
        freeze_similarity_encoder=obj.get("freeze_similarity_encoder", False),
        mixup=MixupConfig(
            mode=mix.get("mode", "off"),
            alpha=mix.get("alpha", 1.0),
            beta_cap=mix.get("beta_cap", 1.0),
            vanilla_concentration=mix.get("vanilla_concentration", 0.2),
            seed=mix.get("seed", 0),
        ),
    )


def load_checkpoint(path) -> LoadedCheckpoint:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    version = obj.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format {version!r} != supported {CHECKPOINT_FORMAT_VERSION}"
        )
    enc = EncoderConfig(**obj["encoder"])
    vocab = Vocabulary.from_json_obj(obj["vocab"])
    depth_count = vocab.depth_count
    model = model_from_obj(obj["params"], enc.n_layers, depth_count)
    if model.encoder.vocab_size != vocab.size:
        raise CheckpointError(
            f"embedding rows {model.encoder.vocab_size} != vocabulary size {vocab.size}"
        )
    resume = None
    if obj.get("resume"):
        r = obj["resume"]
        adam = AdamState(
            m={k: _array_from_obj(v) for k, v in r["adam_m"].items()},
            v={k: _array_from_obj(v) for k, v in r["adam_v"].items()},
            step=r["adam_step"],
        )
        best_model = (
            model_from_obj(r["best_params"], enc.n_layers, depth_count)
            if r.get("best_params")
            else None
        )
        resume = ResumeState(
            model=model,
            adam=adam,
            epoch=r["epoch"],
            best_model=best_model,
            best_epoch=r["best_epoch"],
            best_macro=r["best_macro"],
            bad_epochs=r["bad_epochs"],
        )
    return LoadedCheckpoint(
        model=model,
        vocab=vocab,
        taxonomy_entries=obj["taxonomy"],
        train_config=train_config_from_obj(obj["train_config"]),
        enc=enc,
        resume=resume,
    )
