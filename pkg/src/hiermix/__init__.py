"""Hierarchical text classification with depth-level prompts and
similarity-guided hidden-state mixing."""

__version__ = "0.1.0"

from .corpus import (
    DatasetSplit,
    Instance,
    SyntheticSpec,
    Vocabulary,
    build_vocabulary,
    downsample,
    generate_synthetic,
    load_corpus,
    tokenize,
)
from .encoder import (
    DetachedGradientError,
    EncoderParams,
    HiddenStates,
    backward,
    detached_forward,
    forward,
    init_encoder_params,
)
from .evaluation import (
    MetricsReport,
    breakdown_by_bucket,
    breakdown_by_depth,
    macro_f1,
    micro_f1,
    rank_similar_labels,
    welch_t_test,
)
from .mixup import (
    MixPair,
    MixupConfig,
    mix_hidden,
    mix_ratio,
    pair_batch,
    sample_vanilla_ratio,
    similarity,
)
from .objective import (
    DepthLabelSplit,
    DepthScores,
    mixed_zmlce,
    mixed_zmlce_grad,
    predict,
    score_depth,
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
from .taxonomy import (
    LabelNode,
    LocalHierarchy,
    Taxonomy,
    TaxonomyError,
    extract_local_hierarchy,
    label_frequency_buckets,
    load_taxonomy,
)
from .trainer import (
    AdamState,
    EncoderConfig,
    ModelState,
    TrainConfig,
    adam_step,
    batch_loss,
    evaluate_model,
    fit,
    init_adam,
    init_model,
    load_checkpoint,
    prepare_instances,
    save_checkpoint,
)
