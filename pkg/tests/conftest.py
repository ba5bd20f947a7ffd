import json

import pytest

from hiermix.corpus import SyntheticSpec, build_vocabulary, generate_synthetic
from hiermix.taxonomy import load_taxonomy

# Two-root toy forest: cs -> {machine learning, software},
# math -> {statistics, geometry}.
TOY_ENTRIES = [
    {"id": "cs", "name": "cs", "parent": None},
    {"id": "math", "name": "math", "parent": None},
    {"id": "ml", "name": "machine learning", "parent": "cs"},
    {"id": "sw", "name": "software", "parent": "cs"},
    {"id": "stat", "name": "statistics", "parent": "math"},
    {"id": "geom", "name": "geometry", "parent": "math"},
]


@pytest.fixture(scope="session")
def toy_tax():
    return load_taxonomy(json.dumps(TOY_ENTRIES))


@pytest.fixture(scope="session")
def small_synth():
    """Tiny corpus for fast trainer-level tests."""
    spec = SyntheticSpec(
        depth=2,
        branching=2,
        n_train=80,
        n_dev=30,
        n_test=30,
        noise_rate=0.2,
        seed=11,
        tokens_per_instance=8,
    )
    tax, train, dev, test = generate_synthetic(spec)
    vocab = build_vocabulary(train, 1, tax.max_depth)
    return tax, train, dev, test, vocab
