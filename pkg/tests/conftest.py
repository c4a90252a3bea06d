import random

import pytest

from sketch import SketchConfig, SpaceSavingSetSketch


@pytest.fixture
def make_sketch():
    """Factory for sketches; exact counters unless asked otherwise."""
    def factory(variant='ssss', size=16, counter='exact', registers=1024, seed=0, cache_theta=True):
        config = SketchConfig.create(variant, size, registers, counter, seed)
        return SpaceSavingSetSketch(config, cache_theta=cache_theta)
    return factory


@pytest.fixture
def make_stream():
    """
    Factory for random labeled streams.

    Labels follow a 1/rank^skew law over n_labels; items come from a pool of
    n_items so labels see repeated and shared items.
    """
    def factory(seed, n_entries, n_labels, n_items=50, skew=1.0):
        rng = random.Random(seed)
        labels = [b'l%04d' % i for i in range(n_labels)]
        weights = [1.0 / (rank + 1) ** skew for rank in range(n_labels)]
        chosen = rng.choices(labels, weights=weights, k=n_entries)
        return [(label, b'x%d' % rng.randrange(n_items)) for label in chosen]
    return factory
