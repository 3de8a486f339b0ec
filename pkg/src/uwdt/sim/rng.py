"""Deterministic stream splitting: one generator per node plus one for the channel."""
from __future__ import annotations

import numpy as np

CHANNEL_STREAM = 0
NODE_STREAM = 1
AUX_STREAM = 2


def channel_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, CHANNEL_STREAM]))


def node_rng(seed: int, node_id: int) -> np.random.Generator:
    # keyed by node id so adding nodes leaves existing streams untouched
    return np.random.default_rng(np.random.SeedSequence([seed, NODE_STREAM, node_id]))


def aux_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, AUX_STREAM, *key]))
