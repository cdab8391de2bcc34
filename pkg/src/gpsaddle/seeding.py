"""Deterministic seed plumbing.

A single root seed is split into named sub-streams so each stage of a run
(initial data, hyperparameter search, path sampling, SPSA, observation
noise) draws from its own reproducible source.
"""

from __future__ import annotations

import numpy as np

STREAM_NAMES = ("init-data", "mle", "paths", "spsa", "noise")


def seed_streams(root_seed: int) -> dict:
    """Split a root seed into one SeedSequence per named stream."""
    children = np.random.SeedSequence(root_seed).spawn(len(STREAM_NAMES))
    return dict(zip(STREAM_NAMES, children))


def next_seed(stream: np.random.SeedSequence) -> int:
    """Draw the next deterministic integer sub-seed from a stream."""
    child = stream.spawn(1)[0]
    return int(child.generate_state(1, np.uint64)[0])


def default_direction(d: int, seed: int) -> np.ndarray:
    """Seed-dependent unit start direction: normalized ones, rotated.

    The rotation acts in the plane of the first two coordinates so the
    vector varies with the seed without favoring any axis.
    """
    v = np.ones(d) / np.sqrt(d)
    if d >= 2:
        theta = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(theta), np.sin(theta)
        x0, x1 = v[0], v[1]
        v = v.copy()
        v[0] = c * x0 - s * x1
        v[1] = s * x0 + c * x1
    return v / np.linalg.norm(v)
