"""Shared fixture helpers: random ASTs and random desk-scale twins."""

from __future__ import annotations

import numpy as np
import pytest

from twinseg import dsl, synth
from twinseg.twin import TwinConfig, TwinState

CATEGORIES = ("cup", "box", "ball", "plant", "chair")


def random_expr(rng: np.random.Generator, depth: int = 0, max_depth: int = 5) -> dsl.Expr:
    """Well-typed random AST (object-set valued), depth-bounded."""
    leaves = ["all", "category", "attr", "semantic_select"]
    inner = ["spatial", "temporal1", "moving_toward", "after", "set", "selector1", "selector2"]
    choices = leaves if depth >= max_depth else leaves + inner * 2
    kind = choices[int(rng.integers(len(choices)))]
    if kind == "all":
        return dsl.All()
    if kind == "category":
        return dsl.CategoryFilter(str(rng.choice(CATEGORIES)))
    if kind == "attr":
        key = str(rng.choice(dsl.ATTR_KEYS))
        comparator = str(rng.choice(dsl.ATTR_COMPARATORS))
        value = float(np.round(rng.uniform(-10, 100), 3))
        return dsl.AttrFilter(key, comparator, value)
    if kind == "semantic_select":
        return dsl.SemanticSelect(str(rng.choice(CATEGORIES)))
    if kind == "spatial":
        name = str(rng.choice(dsl.SPATIAL_NAMES))
        return dsl.SpatialPred(name, random_expr(rng, depth + 1, max_depth),
                               random_expr(rng, depth + 1, max_depth))
    if kind == "temporal1":
        name = str(rng.choice(["moved", "entered", "exited"]))
        return dsl.TemporalPred(name, (random_expr(rng, depth + 1, max_depth),))
    if kind == "moving_toward":
        return dsl.TemporalPred("moving_toward", (random_expr(rng, depth + 1, max_depth),
                                                  random_expr(rng, depth + 1, max_depth)))
    if kind == "after":
        name = str(rng.choice(["after", "before"]))
        return dsl.TemporalPred(name, (random_expr(rng, depth + 1, max_depth),
                                       random_expr(rng, depth + 1, max_depth)))
    if kind == "set":
        op = str(rng.choice(dsl.SET_OPS))
        n = 1 if op == "not" else int(rng.integers(2, 4))
        return dsl.SetOp(op, tuple(random_expr(rng, depth + 1, max_depth) for _ in range(n)))
    if kind == "selector1":
        name = str(rng.choice(["largest", "smallest"]))
        return dsl.Selector(name, (random_expr(rng, depth + 1, max_depth),))
    name = str(rng.choice(["closest_to", "farthest_from"]))
    return dsl.Selector(name, (random_expr(rng, depth + 1, max_depth),
                               random_expr(rng, depth + 1, max_depth)))


def random_twin(rng: np.random.Generator, n_objects: int | None = None,
                frames: int | None = None, window: int = 6) -> TwinState:
    """Twin built by streaming a random linear scenario through updates."""
    n = n_objects if n_objects is not None else int(rng.integers(1, 6))
    f = frames if frames is not None else int(rng.integers(2, 9))
    spec = synth.random_linear_scenario(rng, n_objects=n, frames=f)
    twin = TwinState(TwinConfig(window=window))
    for obs in synth.scenario_frames(spec):
        twin.update(obs)
    return twin


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
