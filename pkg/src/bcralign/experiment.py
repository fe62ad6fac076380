"""Desk-scale synthetic experiments shared by scripts and tests."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .cascade import BcrConfig, BcrModel, TrainingSet, fit_many, init_from_box, train_bcr
from .shapes import normalized_error
from .synth import SyntheticWorld, generate

SMALL_CONFIG = dict(n_trees=200, tree_depth=4, levels=3, n_candidates=100)


def training_set(faces) -> TrainingSet:
    return TrainingSet(
        [f.image for f in faces],
        np.array([f.shape for f in faces]),
        np.array([f.visibility for f in faces]),
        np.array([f.box for f in faces]),
    )


def synthetic_split(seed: int, n_train: int = 400, n_test: int = 100, world: SyntheticWorld | None = None):
    world = world or SyntheticWorld(seed=seed)
    train = generate(world, n_train, seed=seed)
    test = generate(world, n_test, seed=10_000 + seed)
    return world, train, test


@dataclass
class Evaluation:
    mean_error: float
    init_error: float
    visibility_accuracy: float
    errors: np.ndarray
    init_errors: np.ndarray
    paths: list

    @property
    def ratio(self) -> float:
        return self.mean_error / self.init_error


def evaluate(model: BcrModel, faces, roles, normalization: str = "interocular") -> Evaluation:
    inits = np.array([init_from_box(model, f.box) for f in faces])
    results = fit_many(model, [f.image for f in faces], inits)
    errs, init_errs, acc = [], [], []
    for f, r, s0 in zip(faces, results, inits):
        errs.append(normalized_error(r.shape, f.shape, f.visibility, normalization, roles))
        init_errs.append(normalized_error(s0, f.shape, f.visibility, normalization, roles))
        acc.append(np.mean(r.visibility == f.visibility))
    return Evaluation(
        float(np.mean(errs)), float(np.mean(init_errs)), float(np.mean(acc)),
        np.array(errs), np.array(init_errs), [r.path for r in results],
    )


def run(seed: int, verbose: bool = False, n_train: int = 400, n_test: int = 100, **overrides):
    """Train on a seeded synthetic split and evaluate on its held-out faces."""
    world, train, test = synthetic_split(seed, n_train, n_test)
    params = dict(SMALL_CONFIG, seed=seed)
    params.update(overrides)
    config = BcrConfig(**params)
    t0 = time.perf_counter()
    model = train_bcr(training_set(train), config)
    t1 = time.perf_counter()
    ev = evaluate(model, test, world.roles)
    if verbose:
        print(f"seed={seed} train {t1 - t0:.1f}s eval {time.perf_counter() - t1:.1f}s "
              f"init={ev.init_error:.4f} final={ev.mean_error:.4f} ratio={ev.ratio:.3f} "
              f"vis_acc={ev.visibility_accuracy:.3f}")
    return model, ev, world, test
