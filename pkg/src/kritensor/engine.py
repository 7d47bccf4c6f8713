"""Monte Carlo population of the risk tensor.

R[i, j, k, l] = L_i(f(pi_k(x_j; theta_{k,l,j}))) for corruption distributions
and L_i(f(attack_k(x_j))) for adversarial ones, where the draw axis only
indexes attack restarts. Each perturbed input is evaluated once and shared by
every loss; clean predictions are computed once per sample.

Work is planned as (distribution, draw, sample) units with seeds derived up
front, then executed in chunks on any number of threads. Chunking never changes
a value: corruption noise is generated per element and the model's forward
pass is batch-invariant.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, NamedTuple

import numpy as np

from . import attacks as A
from . import corruptions as C
from . import losses as Lo
from . import rng as _rng
from . import tensor as T
from .config import ScenarioConfig
from .data import LabeledDataset
from .errors import BlackBoxModelError, ModelError, NumericError

log = logging.getLogger(__name__)

CHUNK = 512


class WorkUnit(NamedTuple):
    k: int
    draw: int
    j: int
    seed: int


def plan_work(config: ScenarioConfig, n_samples: int) -> list[WorkUnit]:
    """All units in (k, draw, j) lexicographic order with their derived seeds."""
    units = []
    draws = np.repeat(np.arange(config.n_draws), n_samples)
    js = np.tile(np.arange(n_samples), config.n_draws)
    for k, d in enumerate(config.distributions):
        seeds = _rng.derive_seeds(d.seed, k, draws, js)
        units.extend(WorkUnit(k, int(l), int(j), int(s)) for l, j, s in zip(draws, js, seeds))
    return units


def make_index(config: ScenarioConfig, dataset: LabeledDataset, attrs: dict | None = None) -> T.TensorIndex:
    return T.TensorIndex(
        loss_names=tuple(l.name for l in config.losses),
        sample_ids=tuple(dataset.sample_ids),
        distributions=tuple(config.distributions),
        n_draws=config.n_draws,
        attrs=dict(attrs or {}),
    )


def _corruption_spec(d: T.DistributionDescriptor, geometry) -> C.CorruptionSpec:
    return C.CorruptionSpec(d.family, d.params, geometry, d.seed)


def _attack_spec(d: T.DistributionDescriptor) -> A.AttackSpec:
    return A.AttackSpec.from_params(d.family, d.params, d.seed)


def _attack(model, spec: A.AttackSpec, x: np.ndarray, y: int, seed: int) -> np.ndarray:
    if spec.method == "fgsm":
        return A.fgsm(model, x, y, spec.epsilon)
    if spec.method == "pgd":
        return A.pgd(model, x, y, spec, seed=seed)
    return A.deepfool(model, x, spec).x_adv


def _checked_logits(model, x: np.ndarray) -> np.ndarray:
    out = np.asarray(model.logits(x), dtype=np.float64)
    if out.ndim != 2 or out.shape[0] != x.shape[0]:
        raise ModelError(f"model returned logits of shape {out.shape} for {x.shape[0]} inputs")
    if not np.all(np.isfinite(out)):
        raise NumericError("model produced non-finite logits")
    return out


def _losses(config: ScenarioConfig, logits: np.ndarray, clean: int, label: int) -> np.ndarray:
    rows = []
    for spec in config.losses:
        v = Lo.evaluate_batch(spec, logits, clean, label)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise NumericError(f"loss {spec.name!r} produced a non-finite or negative value")
        rows.append(v)
    return np.stack(rows)


def build_tensor(
    model,
    dataset: LabeledDataset,
    config: ScenarioConfig,
    workers: int = 1,
    attrs: dict | None = None,
) -> T.RiskTensor:
    """Populate every cell of a new risk tensor. Results do not depend on ``workers``."""
    n_x = dataset.input_dim
    if getattr(model, "input_dim", n_x) != n_x:
        raise ModelError(f"model expects {model.input_dim} inputs, dataset has {n_x}")
    adversarial = [d for d in config.distributions if d.kind == "adversarial"]
    if adversarial and getattr(model, "loss_and_input_gradient", None) is None:
        raise BlackBoxModelError("adversarial distributions need a gradient-capable model")

    t = T.new_tensor(make_index(config, dataset, attrs))
    clean_logits = _checked_logits(model, dataset.images)
    clean = np.argmax(clean_logits, axis=1)
    n_c = clean_logits.shape[1]
    if np.any(dataset.labels >= n_c):
        raise ModelError(f"dataset labels exceed the model's {n_c} classes")

    n = len(dataset)
    seeds = np.empty((len(config.distributions), config.n_draws, n), dtype=np.uint64)
    for u in plan_work(config, n):
        seeds[u.k, u.draw, u.j] = u.seed

    tasks = []
    for k, d in enumerate(config.distributions):
        for j in range(n):
            if d.kind == "adversarial" and _attack_spec(d).deterministic:
                tasks.append((k, j, 0, config.n_draws, True))
                continue
            for start in range(0, config.n_draws, CHUNK):
                tasks.append((k, j, start, min(start + CHUNK, config.n_draws), False))

    specs = [
        _attack_spec(d) if d.kind == "adversarial" else _corruption_spec(d, dataset.geometry)
        for d in config.distributions
    ]

    def run(task):
        k, j, lo, hi, replicate = task
        spec = specs[k]
        x, y = dataset.images[j], int(dataset.labels[j])
        if isinstance(spec, C.CorruptionSpec):
            draws = [C.sample_params(spec, int(s)) for s in seeds[k, lo:hi, j]]
            batch = C.apply_batch(spec, draws, x)
        elif replicate:
            batch = _attack(model, spec, x, y, int(seeds[k, 0, j]))[None, :]
        else:
            batch = np.stack([_attack(model, spec, x, y, int(s)) for s in seeds[k, lo:hi, j]])
        vals = _losses(config, _checked_logits(model, batch), int(clean[j]), y)
        if replicate:
            vals = np.repeat(vals, hi - lo, axis=1)
        return task, vals

    if workers <= 1:
        results: Iterable = map(run, tasks)
        _write(t, results)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            _write(t, pool.map(run, tasks))
    if not t.complete:  # pragma: no cover - every task writes its cells
        raise NumericError("risk tensor incomplete after population")
    log.info("populated tensor %s from %d tasks", t.dims, len(tasks))
    return t


def _write(t: T.RiskTensor, results) -> None:
    for (k, j, lo, hi, _), vals in results:
        t.values[:, j, k, lo:hi] = vals.astype(np.float32)


def rho_hat(t: T.RiskTensor, **selection) -> float:
    """Monte Carlo risk estimate: the mean over the selected cells.

    ``selection`` takes the keyword arguments of :func:`kritensor.tensor.filter`.
    """
    sub = T.filter(t, **selection) if selection else t
    return float(T.mean_values(sub).reshape(()))
