"""Scenario configuration files (JSON).

Example::

    {
      "datasets": [{"name": "test", "path": "test.krid", "limit": 200}],
      "master_seed": 7,
      "n_draws": 100,
      "distributions": [
        {"name": "bright", "family": "brightness", "params": {"beta": [-0.3, 0.3]}},
        {"name": "noise", "family": "gaussian", "params": {"sigma": 0.1}},
        {"name": "fgsm", "family": "fgsm", "params": {"epsilon": 0.03}}
      ],
      "losses": [{"name": "cc", "kind": "class_change"}],
      "kris": [
        {"name": "sensor", "loss": "cc", "families": ["brightness"]},
        {"name": "random", "loss": "cc", "families": ["gaussian"]},
        {"name": "adversarial", "loss": "cc", "kinds": ["adversarial"]}
      ],
      "weights": {"sensor": 0.5, "random": 0.4, "adversarial": 0.1}
    }

``dataset`` (a path or one entry) may stand in for ``datasets``. Unknown keys
are rejected at every level.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .attacks import METHODS as ATTACK_METHODS
from .attacks import AttackSpec
from .corruptions import FAMILIES as CORRUPTION_FAMILIES
from .corruptions import normalize_params
from .errors import ConfigError
from .kri import KRIDefinition, check_weights
from .losses import LossSpec, load_cost_matrix_csv
from .tensor import DistributionDescriptor

TOP_KEYS = {"dataset", "datasets", "master_seed", "n_draws", "distributions", "losses", "kris", "weights"}
DATASET_KEYS = {"name", "path", "samples", "limit"}
DIST_KEYS = {"name", "family", "kind", "params", "n_draws", "seed"}
LOSS_KEYS = {"name", "kind", "reference", "cost_matrix", "cost_matrix_csv"}
KRI_KEYS = {"name", "loss", "families", "distributions", "kinds", "samples", "datasets"}


@dataclass(frozen=True)
class DatasetRef:
    path: str
    name: str = ""
    samples: tuple[str, ...] | None = None
    limit: int | None = None


@dataclass
class ScenarioConfig:
    distributions: list[DistributionDescriptor]
    losses: list[LossSpec]
    n_draws: int = 1
    master_seed: int = 0
    datasets: list[DatasetRef] = field(default_factory=list)
    kris: list[KRIDefinition] = field(default_factory=list)
    weights: dict[str, float] | None = None
    digest: str = ""

    def __post_init__(self):
        if not self.distributions:
            raise ConfigError("at least one distribution is required")
        if not self.losses:
            raise ConfigError("at least one loss is required")
        if self.n_draws < 1:
            raise ConfigError("n_draws must be >= 1")
        for label, names in (
            ("distribution", [d.name for d in self.distributions]),
            ("loss", [l.name for l in self.losses]),
            ("kri", [k.name for k in self.kris]),
        ):
            if len(set(names)) != len(names):
                raise ConfigError(f"duplicate {label} names")
        if self.weights is not None:
            check_weights(self.weights, [k.name for k in self.kris])


def _require_keys(obj: Any, allowed: set[str], where: str) -> dict[str, Any]:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return obj


def _int(v: Any, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    return v


def _names(v: Any, where: str) -> tuple[str, ...] | None:
    if v is None:
        return None
    if not isinstance(v, list) or not all(isinstance(s, (str, int)) for s in v):
        raise ConfigError(f"{where}: expected a list of names")
    return tuple(str(s) for s in v)


def parse_distribution(obj: Any, n: int, master_seed: int) -> DistributionDescriptor:
    where = f"distributions[{n}]"
    obj = _require_keys(obj, DIST_KEYS, where)
    try:
        name, family = str(obj["name"]), str(obj["family"])
    except KeyError as exc:
        raise ConfigError(f"{where}: missing {exc}") from None
    params = obj.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"{where}: params must be an object")
    seed = _int(obj.get("seed", master_seed), f"{where}.seed")
    if family in CORRUPTION_FAMILIES:
        kind = "corruption"
        normalize_params(family, params)
    elif family in ATTACK_METHODS:
        kind = "adversarial"
        AttackSpec.from_params(family, params, seed)
    else:
        raise ConfigError(f"{where}: unknown family {family!r}")
    if obj.get("kind", kind) != kind:
        raise ConfigError(f"{where}: family {family!r} is of kind {kind!r}")
    return DistributionDescriptor(name=name, family=family, params=params, seed=seed, kind=kind)


def parse_loss(obj: Any, n: int, base_dir: Path) -> LossSpec:
    where = f"losses[{n}]"
    obj = _require_keys(obj, LOSS_KEYS, where)
    if "name" not in obj or "kind" not in obj:
        raise ConfigError(f"{where}: name and kind are required")
    cost = obj.get("cost_matrix")
    if "cost_matrix_csv" in obj:
        if cost is not None:
            raise ConfigError(f"{where}: give cost_matrix or cost_matrix_csv, not both")
        cost = load_cost_matrix_csv(base_dir / obj["cost_matrix_csv"])
    return LossSpec(name=str(obj["name"]), kind=str(obj["kind"]), reference=obj.get("reference"), cost_matrix=cost)


def parse_kri(obj: Any, n: int) -> KRIDefinition:
    where = f"kris[{n}]"
    obj = _require_keys(obj, KRI_KEYS, where)
    if "name" not in obj or "loss" not in obj:
        raise ConfigError(f"{where}: name and loss are required")
    return KRIDefinition(
        name=str(obj["name"]),
        loss=str(obj["loss"]),
        families=_names(obj.get("families"), f"{where}.families"),
        distributions=_names(obj.get("distributions"), f"{where}.distributions"),
        kinds=_names(obj.get("kinds"), f"{where}.kinds"),
        samples=_names(obj.get("samples"), f"{where}.samples"),
        datasets=_names(obj.get("datasets"), f"{where}.datasets"),
    )


def _parse_dataset(obj: Any, where: str) -> DatasetRef:
    if isinstance(obj, str):
        return DatasetRef(path=obj)
    obj = _require_keys(obj, DATASET_KEYS, where)
    if "path" not in obj:
        raise ConfigError(f"{where}: path is required")
    limit = obj.get("limit")
    if limit is not None and _int(limit, f"{where}.limit") < 1:
        raise ConfigError(f"{where}: limit must be >= 1")
    return DatasetRef(
        path=str(obj["path"]),
        name=str(obj.get("name", "")),
        samples=_names(obj.get("samples"), f"{where}.samples"),
        limit=limit,
    )


def parse_config(obj: Any, base_dir: str | Path = ".") -> ScenarioConfig:
    obj = _require_keys(obj, TOP_KEYS, "config")
    base_dir = Path(base_dir)
    if "dataset" in obj and "datasets" in obj:
        raise ConfigError("config: use either dataset or datasets")
    raw_ds = obj.get("datasets", [obj["dataset"]] if "dataset" in obj else [])
    if not isinstance(raw_ds, list):
        raise ConfigError("config: datasets must be a list")
    datasets = [_parse_dataset(d, f"datasets[{n}]") for n, d in enumerate(raw_ds)]
    if len(datasets) > 1 and len({d.name for d in datasets}) != len(datasets):
        raise ConfigError("config: several datasets need distinct names")
    master_seed = _int(obj.get("master_seed", 0), "master_seed")
    raw_dists = obj.get("distributions")
    if not isinstance(raw_dists, list) or not raw_dists:
        raise ConfigError("config: distributions must be a nonempty list")
    dists = [parse_distribution(d, n, master_seed) for n, d in enumerate(raw_dists)]
    n_draws = obj.get("n_draws")
    per_dist = {_int(d["n_draws"], f"distributions[{n}].n_draws") for n, d in enumerate(raw_dists) if "n_draws" in d}
    if n_draws is None:
        if len(per_dist) != 1 or any("n_draws" not in d for d in raw_dists):
            raise ConfigError("config: n_draws missing")
        n_draws = per_dist.pop()
    n_draws = _int(n_draws, "n_draws")
    if per_dist - {n_draws}:
        raise ConfigError(
            "config: all distributions in one tensor share n_draws; put differing draw counts in separate configs"
        )
    raw_losses = obj.get("losses")
    if not isinstance(raw_losses, list) or not raw_losses:
        raise ConfigError("config: losses must be a nonempty list")
    losses = [parse_loss(l, n, base_dir) for n, l in enumerate(raw_losses)]
    kris = [parse_kri(k, n) for n, k in enumerate(obj.get("kris", []))]
    weights = obj.get("weights")
    if weights is not None:
        if not isinstance(weights, dict):
            raise ConfigError("config: weights must be an object")
        try:
            weights = {str(k): float(v) for k, v in weights.items()}
        except (TypeError, ValueError):
            raise ConfigError("config: weights must be numbers") from None
    digest = hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()
    return ScenarioConfig(
        distributions=dists,
        losses=losses,
        n_draws=n_draws,
        master_seed=master_seed,
        datasets=datasets,
        kris=kris,
        weights=weights,
        digest=digest,
    )


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(obj, base_dir=path.parent)
