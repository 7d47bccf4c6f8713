"""Risk tensor R[loss, sample, distribution, draw] and its KRIT file format.

Values are float32 in row-major order (loss slowest, draw fastest). NaN marks a
cell that has not been computed yet; real losses are finite and nonnegative.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, FormatError, IncompleteTensorError

MAGIC = b"KRIT"
VERSION = 1
_HEADER = struct.Struct("<4sHH4IQ")

AXES = ("loss", "sample", "dist", "draw")
KINDS = ("corruption", "adversarial", "mixed")


@dataclass(frozen=True)
class DistributionDescriptor:
    name: str
    family: str
    params: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    kind: str = "corruption"

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "family": self.family,
            "params": self.params,
            "seed": self.seed,
            "kind": self.kind,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "DistributionDescriptor":
        return cls(
            name=str(obj["name"]),
            family=str(obj["family"]),
            params=dict(obj.get("params", {})),
            seed=int(obj.get("seed", 0)),
            kind=str(obj.get("kind", "corruption")),
        )


@dataclass(frozen=True)
class TensorIndex:
    """Axis labels. ``attrs`` holds free-form provenance (model id, config hash)."""

    loss_names: tuple[str, ...]
    sample_ids: tuple[str, ...]
    distributions: tuple[DistributionDescriptor, ...]
    n_draws: int
    attrs: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "loss_names", tuple(self.loss_names))
        object.__setattr__(self, "sample_ids", tuple(str(s) for s in self.sample_ids))
        object.__setattr__(self, "distributions", tuple(self.distributions))

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (len(self.loss_names), len(self.sample_ids), len(self.distributions), self.n_draws)

    @property
    def distribution_names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.distributions)

    def validate(self) -> None:
        for axis, n in zip(AXES, self.dims):
            if n < 1:
                raise ConfigError(f"tensor axis {axis!r} is empty")
        for axis, labels in (
            ("loss", self.loss_names),
            ("sample", self.sample_ids),
            ("dist", self.distribution_names),
        ):
            if len(set(labels)) != len(labels):
                raise ConfigError(f"duplicate identifiers on {axis} axis")
        for d in self.distributions:
            if d.kind not in KINDS:
                raise ConfigError(f"distribution {d.name!r}: unknown kind {d.kind!r}")

    def to_json(self) -> dict[str, Any]:
        return {
            "loss_names": list(self.loss_names),
            "sample_ids": list(self.sample_ids),
            "distributions": [d.to_json() for d in self.distributions],
            "n_draws": self.n_draws,
            "attrs": self.attrs,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "TensorIndex":
        return cls(
            loss_names=tuple(obj["loss_names"]),
            sample_ids=tuple(obj["sample_ids"]),
            distributions=tuple(DistributionDescriptor.from_json(d) for d in obj["distributions"]),
            n_draws=int(obj["n_draws"]),
            attrs=dict(obj.get("attrs", {})),
        )


class RiskTensor:
    def __init__(self, index: TensorIndex, values: np.ndarray):
        index.validate()
        values = np.asarray(values)
        if values.dtype != np.float32:
            raise TypeError("risk tensor values must be float32")
        if values.shape != index.dims:
            raise ConfigError(f"values shape {values.shape} does not match index dims {index.dims}")
        self.index = index
        self.values = values

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.index.dims

    @property
    def complete(self) -> bool:
        return not bool(np.isnan(self.values).any())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RiskTensor):
            return NotImplemented
        return self.index == other.index and self.values.tobytes() == other.values.tobytes()

    def __repr__(self) -> str:
        n_missing = int(np.isnan(self.values).sum())
        return f"RiskTensor(dims={self.dims}, missing={n_missing})"


def new_tensor(index: TensorIndex) -> RiskTensor:
    index.validate()
    return RiskTensor(index, np.full(index.dims, np.nan, dtype=np.float32))


def write_entry(t: RiskTensor, i: int, j: int, k: int, ell: int, v: float) -> None:
    for axis, idx, n in zip(AXES, (i, j, k, ell), t.dims):
        if not 0 <= idx < n:
            raise IndexError(f"{axis} index {idx} out of range [0, {n})")
    if not np.isfinite(v) or v < 0:
        raise ValueError(f"loss value must be finite and nonnegative, got {v!r}")
    t.values[i, j, k, ell] = v


def _resolve(labels: Sequence[str], wanted: Iterable[str] | None, axis: str) -> list[int]:
    if wanted is None:
        return list(range(len(labels)))
    wanted = list(wanted)
    pos = {name: n for n, name in enumerate(labels)}
    missing = [w for w in wanted if w not in pos]
    if missing:
        raise ConfigError(f"{axis} selection names unknown entries: {missing}")
    # keep tensor order regardless of selection order
    picked = sorted({pos[w] for w in wanted})
    if not picked:
        raise ConfigError(f"{axis} selection is empty")
    return picked


def filter(
    t: RiskTensor,
    losses: Iterable[str] | None = None,
    samples: Iterable[str] | None = None,
    distributions: Callable[[DistributionDescriptor], bool] | Iterable[str] | None = None,
) -> RiskTensor:
    """Sub-tensor over the selected losses, samples and distributions.

    ``distributions`` is either a list of distribution names or a predicate on
    descriptors. Selecting nothing on any axis raises :class:`ConfigError`.
    """
    idx = t.index
    li = _resolve(idx.loss_names, losses, "loss")
    si = _resolve(idx.sample_ids, samples, "sample")
    if callable(distributions):
        di = [n for n, d in enumerate(idx.distributions) if distributions(d)]
        if not di:
            raise ConfigError("distribution predicate matches nothing")
    else:
        di = _resolve(idx.distribution_names, distributions, "distribution")
    sub = TensorIndex(
        loss_names=tuple(idx.loss_names[n] for n in li),
        sample_ids=tuple(idx.sample_ids[n] for n in si),
        distributions=tuple(idx.distributions[n] for n in di),
        n_draws=idx.n_draws,
        attrs=dict(idx.attrs),
    )
    return RiskTensor(sub, t.values[np.ix_(li, si, di, range(idx.n_draws))].copy())


def _axis_numbers(axes: Iterable[str]) -> tuple[int, ...]:
    nums = []
    for a in axes:
        if a not in AXES:
            raise ConfigError(f"unknown axis {a!r}; expected one of {AXES}")
        nums.append(AXES.index(a))
    return tuple(sorted(set(nums)))


def mean_values(t: RiskTensor, axes: Iterable[str] = AXES) -> np.ndarray:
    """Float64 mean over ``axes`` with the reduced axes kept as length 1.

    Cells are summed as a left fold in index order (``cumsum`` is strictly
    sequential), so results do not depend on numpy's pairwise blocking.
    """
    if not t.complete:
        raise IncompleteTensorError("tensor has uncomputed (NaN) cells")
    red = _axis_numbers(axes)
    keep = tuple(a for a in range(4) if a not in red)
    moved = np.transpose(t.values, keep + red).astype(np.float64)
    kept_shape = moved.shape[: len(keep)]
    count = int(np.prod(moved.shape[len(keep):], dtype=np.int64))
    flat = moved.reshape(kept_shape + (count,))
    total = np.cumsum(flat, axis=-1)[..., -1]
    out_shape = tuple(1 if a in red else t.dims[a] for a in range(4))
    return (total / count).reshape(out_shape)


def aggregate_mean(t: RiskTensor, axes: Iterable[str] = AXES) -> RiskTensor:
    """Mean over ``axes`` as a tensor; reduced axes collapse to a single ``"mean"`` label.

    The stored result is float32 like any tensor. Use :func:`mean_values` when
    double precision matters (KRIs do).
    """
    red = _axis_numbers(axes)
    means = mean_values(t, axes)
    idx = t.index
    if 2 in red:
        kinds = {d.kind for d in idx.distributions}
        dists = (
            DistributionDescriptor(
                name="mean",
                family="aggregate",
                kind=kinds.pop() if len(kinds) == 1 else "mixed",
            ),
        )
    else:
        dists = idx.distributions
    sub = TensorIndex(
        loss_names=("mean",) if 0 in red else idx.loss_names,
        sample_ids=("mean",) if 1 in red else idx.sample_ids,
        distributions=dists,
        n_draws=1 if 3 in red else idx.n_draws,
        attrs=dict(idx.attrs),
    )
    return RiskTensor(sub, means.astype(np.float32))


def _metadata_bytes(index: TensorIndex) -> bytes:
    return json.dumps(index.to_json(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def to_bytes(t: RiskTensor) -> bytes:
    meta = _metadata_bytes(t.index)
    header = _HEADER.pack(MAGIC, VERSION, 0, *t.dims, len(meta))
    payload = np.ascontiguousarray(t.values, dtype="<f4").tobytes()
    return header + meta + payload


def from_bytes(data: bytes) -> RiskTensor:
    if len(data) < _HEADER.size:
        raise FormatError("file too short for KRIT header")
    magic, version, reserved, nl, ns, nd, nw, meta_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported KRIT version {version}")
    if reserved != 0:
        raise FormatError("reserved header field must be 0")
    dims = (nl, ns, nd, nw)
    start = _HEADER.size
    if len(data) < start + meta_len:
        raise FormatError("truncated metadata")
    try:
        index = TensorIndex.from_json(json.loads(data[start : start + meta_len].decode("utf-8")))
        index.validate()
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"invalid metadata: {exc}") from exc
    if index.dims != dims:
        raise FormatError(f"metadata dims {index.dims} disagree with header dims {dims}")
    payload = data[start + meta_len :]
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    if len(payload) < expected:
        raise FormatError(f"truncated payload: {len(payload)} of {expected} bytes")
    if len(payload) > expected:
        raise FormatError(f"{len(payload) - expected} trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    finite = values[~np.isnan(values)]
    if not np.all(np.isfinite(finite)) or np.any(finite < 0):
        raise FormatError("payload holds negative or infinite loss values")
    return RiskTensor(index, values)


def save(t: RiskTensor, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(t))


def load(path: str | Path) -> RiskTensor:
    return from_bytes(Path(path).read_bytes())
