"""Key risk indicators: filtered means over risk tensors and their convex combination."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from . import tensor as T
from .errors import ConfigError

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class KRIDefinition:
    """One indicator: a loss plus a selection of distributions and samples.

    Distribution criteria (``families``, ``distributions``, ``kinds``) are
    AND-ed; ``None`` means no constraint. ``datasets`` selects samples whose
    id carries that dataset prefix (``name/id``).
    """

    name: str
    loss: str
    families: tuple[str, ...] | None = None
    distributions: tuple[str, ...] | None = None
    kinds: tuple[str, ...] | None = None
    samples: tuple[str, ...] | None = None
    datasets: tuple[str, ...] | None = None

    def matches(self, d: T.DistributionDescriptor) -> bool:
        return (
            (self.families is None or d.family in self.families)
            and (self.distributions is None or d.name in self.distributions)
            and (self.kinds is None or d.kind in self.kinds)
        )

    def sample_selection(self, sample_ids: Sequence[str]) -> list[str] | None:
        if self.samples is None and self.datasets is None:
            return None
        chosen = list(sample_ids)
        if self.samples is not None:
            wanted = set(self.samples)
            chosen = [s for s in chosen if s in wanted]
        if self.datasets is not None:
            prefixes = tuple(f"{d}/" for d in self.datasets)
            chosen = [s for s in chosen if s.startswith(prefixes)]
        return chosen

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "loss": self.loss}
        for key in ("families", "distributions", "kinds", "samples", "datasets"):
            v = getattr(self, key)
            if v is not None:
                out[key] = list(v)
        return out


def _has_cells(t: T.RiskTensor, d: KRIDefinition) -> bool:
    return d.loss in t.index.loss_names and any(d.matches(x) for x in t.index.distributions)


def select(t: T.RiskTensor, d: KRIDefinition) -> T.RiskTensor:
    samples = d.sample_selection(t.index.sample_ids)
    if samples is not None and not samples:
        raise ConfigError(f"KRI {d.name!r}: sample filter selects nothing")
    try:
        return T.filter(t, losses=[d.loss], samples=samples, distributions=d.matches)
    except ConfigError as exc:
        raise ConfigError(f"KRI {d.name!r}: {exc}") from None


def compute_kris(tensors: T.RiskTensor | Sequence[T.RiskTensor], defs: Iterable[KRIDefinition]) -> dict[str, float]:
    """Mean over each definition's cells.

    With several tensors (e.g. scenario parts computed at different times) each
    KRI must find its cells in exactly one of them; tensors are never merged.
    """
    if isinstance(tensors, T.RiskTensor):
        tensors = [tensors]
    out: dict[str, float] = {}
    for d in defs:
        hits = [t for t in tensors if _has_cells(t, d)]
        if not hits:
            raise ConfigError(f"KRI {d.name!r} selects no cells (loss {d.loss!r}, filter matches nothing)")
        if len(hits) > 1:
            raise ConfigError(f"KRI {d.name!r} matches cells in {len(hits)} tensors; narrow its filter")
        out[d.name] = float(T.mean_values(select(hits[0], d)).reshape(()))
    return out


def cell_counts(tensors: T.RiskTensor | Sequence[T.RiskTensor], defs: Iterable[KRIDefinition]) -> dict[str, int]:
    if isinstance(tensors, T.RiskTensor):
        tensors = [tensors]
    out = {}
    for d in defs:
        hits = [t for t in tensors if _has_cells(t, d)]
        if len(hits) != 1:
            raise ConfigError(f"KRI {d.name!r} must match exactly one tensor")
        out[d.name] = int(select(hits[0], d).values.size)
    return out


def check_weights(weights: Mapping[str, float], names: Iterable[str]) -> None:
    names = list(names)
    missing = sorted(set(names) - set(weights))
    extra = sorted(set(weights) - set(names))
    if missing or extra:
        raise ConfigError(f"weights must cover exactly the KRIs (missing {missing}, extra {extra})")
    for k, a in weights.items():
        if not (math.isfinite(a) and a >= 0):
            raise ConfigError(f"weight {k!r} must be finite and >= 0")
    total = math.fsum(weights.values())
    if abs(total - 1.0) > WEIGHT_TOL:
        raise ConfigError(f"weights sum to {total!r}, not 1")


def equal_weights(names: Sequence[str]) -> dict[str, float]:
    return {n: 1.0 / len(names) for n in names}


def combine(kris: Mapping[str, float], weights: Mapping[str, float]) -> float:
    """Convex combination sum_i alpha_i * rho_i, summed in KRI order."""
    check_weights(weights, kris)
    total = 0.0
    for name, value in kris.items():
        total += weights[name] * value
    return total


@dataclass
class KRIReport:
    kris: dict[str, float]
    weights: dict[str, float]
    final: float
    definitions: list[dict[str, Any]] = field(default_factory=list)
    provenance: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "kris": [
                {"name": n, "value": v, "weight": self.weights[n]} for n, v in self.kris.items()
            ],
            "final_risk": self.final,
            "definitions": self.definitions,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "KRIReport":
        kris = {k["name"]: float(k["value"]) for k in obj["kris"]}
        weights = {k["name"]: float(k["weight"]) for k in obj["kris"]}
        return cls(kris, weights, float(obj["final_risk"]), list(obj.get("definitions", [])), dict(obj.get("provenance", {})))


def build_report(
    tensors: T.RiskTensor | Sequence[T.RiskTensor],
    defs: Sequence[KRIDefinition],
    weights: Mapping[str, float] | None = None,
    provenance: Mapping[str, Any] | None = None,
) -> KRIReport:
    if not defs:
        raise ConfigError("no KRI definitions")
    kris = compute_kris(tensors, defs)
    weights = dict(weights) if weights is not None else equal_weights(list(kris))
    final = combine(kris, weights)
    return KRIReport(kris, {n: weights[n] for n in kris}, final, [d.to_json() for d in defs], dict(provenance or {}))


def report_json(report: KRIReport) -> str:
    return json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"


def report_csv(report: KRIReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "value", "weight"])
    for name, value in report.kris.items():
        w.writerow([name, repr(value), repr(report.weights[name])])
    w.writerow(["final_risk", repr(report.final), repr(1.0)])
    return buf.getvalue()


def plot_rows(reports: Sequence[KRIReport]) -> list[tuple[str, str, float]]:
    """(group, label, value) rows, grouped by model id; the final risk appears as label ``final``."""
    rows = []
    for n, r in enumerate(reports):
        group = str(r.provenance.get("model_id") or f"model{n}")
        rows.extend((group, name, value) for name, value in r.kris.items())
        rows.append((group, "final", r.final))
    return sorted(rows, key=lambda row: (row[0], row[1]))


def report_plotdata(reports: KRIReport | Sequence[KRIReport]) -> str:
    if isinstance(reports, KRIReport):
        reports = [reports]
    lines = ["group\tlabel\tvalue"]
    lines += [f"{g}\t{l}\t{v!r}" for g, l, v in plot_rows(reports)]
    return "\n".join(lines) + "\n"


_RENDERERS = {"json": (report_json, ".json"), "csv": (report_csv, ".csv"), "plotdata": (report_plotdata, ".tsv")}


def emit_report(report: KRIReport, fmt: str, path: str | Path) -> Path:
    if fmt not in _RENDERERS:
        raise ConfigError(f"unknown report format {fmt!r}")
    render, _ = _RENDERERS[fmt]
    path = Path(path)
    path.write_text(render(report))
    return path


def load_report(path: str | Path) -> KRIReport:
    return KRIReport.from_json(json.loads(Path(path).read_text()))
