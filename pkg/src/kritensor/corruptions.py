"""Parametric image corruptions with seeded parameter draws.

A corruption is a map x -> pi(x; theta). ``sample_params`` draws theta from
the family's parameter distribution (uniform over configured ranges, except
the fixed gaussian sigma); ``apply`` is a deterministic function of
(spec, draw, image). Outputs are always clipped to [0, 1].

Images are flat vectors in channel-plane order; see :mod:`kritensor.data`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from . import rng as _rng
from .errors import ConfigError, DataError

FAMILIES = ("brightness", "contrast", "shadow", "rotation", "gaussian", "uniform", "salt_pepper", "fog", "rain")

# family -> {param: (default, kind)}; kind "range" params accept a scalar or [lo, hi]
SCHEMAS: dict[str, dict[str, tuple[Any, str]]] = {
    "brightness": {"beta": (None, "range")},
    "contrast": {"gamma": (None, "range")},
    "shadow": {"factor": (None, "range")},
    "rotation": {"angle": (None, "range")},
    "gaussian": {"sigma": (None, "scalar")},
    "uniform": {"half_width": (None, "range")},
    "salt_pepper": {"p": (None, "range")},
    "fog": {"t": (None, "range")},
    "rain": {
        "count": (None, "range"),
        "delta": (None, "range"),
        "length": ((2.0, 6.0), "range"),
        "angle": ((60.0, 120.0), "range"),
    },
}

_NOISE_TAG = 0x6E6F697365  # separates the pixel-noise stream from the scalar stream


@dataclass(frozen=True)
class CorruptionSpec:
    family: str
    params: dict[str, Any]
    geometry: tuple[int, int, int]
    master_seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown corruption family {self.family!r}")
        object.__setattr__(self, "params", normalize_params(self.family, self.params))
        object.__setattr__(self, "geometry", tuple(int(g) for g in self.geometry))
        if len(self.geometry) != 3 or min(self.geometry) < 1:
            raise ConfigError(f"invalid geometry {self.geometry}")


@dataclass(frozen=True)
class ParamDraw:
    family: str
    values: dict[str, Any]
    noise_seed: int = 0
    extra: tuple = ()  # rain segments (row, col, length, angle)


def _as_range(name: str, v: Any) -> tuple[float, float]:
    if isinstance(v, (int, float)):
        lo = hi = float(v)
    else:
        try:
            lo, hi = (float(a) for a in v)
        except (TypeError, ValueError):
            raise ConfigError(f"parameter {name!r} must be a number or [lo, hi]") from None
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ConfigError(f"parameter {name!r}: invalid range [{lo}, {hi}]")
    return lo, hi


def normalize_params(family: str, params: dict[str, Any]) -> dict[str, Any]:
    """Validate ``params`` against the family schema and fill defaults."""
    schema = SCHEMAS[family]
    unknown = set(params) - set(schema)
    if unknown:
        raise ConfigError(f"{family}: unknown parameters {sorted(unknown)}")
    out: dict[str, Any] = {}
    for name, (default, kind) in schema.items():
        v = params.get(name, default)
        if v is None:
            raise ConfigError(f"{family}: missing parameter {name!r}")
        if kind == "scalar":
            v = float(v)
            if not math.isfinite(v):
                raise ConfigError(f"{family}: {name} must be finite")
            out[name] = v
        else:
            out[name] = _as_range(name, v)

    def need(cond: bool, msg: str) -> None:
        if not cond:
            raise ConfigError(f"{family}: {msg}")

    if family == "contrast":
        need(out["gamma"][0] >= 0, "gamma must be >= 0")
    elif family == "shadow":
        need(0 < out["factor"][0] and out["factor"][1] <= 1, "factor must lie in (0, 1]")
    elif family == "rotation":
        need(-180 <= out["angle"][0] and out["angle"][1] <= 180, "angle must lie within [-180, 180] degrees")
    elif family == "gaussian":
        need(out["sigma"] >= 0, "sigma must be >= 0")
    elif family == "uniform":
        need(out["half_width"][0] >= 0, "half_width must be >= 0")
    elif family == "salt_pepper":
        need(0 <= out["p"][0] and out["p"][1] <= 1, "p must lie in [0, 1]")
    elif family == "fog":
        need(0 <= out["t"][0] and out["t"][1] <= 1, "t must lie in [0, 1]")
    elif family == "rain":
        lo, hi = out["count"]
        need(lo >= 0 and lo == int(lo) and hi == int(hi), "count must be nonnegative integers")
        out["count"] = (int(lo), int(hi))
        need(out["delta"][0] >= 0, "delta must be >= 0")
        need(out["length"][0] >= 0, "length must be >= 0")
    return out


def sample_params(spec: CorruptionSpec, draw_seed: int) -> ParamDraw:
    """Draw the corruption parameters for one Monte Carlo sample."""
    g = _rng.SplitMix64(draw_seed)
    p = spec.params
    noise_seed = _rng.sm64(draw_seed ^ _NOISE_TAG)
    fam = spec.family
    if fam == "brightness":
        return ParamDraw(fam, {"beta": g.uniform(*p["beta"])})
    if fam == "contrast":
        return ParamDraw(fam, {"gamma": g.uniform(*p["gamma"])})
    if fam == "rotation":
        return ParamDraw(fam, {"angle": g.uniform(*p["angle"])})
    if fam == "fog":
        return ParamDraw(fam, {"t": g.uniform(*p["t"])})
    if fam == "gaussian":
        return ParamDraw(fam, {"sigma": p["sigma"]}, noise_seed)
    if fam == "uniform":
        return ParamDraw(fam, {"half_width": g.uniform(*p["half_width"])}, noise_seed)
    if fam == "salt_pepper":
        return ParamDraw(fam, {"p": g.uniform(*p["p"])}, noise_seed)
    h, w, _ = spec.geometry
    if fam == "shadow":
        return ParamDraw(
            fam,
            {
                "factor": g.uniform(*p["factor"]),
                "theta": g.uniform(0.0, 2.0 * math.pi),
                "row": g.uniform(0.0, h - 1.0),
                "col": g.uniform(0.0, w - 1.0),
            },
        )
    if fam == "rain":
        k = g.integer(*p["count"])
        delta = g.uniform(*p["delta"])
        segments = tuple(
            (g.uniform(0.0, h - 1.0), g.uniform(0.0, w - 1.0), g.uniform(*p["length"]), g.uniform(*p["angle"]))
            for _ in range(k)
        )
        return ParamDraw(fam, {"count": k, "delta": delta}, extra=segments)
    raise ConfigError(f"unknown corruption family {fam!r}")  # pragma: no cover


def _planes(spec: CorruptionSpec, x: np.ndarray) -> np.ndarray:
    h, w, c = spec.geometry
    return x.reshape(c, h, w)


def _rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    c, h, w = img.shape
    phi = math.radians(degrees)
    cos, sin = math.cos(phi), math.sin(phi)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = rows - cy, cols - cx
    # inverse map: output pixel reads from the input rotated by -phi
    src_x = np.clip(cos * dx + sin * dy + cx, 0.0, w - 1.0)
    src_y = np.clip(cos * dy - sin * dx + cy, 0.0, h - 1.0)
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx, fy = src_x - x0, src_y - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = (1.0 - fx) * img[:, y0, x0] + fx * img[:, y0, x1]
    bottom = (1.0 - fx) * img[:, y1, x0] + fx * img[:, y1, x1]
    return (1.0 - fy) * top + fy * bottom


def _rain_mask(h: int, w: int, segments: Sequence[tuple[float, float, float, float]]) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    for r0, c0, length, angle in segments:
        a = math.radians(angle)
        t = np.arange(0.0, length + 1e-9, 0.5)
        rr = np.rint(r0 + t * math.sin(a)).astype(np.int64)
        cc = np.rint(c0 + t * math.cos(a)).astype(np.int64)
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        mask[rr[ok], cc[ok]] = True
    return mask


def _check_image(spec: CorruptionSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    h, w, c = spec.geometry
    if x.shape[-1] != h * w * c:
        raise DataError(f"image length {x.shape[-1]} does not match geometry {spec.geometry}")
    if np.any(x < 0) or np.any(x > 1) or not np.all(np.isfinite(x)):
        raise DataError("image pixels must lie in [0, 1]")
    return x


def apply_batch(spec: CorruptionSpec, draws: Sequence[ParamDraw], x: np.ndarray) -> np.ndarray:
    """Apply each draw to the same image; returns (len(draws), n_x).

    Row ``n`` equals ``apply(spec, draws[n], x)`` bit for bit: the noise
    streams are generated per element and every other step is elementwise.
    """
    x = _check_image(spec, x)
    n_x = x.shape[0]
    fam = spec.family
    if fam == "gaussian":
        sig = np.array([d.values["sigma"] for d in draws])[:, None]
        seeds = np.array([d.noise_seed for d in draws], dtype=np.uint64)
        out = x + sig * _rng.normal_stream(seeds, n_x)
    elif fam == "uniform":
        hw = np.array([d.values["half_width"] for d in draws])[:, None]
        seeds = np.array([d.noise_seed for d in draws], dtype=np.uint64)
        out = x + hw * (2.0 * _rng.uniform_stream(seeds, n_x) - 1.0)
    elif fam == "salt_pepper":
        p = np.array([d.values["p"] for d in draws])[:, None]
        seeds = np.array([d.noise_seed for d in draws], dtype=np.uint64)
        u = _rng.uniform_stream(seeds, 2 * n_x)
        hit = u[:, :n_x] < p
        salt = (u[:, n_x:] < 0.5).astype(np.float64)
        out = np.where(hit, salt, x)
    elif fam == "brightness":
        out = x + np.array([d.values["beta"] for d in draws])[:, None]
    elif fam == "contrast":
        g = np.array([d.values["gamma"] for d in draws])[:, None]
        # x + (g-1)(x-0.5) rather than (x-0.5)g+0.5 so that g=1 is an exact identity
        out = x + (g - 1.0) * (x - 0.5)
    elif fam == "fog":
        t = np.array([d.values["t"] for d in draws])[:, None]
        out = (1.0 - t) * x + t
    else:
        out = np.stack([_apply_geometric(spec, d, x) for d in draws]) if draws else np.empty((0, n_x))
    return np.clip(out, 0.0, 1.0)


def _apply_geometric(spec: CorruptionSpec, d: ParamDraw, x: np.ndarray) -> np.ndarray:
    img = _planes(spec, x)
    _, h, w = img.shape
    if spec.family == "rotation":
        return _rotate(img, d.values["angle"]).reshape(-1)
    if spec.family == "shadow":
        v = d.values
        rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        side = (cols - v["col"]) * math.cos(v["theta"]) + (rows - v["row"]) * math.sin(v["theta"]) > 0
        return np.where(side[None, :, :], img * v["factor"], img).reshape(-1)
    if spec.family == "rain":
        mask = _rain_mask(h, w, d.extra)
        return (img + d.values["delta"] * mask[None, :, :]).reshape(-1)
    raise ConfigError(f"unknown corruption family {spec.family!r}")  # pragma: no cover


def apply(spec: CorruptionSpec, draw: ParamDraw, x: np.ndarray) -> np.ndarray:
    return apply_batch(spec, [draw], x)[0]
