"""White-box attacks and the two classical robustness metrics.

``rho1`` is the mean minimal L2 perturbation (DeepFool refined by bisection);
``adversarial_risk_rho2`` is the mean loss at the PGD point, a lower bound on
the worst case over the L-infinity ball, hence reported as PGD-rho2.

Attacks need input gradients. A model without them (for example a remote
model whose gradient endpoint answers 501) is refused, never approximated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import rng as _rng
from .errors import BlackBoxModelError, ConfigError, NonConvergenceError

METHODS = ("fgsm", "pgd", "deepfool")

# DeepFool steps exactly onto the linearised boundary; this nudge pushes each
# step a hair past it so a tie cannot stall the iteration.
_STEP_NUDGE = 1e-9
_MIN_STEP = 1e-12  # L2 length added to every step


@dataclass(frozen=True)
class AttackSpec:
    method: str
    epsilon: float = 0.0
    alpha: float | None = None
    steps: int = 10
    random_start: bool = False
    max_iter: int = 50
    overshoot: float = 0.02
    master_seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown attack method {self.method!r}")
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ConfigError("epsilon must be finite and >= 0")
        if self.method == "pgd":
            if self.steps < 1:
                raise ConfigError("pgd needs at least one iteration")
            if self.alpha is None:
                # any positive step works once the budget is tiny; guard against underflow
                a = 2.5 * self.epsilon / self.steps
                object.__setattr__(self, "alpha", a if a > 0 else (self.epsilon or 1.0))
            if not self.alpha > 0:
                raise ConfigError("pgd step alpha must be > 0")
        if self.method == "deepfool":
            if self.max_iter < 1:
                raise ConfigError("deepfool max_iter must be >= 1")
            if self.overshoot < 0:
                raise ConfigError("deepfool overshoot must be >= 0")

    @property
    def deterministic(self) -> bool:
        return not (self.method == "pgd" and self.random_start)

    @classmethod
    def from_params(cls, method: str, params: dict, master_seed: int = 0) -> "AttackSpec":
        allowed = {
            "fgsm": {"epsilon"},
            "pgd": {"epsilon", "alpha", "steps", "random_start"},
            "deepfool": {"max_iter", "overshoot"},
        }.get(method)
        if allowed is None:
            raise ConfigError(f"unknown attack method {method!r}")
        unknown = set(params) - allowed
        if unknown:
            raise ConfigError(f"{method}: unknown parameters {sorted(unknown)}")
        return cls(method=method, master_seed=master_seed, **params)


def _gradient(model, x: np.ndarray, y: int) -> tuple[float, np.ndarray]:
    fn = getattr(model, "loss_and_input_gradient", None)
    if fn is None:
        raise BlackBoxModelError("model does not expose input gradients")
    return fn(x, y)


def _ce(model, x: np.ndarray, y: int) -> float:
    return _gradient(model, x, y)[0]


def fgsm(model, x: np.ndarray, y: int, epsilon: float) -> np.ndarray:
    """``clip(x + eps * sign(grad CE))``; zero gradient components stay put."""
    x = np.asarray(x, dtype=np.float64)
    _, g = _gradient(model, x, y)
    return np.clip(x + epsilon * np.sign(g), 0.0, 1.0)


def pgd(
    model,
    x: np.ndarray,
    y: int,
    spec: AttackSpec,
    seed: int = 0,
    start: np.ndarray | None = None,
    score: Callable[[np.ndarray], tuple] | None = None,
) -> np.ndarray:
    """L-infinity PGD returning the best iterate.

    Candidates are the iterates x_1..x_n, plus ``start`` when a warm start is
    given. ``score`` ranks candidates (higher is better); by default it is the
    cross-entropy at ``y``. With n=1, alpha=eps and no random start the result
    is exactly the FGSM point.
    """
    x = np.asarray(x, dtype=np.float64)
    eps, alpha = spec.epsilon, spec.alpha
    lo, hi = np.maximum(x - eps, 0.0), np.minimum(x + eps, 1.0)
    if score is None:
        score = lambda z: (_ce(model, z, y),)  # noqa: E731
    candidates: list[np.ndarray] = []
    if start is not None:
        cur = np.clip(np.asarray(start, dtype=np.float64), lo, hi)
        candidates.append(cur)
    elif spec.random_start:
        u = _rng.uniform_stream(np.array([seed], dtype=np.uint64), x.size)[0]
        cur = np.clip(x + eps * (2.0 * u - 1.0), 0.0, 1.0)
    else:
        cur = x
    for _ in range(spec.steps):
        _, g = _gradient(model, cur, y)
        cur = np.clip(np.clip(cur + alpha * np.sign(g), x - eps, x + eps), 0.0, 1.0)
        candidates.append(cur)
    best, best_score = candidates[0], score(candidates[0])
    for c in candidates[1:]:
        s = score(c)
        if s > best_score:
            best, best_score = c, s
    return best


@dataclass(frozen=True)
class DeepFoolResult:
    x_adv: np.ndarray
    perturbation: np.ndarray
    iterations: int
    converged: bool
    original_class: int
    final_class: int


def deepfool(model, x: np.ndarray, spec: AttackSpec | None = None, clip: bool = True) -> DeepFoolResult:
    """Iterated linearisation towards the nearest decision boundary (L2).

    With ``clip`` the class check and the output use the point clipped to
    [0, 1]; without it the raw ``x + r`` is used.
    """
    spec = spec or AttackSpec("deepfool")
    if getattr(model, "logit_diff_gradient", None) is None:
        raise BlackBoxModelError("deepfool needs logit gradients")
    x = np.asarray(x, dtype=np.float64)
    logits = model.predict(x)
    c = int(np.argmax(logits))
    n_c = logits.shape[0]
    r_tot = np.zeros_like(x)
    scale = 1.0 + spec.overshoot
    iterations = 0
    current = c
    for _ in range(spec.max_iter):
        f = model.predict(x + r_tot)
        best_dist, best_step = math.inf, None
        for k in range(n_c):
            if k == c:
                continue
            w = model.logit_diff_gradient(x + r_tot, k, c)
            fk = f[k] - f[c]
            wn = float(np.linalg.norm(w))
            if wn == 0.0:
                continue
            dist = abs(fk) / wn
            if dist < best_dist:
                best_dist = dist
                best_step = (abs(fk) * (1.0 + _STEP_NUDGE) + _MIN_STEP * wn) / (wn * wn) * w
        if best_step is None:
            break  # flat in every direction: no boundary reachable
        r_tot = r_tot + best_step
        iterations += 1
        current = int(np.argmax(model.predict(_bound(x + scale * r_tot, clip))))
        if current != c:
            break
    r = scale * r_tot
    x_adv = _bound(x + r, clip)
    return DeepFoolResult(x_adv, r, iterations, current != c, c, current)


def _bound(z: np.ndarray, clip: bool) -> np.ndarray:
    return np.clip(z, 0.0, 1.0) if clip else z


def estimate_min_perturbation(model, x: np.ndarray, spec: AttackSpec | None = None, rel_width: float = 1e-3) -> float:
    """Upper bound on the smallest L2 perturbation that changes the predicted class.

    DeepFool supplies a direction; bisection on its length brackets the first
    class change until ``(hi - lo) <= rel_width * lo``. ``hi`` is returned and
    is verified to flip the class. Perturbations are not clipped to [0, 1].
    """
    spec = spec or AttackSpec("deepfool", overshoot=0.0)
    x = np.asarray(x, dtype=np.float64)
    res = deepfool(model, x, spec, clip=False)
    norm = float(np.linalg.norm(res.perturbation))
    if not res.converged or norm == 0.0:
        raise NonConvergenceError("deepfool found no class change")
    c = res.original_class
    d = res.perturbation / norm

    def flips(t: float) -> bool:
        return model.predict_class(x + t * d) != c

    hi = norm
    for _ in range(60):
        if flips(hi):
            break
        hi *= 2.0
    else:
        raise NonConvergenceError("no class change along the deepfool direction")
    lo = 0.0
    while hi - lo > rel_width * lo or lo == 0.0:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if flips(mid):
            hi = mid
        else:
            lo = mid
        if lo == 0.0 and hi < 1e-300:
            break
    return hi


@dataclass(frozen=True)
class Rho1Result:
    value: float
    n_used: int
    n_failed: int


def rho1(model, images: Sequence[np.ndarray], spec: AttackSpec | None = None) -> Rho1Result:
    """Mean estimated distance to the decision boundary; failures are counted, not averaged."""
    dists, failed = [], 0
    for x in images:
        try:
            dists.append(estimate_min_perturbation(model, x, spec))
        except NonConvergenceError:
            failed += 1
    if not dists:
        raise NonConvergenceError("no sample reached a class change")
    return Rho1Result(float(np.mean(dists)), len(dists), failed)


def adversarial_risk_rho2(
    model,
    images: np.ndarray,
    labels: np.ndarray,
    loss,
    spec: AttackSpec,
    starts: Sequence[np.ndarray] | None = None,
    return_points: bool = False,
):
    """Mean of ``loss`` at the PGD point per sample (PGD-rho2).

    ``loss`` is a :class:`~kritensor.losses.LossSpec`. PGD candidates are
    ranked by that loss first and cross-entropy second. Passing the points of a
    smaller budget as ``starts`` makes the estimate monotone in epsilon.
    """
    from .losses import evaluate

    if spec.method != "pgd":
        raise ConfigError("rho2 is estimated with pgd")
    values, points = [], []
    for n, (x, y) in enumerate(zip(images, labels)):
        x = np.asarray(x, dtype=np.float64)
        y = int(y)
        clean = model.predict_class(x)

        def score(z, y=y, clean=clean):
            return (evaluate(loss, model.predict(z), clean, y), _ce(model, z, y))

        seed = _rng.derive_seed(spec.master_seed, 0, 0, n)
        start = None if starts is None else starts[n]
        z = pgd(model, x, y, spec, seed=seed, start=start, score=score)
        values.append(evaluate(loss, model.predict(z), clean, y))
        points.append(z)
    value = float(np.mean(values))
    return (value, points) if return_points else value


def rho2_curve(model, images, labels, loss, spec: AttackSpec, epsilons: Sequence[float]) -> list[float]:
    """PGD-rho2 over increasing budgets, each run warm-started from the previous points."""
    eps = list(epsilons)
    if eps != sorted(eps):
        raise ConfigError("epsilons must be increasing")
    out, starts = [], None
    for e in eps:
        s = AttackSpec("pgd", epsilon=e, alpha=spec.alpha, steps=spec.steps,
                       random_start=spec.random_start, master_seed=spec.master_seed)
        value, starts = adversarial_risk_rho2(model, images, labels, loss, s, starts=starts, return_points=True)
        out.append(value)
    return out
