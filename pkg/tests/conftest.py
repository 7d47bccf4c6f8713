import numpy as np
import pytest

from kritensor import models as M

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    _ACCEPTANCE.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


def random_mlp(rng: np.random.Generator, n_in: int, hidden: list[int], n_out: int) -> M.ToyClassifier:
    sizes = [n_in, *hidden, n_out]
    layers = []
    for n, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        act = "none" if n == len(sizes) - 2 else "relu"
        layers.append(M.Layer(rng.normal(size=(b, a)) / np.sqrt(a), rng.normal(size=b) * 0.1, act))
    return M.ToyClassifier(layers)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def central_difference(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    g = np.empty_like(x)
    for n in range(x.size):
        e = np.zeros_like(x)
        e[n] = h
        g[n] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def near_kink(model: M.ToyClassifier, x: np.ndarray, h: float = 1e-4) -> bool:
    """True if a step of size h along any axis can flip a ReLU, making finite differences meaningless."""
    a = x[None, :]
    reach = h
    for layer in model.layers[:-1]:
        z = a @ layer.w.T + layer.b
        reach = reach * np.abs(layer.w).sum(axis=1).max()
        if np.any(np.abs(z) <= reach):
            return True
        a = np.maximum(z, 0.0)
    return False


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12))


def naive_tensor_values(model, dataset, config) -> np.ndarray:
    """Reference population: one input at a time, in (i, j, k, l) order, no batching or threads."""
    from kritensor import attacks as A
    from kritensor import corruptions as C
    from kritensor import losses as L
    from kritensor.rng import derive_seed

    out = np.full((len(config.losses), len(dataset), len(config.distributions), config.n_draws), np.nan, np.float32)
    for i, loss in enumerate(config.losses):
        for j in range(len(dataset)):
            x, y = dataset.images[j], int(dataset.labels[j])
            clean = model.predict_class(x)
            for k, d in enumerate(config.distributions):
                for l in range(config.n_draws):
                    seed = derive_seed(d.seed, k, l, j)
                    if d.kind == "corruption":
                        spec = C.CorruptionSpec(d.family, d.params, dataset.geometry, d.seed)
                        xp = C.apply(spec, C.sample_params(spec, seed), x)
                    else:
                        spec = A.AttackSpec.from_params(d.family, d.params, d.seed)
                        if spec.method == "fgsm":
                            xp = A.fgsm(model, x, y, spec.epsilon)
                        elif spec.method == "pgd":
                            # deterministic attacks do not depend on the draw
                            xp = A.pgd(model, x, y, spec, seed=seed if spec.random_start else derive_seed(d.seed, k, 0, j))
                        else:
                            xp = A.deepfool(model, x, spec).x_adv
                    out[i, j, k, l] = np.float32(L.evaluate(loss, model.predict(xp), clean, y))
    return out
