"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data/model error,
4 runtime/numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import attacks as A
from . import data as D
from . import engine, kri
from . import models as M
from . import tensor as T
from .config import ScenarioConfig, parse_config
from .errors import ConfigError, DataError, KRIError
from .remote import RemoteClassifier, serve_model

log = logging.getLogger("kritensor")


def _geometry(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"geometry must look like 8x8x1, got {text!r}") from None
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"geometry must be HxWxC with positive sizes, got {text!r}")
    return parts


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _load_config(args) -> ScenarioConfig:
    raw = _read_json(args.config)
    # flags mirror config keys and win over the file
    if getattr(args, "seed", None) is not None:
        raw["master_seed"] = args.seed
    if getattr(args, "n_draws", None) is not None:
        raw["n_draws"] = args.n_draws
        for d in raw.get("distributions", []):
            if isinstance(d, dict):
                d.pop("n_draws", None)
    if getattr(args, "data", None):
        raw.pop("datasets", None)
        raw["dataset"] = str(Path(args.data).resolve())
    return parse_config(raw, base_dir=Path(args.config).parent)


def _load_dataset(config: ScenarioConfig, base_dir: Path) -> D.LabeledDataset:
    if not config.datasets:
        raise ConfigError("no dataset given (config 'dataset' or --data)")
    parts = []
    for ref in config.datasets:
        path = Path(ref.path)
        if not path.is_absolute():
            path = base_dir / path
        ds = D.load_krid(path)
        if ref.samples is not None:
            ds = ds.subset(ref.samples)
        if ref.limit is not None:
            ds = ds.head(ref.limit)
        if ref.name:
            ds = D.LabeledDataset(ds.images, ds.labels, ds.geometry, [f"{ref.name}/{s}" for s in ds.sample_ids])
        parts.append(ds)
    if len({p.geometry for p in parts}) != 1:
        raise DataError("datasets in one scenario must share a geometry")
    if len(parts) == 1:
        return parts[0]
    return D.LabeledDataset(
        np.concatenate([p.images for p in parts]),
        np.concatenate([p.labels for p in parts]),
        parts[0].geometry,
        [s for p in parts for s in p.sample_ids],
    )


def _model(args):
    if getattr(args, "model_url", None):
        return RemoteClassifier(args.model_url), args.model_url
    if not getattr(args, "model", None):
        raise ConfigError("give --model or --model-url")
    return M.load_model(args.model), "sha256:" + _sha256(args.model)


def cmd_gen_data(args) -> None:
    if args.kind == "blobs":
        ds = D.make_blobs(args.n, args.classes, args.geometry, args.seed, sigma=args.sigma, separation=args.separation)
    else:
        ds = D.make_rings(args.n, args.classes, args.geometry, args.seed, noise=args.sigma)
    D.save_krid(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out}")


def cmd_import_cifar(args) -> None:
    ds = D.import_cifar(args.files)
    D.save_krid(ds, args.out)
    print(f"imported {len(ds)} records to {args.out}")


def cmd_train_toy(args) -> None:
    ds = D.load_krid(args.data)
    try:
        aug = M.Augmentation.parse(args.augment)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg = M.TrainConfig(
        hidden=tuple(args.hidden),
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        augmentation=aug,
    )
    model = M.train_toy(ds, cfg, args.seed, n_classes=args.classes)
    M.save_model(model, args.out)
    print(f"train accuracy {M.accuracy(model, ds.images, ds.labels):.4f}; wrote {args.out}")


def cmd_eval(args) -> None:
    config = _load_config(args)
    dataset = _load_dataset(config, Path(args.config).parent)
    model, model_id = _model(args)
    attrs = {"model_id": model_id, "config_sha256": config.digest}
    t = engine.build_tensor(model, dataset, config, workers=args.workers, attrs=attrs)
    T.save(t, args.out)
    print(f"wrote tensor {t.dims} to {args.out}; rho_hat={engine.rho_hat(t):.6g}")


def cmd_kri(args) -> None:
    config = _load_config(args)
    tensors = [T.load(p) for p in args.tensor]
    model_ids = sorted({t.index.attrs.get("model_id", "") for t in tensors} - {""})
    provenance = {
        "tensor_sha256": [_sha256(p) for p in args.tensor],
        "config_sha256": config.digest,
        "model_id": args.model_id or (model_ids[0] if len(model_ids) == 1 else ",".join(model_ids)),
        "created": args.timestamp,
    }
    report = kri.build_report(tensors, config.kris, config.weights, provenance)
    out = Path(args.out)
    for fmt in args.format:
        _, suffix = kri._RENDERERS[fmt]
        path = kri.emit_report(report, fmt, out.with_suffix(suffix) if len(args.format) > 1 else out)
        print(f"wrote {fmt} report to {path}")
    for name, value in report.kris.items():
        print(f"  {name:<24} {value:.6f}  (weight {report.weights[name]:.4g})")
    print(f"  {'final risk':<24} {report.final:.6f}")


def cmd_attack(args) -> None:
    model = M.load_model(args.model)
    ds = D.load_krid(args.data)
    if not 0 <= args.index < len(ds):
        raise DataError(f"sample index {args.index} out of range (n={len(ds)})")
    x, y = ds.images[args.index], int(ds.labels[args.index])
    clean = model.predict_class(x)
    if args.method == "fgsm":
        x_adv = A.fgsm(model, x, y, args.epsilon)
    elif args.method == "pgd":
        spec = A.AttackSpec("pgd", epsilon=args.epsilon, alpha=args.alpha, steps=args.steps,
                            random_start=args.random_start, master_seed=args.seed)
        x_adv = A.pgd(model, x, y, spec, seed=args.seed)
    else:
        res = A.deepfool(model, x, A.AttackSpec("deepfool", max_iter=args.max_iter, overshoot=args.overshoot))
        x_adv = res.x_adv
        print(f"deepfool iterations: {res.iterations} converged: {res.converged}")
    r = x_adv - x
    adv = model.predict_class(x_adv)
    print(f"sample {args.index}: label {y}, clean class {clean}, adversarial class {adv}, flipped {adv != clean}")
    print(f"||r||_2 = {np.linalg.norm(r):.6g}  ||r||_inf = {np.abs(r).max():.6g}")
    if args.method == "deepfool":
        try:
            print(f"min perturbation estimate (L2): {A.estimate_min_perturbation(model, x):.6g}")
        except KRIError as exc:
            print(f"min perturbation estimate unavailable: {exc}")


def cmd_serve_model(args) -> None:
    model = M.load_model(args.model)
    server = serve_model(model, args.host, args.port, gradients=not args.no_gradient)
    host, port = server.server_address[:2]
    print(f"serving {args.model} on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kritensor", description="Scenario-based risk tensors and KRIs for classifiers")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic KRID dataset")
    g.add_argument("--kind", choices=("blobs", "rings"), default="blobs")
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--classes", type=int, default=2)
    g.add_argument("--geometry", type=_geometry, default=(4, 4, 1), help="HxWxC")
    g.add_argument("--sigma", type=float, default=0.05, help="cluster spread (blobs) or shell noise (rings)")
    g.add_argument("--separation", type=float, default=10.0, help="center distance in units of sigma (blobs)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    c = sub.add_parser("import-cifar", help="convert CIFAR-10 binary batches to KRID")
    c.add_argument("files", nargs="+")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_import_cifar)

    t = sub.add_parser("train-toy", help="train a toy MLP")
    t.add_argument("--data", required=True)
    t.add_argument("--hidden", type=int, nargs="*", default=[32])
    t.add_argument("--classes", type=int, default=None)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--augment", default="none", help="none | gaussian:SIGMA | fgsm:EPS")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_toy)

    e = sub.add_parser("eval", help="populate a risk tensor from a scenario config")
    e.add_argument("--config", required=True)
    m = e.add_mutually_exclusive_group(required=True)
    m.add_argument("--model")
    m.add_argument("--model-url")
    e.add_argument("--data", help="dataset file (overrides the config)")
    e.add_argument("--seed", type=int, help="master seed (overrides the config)")
    e.add_argument("--n-draws", type=int, help="draws per distribution (overrides the config)")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    k = sub.add_parser("kri", help="compute KRIs and the final risk from tensors")
    k.add_argument("--config", required=True)
    k.add_argument("--tensor", required=True, nargs="+")
    k.add_argument("--format", nargs="+", choices=("json", "csv", "plotdata"), default=["json"])
    k.add_argument("--model-id", default="")
    k.add_argument("--timestamp", default=None, help="provenance timestamp recorded in the report")
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_kri)

    a = sub.add_parser("attack", help="attack one sample and print norms and class flip")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--index", type=int, default=0)
    a.add_argument("--method", choices=A.METHODS, default="fgsm")
    a.add_argument("--epsilon", type=float, default=0.03)
    a.add_argument("--alpha", type=float, default=None)
    a.add_argument("--steps", type=int, default=10)
    a.add_argument("--random-start", action="store_true")
    a.add_argument("--max-iter", type=int, default=50)
    a.add_argument("--overshoot", type=float, default=0.02)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_attack)

    s = sub.add_parser("serve-model", help="serve a model file over HTTP")
    s.add_argument("--model", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8080)
    s.add_argument("--no-gradient", action="store_true", help="answer /v1/gradient with 501 (black-box)")
    s.set_defaults(func=cmd_serve_model)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except KRIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
