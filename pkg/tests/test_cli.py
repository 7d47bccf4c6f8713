import json
import struct

import numpy as np
import pytest

from kritensor import models as M
from kritensor import remote as R
from kritensor import tensor as T
from kritensor.cli import main
from kritensor.data import load_krid


@pytest.fixture
def workspace(tmp_path):
    assert main(["gen-data", "--n", "40", "--classes", "2", "--geometry", "3x3x1", "--seed", "1", "--out", str(tmp_path / "d.krid")]) == 0
    assert main(["train-toy", "--data", str(tmp_path / "d.krid"), "--hidden", "6", "--epochs", "3", "--seed", "2", "--out", str(tmp_path / "m.json")]) == 0
    return tmp_path


def write_config(path, distributions, kris=None, weights=None, n_draws=5):
    obj = {
        "dataset": "d.krid",
        "master_seed": 4,
        "n_draws": n_draws,
        "distributions": distributions,
        "losses": [{"name": "cc", "kind": "class_change"}],
        "kris": kris or [{"name": "all", "loss": "cc"}],
    }
    if weights:
        obj["weights"] = weights
    path.write_text(json.dumps(obj))
    return str(path)


def test_gen_data_is_deterministic_and_balanced(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--n", "100", "--classes", "2", "--seed", "9", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    counts = np.bincount(load_krid(tmp_path / "a").labels)
    assert abs(int(counts[0]) - int(counts[1])) <= 1


def test_separable_blobs_train_to_high_accuracy(tmp_path):
    main(["gen-data", "--n", "200", "--classes", "2", "--geometry", "4x4x1", "--separation", "10", "--seed", "5", "--out", str(tmp_path / "d")])
    main(["train-toy", "--data", str(tmp_path / "d"), "--hidden", "--epochs", "20", "--seed", "1", "--out", str(tmp_path / "m")])
    ds = load_krid(tmp_path / "d")
    assert M.accuracy(M.load_model(tmp_path / "m"), ds.images, ds.labels) >= 0.99


def test_zero_perturbation_eval_then_kri(workspace, capsys):
    cfg = write_config(workspace / "s.json", [{"name": "id", "family": "gaussian", "params": {"sigma": 0}}])
    assert main(["eval", "--config", cfg, "--model", str(workspace / "m.json"), "--out", str(workspace / "t.krit")]) == 0
    assert main(["eval", "--config", cfg, "--model", str(workspace / "m.json"), "--workers", "3", "--out", str(workspace / "t2.krit")]) == 0
    assert (workspace / "t.krit").read_bytes() == (workspace / "t2.krit").read_bytes()
    out = workspace / "r.json"
    assert main(["kri", "--config", cfg, "--tensor", str(workspace / "t.krit"), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["final_risk"] == 0.0
    assert report["provenance"]["model_id"].startswith("sha256:")


def test_kri_multiple_formats(workspace):
    cfg = write_config(
        workspace / "s.json",
        [
            {"name": "noise", "family": "gaussian", "params": {"sigma": 0.3}},
            {"name": "fgsm", "family": "fgsm", "params": {"epsilon": 0.2}},
        ],
        kris=[{"name": "noise", "loss": "cc", "families": ["gaussian"]}, {"name": "adv", "loss": "cc", "kinds": ["adversarial"]}],
        weights={"noise": 0.999, "adv": 0.001},
    )
    main(["eval", "--config", cfg, "--model", str(workspace / "m.json"), "--out", str(workspace / "t.krit")])
    rc = main(["kri", "--config", cfg, "--tensor", str(workspace / "t.krit"), "--format", "json", "csv", "plotdata", "--out", str(workspace / "rep")])
    assert rc == 0
    csv = (workspace / "rep.csv").read_text().splitlines()
    assert len(csv) == 4
    assert (workspace / "rep.tsv").read_text().startswith("group\tlabel\tvalue\n")
    report = json.loads((workspace / "rep.json").read_text())
    kris = {k["name"]: k["value"] for k in report["kris"]}
    assert report["final_risk"] == pytest.approx(0.999 * kris["noise"] + 0.001 * kris["adv"], rel=1e-15)


def test_flags_override_config(workspace):
    cfg = write_config(workspace / "s.json", [{"name": "n", "family": "gaussian", "params": {"sigma": 0.2}}])
    main(["eval", "--config", cfg, "--model", str(workspace / "m.json"), "--n-draws", "2", "--seed", "8", "--out", str(workspace / "t.krit")])
    t = T.load(workspace / "t.krit")
    assert t.dims[3] == 2 and t.index.distributions[0].seed == 8


def test_loopback_eval_matches_file_eval(workspace):
    cfg = write_config(
        workspace / "s.json",
        [
            {"name": "n", "family": "gaussian", "params": {"sigma": 0.2}},
            {"name": "p", "family": "pgd", "params": {"epsilon": 0.1, "steps": 3}},
        ],
        n_draws=3,
    )
    server, url = R.start_background(M.load_model(workspace / "m.json"))
    try:
        assert main(["eval", "--config", cfg, "--model-url", url, "--workers", "2", "--out", str(workspace / "remote.krit")]) == 0
    finally:
        server.shutdown()
        server.server_close()
    main(["eval", "--config", cfg, "--model", str(workspace / "m.json"), "--out", str(workspace / "local.krit")])
    a, b = T.load(workspace / "remote.krit"), T.load(workspace / "local.krit")
    assert np.max(np.abs(a.values - b.values)) <= 1e-6


def test_attack_command(workspace, capsys):
    for method in ("fgsm", "pgd", "deepfool"):
        rc = main(["attack", "--model", str(workspace / "m.json"), "--data", str(workspace / "d.krid"), "--method", method, "--epsilon", "0.1"])
        assert rc == 0
    out = capsys.readouterr().out
    assert "||r||_2" in out and "deepfool iterations" in out


def test_exit_codes(workspace, capsys):
    bad_cfg = workspace / "bad.json"
    bad_cfg.write_text('{"distributions": [], "losses": []}')
    assert main(["eval", "--config", str(bad_cfg), "--model", str(workspace / "m.json"), "--out", str(workspace / "x")]) == 2
    (workspace / "junk.krit").write_bytes(b"JUNK" + bytes(40))
    cfg = write_config(workspace / "s.json", [{"name": "n", "family": "gaussian", "params": {"sigma": 0.2}}])
    assert main(["kri", "--config", cfg, "--tensor", str(workspace / "junk.krit"), "--out", str(workspace / "r")]) == 3
    assert main(["kri", "--config", cfg, "--tensor", str(workspace / "missing.krit"), "--out", str(workspace / "r")]) == 3
    (workspace / "bad.bin").write_bytes(bytes(100))
    assert main(["import-cifar", str(workspace / "bad.bin"), "--out", str(workspace / "c.krid")]) == 3
    (workspace / "m2.json").write_text('{"type": "mlp", "layers": [{"w": [[1]], "b": [0], "activation": "relu"}]}')
    assert main(["attack", "--model", str(workspace / "m2.json"), "--data", str(workspace / "d.krid")]) == 3
    assert main(["train-toy", "--data", str(workspace / "d.krid"), "--augment", "blur:1", "--out", str(workspace / "m3")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["eval"])
    assert exc.value.code == 2


def test_import_cifar_command(tmp_path):
    rec = bytes([3]) + bytes(range(256)) * 12 + bytes([7]) + bytes([255]) * 3072
    (tmp_path / "b.bin").write_bytes(rec)
    assert main(["import-cifar", str(tmp_path / "b.bin"), "--out", str(tmp_path / "c.krid")]) == 0
    ds = load_krid(tmp_path / "c.krid")
    assert ds.labels.tolist() == [3, 7] and np.all(ds.images[1] == 1.0)
    assert struct.unpack_from("<4sH4I", (tmp_path / "c.krid").read_bytes()) == (b"KRID", 1, 2, 32, 32, 3)
