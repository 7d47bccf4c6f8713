import json

import pytest

from kritensor.config import load_config, parse_config
from kritensor.errors import ConfigError

BASE = {
    "dataset": "d.krid",
    "master_seed": 3,
    "n_draws": 4,
    "distributions": [
        {"name": "b", "family": "brightness", "params": {"beta": [-0.2, 0.2]}},
        {"name": "f", "family": "fgsm", "params": {"epsilon": 0.03}},
    ],
    "losses": [{"name": "cc", "kind": "class_change"}],
    "kris": [{"name": "sensor", "loss": "cc", "families": ["brightness"]}, {"name": "adv", "loss": "cc", "kinds": ["adversarial"]}],
    "weights": {"sensor": 0.9, "adv": 0.1},
}


def with_(**changes):
    obj = json.loads(json.dumps(BASE))
    obj.update(changes)
    return obj


def test_parse_base():
    cfg = parse_config(BASE)
    assert [d.kind for d in cfg.distributions] == ["corruption", "adversarial"]
    assert cfg.distributions[0].seed == 3 and cfg.n_draws == 4
    assert cfg.datasets[0].path == "d.krid"
    assert cfg.digest == parse_config(with_()).digest != parse_config(with_(master_seed=4)).digest


@pytest.mark.parametrize(
    "obj",
    [
        with_(extra=1),
        with_(distributions=[{"name": "x", "family": "blur"}]),
        with_(distributions=[{"name": "x", "family": "fog", "params": {"t": 0.1}, "kind": "adversarial"}]),
        with_(distributions=[{"name": "x", "family": "fog", "params": {"t": 0.1}, "colour": 1}]),
        with_(losses=[]),
        with_(n_draws=0),
        with_(weights={"sensor": 0.5, "adv": 0.4}),
        with_(weights={"sensor": 1.0}),
        with_(kris=[{"name": "a", "loss": "cc", "family": ["fog"]}]),
        with_(datasets=["d.krid"]),
        with_(master_seed="7"),
    ],
)
def test_rejects_invalid(obj):
    with pytest.raises(ConfigError):
        parse_config(obj)


def test_per_distribution_draws():
    obj = with_()
    del obj["n_draws"]
    for d in obj["distributions"]:
        d["n_draws"] = 6
    assert parse_config(obj).n_draws == 6


def test_cost_matrix_csv_relative_to_config(tmp_path):
    (tmp_path / "c.csv").write_text("0,2\n1,0\n")
    obj = with_(losses=[{"name": "sev", "kind": "severity", "cost_matrix_csv": "c.csv"}], kris=[], weights=None)
    del obj["weights"]
    (tmp_path / "s.json").write_text(json.dumps(obj))
    cfg = load_config(tmp_path / "s.json")
    assert cfg.losses[0].cost_matrix.tolist() == [[0, 2], [1, 0]]


def test_load_config_errors(tmp_path):
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
