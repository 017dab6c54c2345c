import json

import pytest

from polyavsr.config import RunConfig
from polyavsr.errors import ConfigurationError


def test_defaults_valid():
    cfg = RunConfig()
    assert cfg.alpha == 0.1 and cfg.beta == 10.0 and cfg.balance


def test_json_round_trip():
    cfg = RunConfig(seed=5, lr=1e-3)
    again = RunConfig(**json.loads(cfg.to_json()))
    assert again == cfg


def test_load_file_then_overrides(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 3, "steps": 100, "lr": 0.5}))
    cfg = RunConfig.load(str(path), {"seed": 7, "steps": None})
    assert cfg.seed == 7        # flag beats file
    assert cfg.steps == 100     # None override means "not given"
    assert cfg.lr == 0.5


def test_load_without_file():
    cfg = RunConfig.load(None, {"beam": 2})
    assert cfg.beam == 2


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"learning_rate": 0.1}))
    with pytest.raises(ConfigurationError, match="learning_rate"):
        RunConfig.load(str(path))


@pytest.mark.parametrize("kw", [
    {"precision": "float16"},
    {"alpha": 1.5},
    {"alpha": -0.1},
    {"beta": -1.0},
    {"lambda_ctc": 2.0},
    {"d": 30, "heads": 4},
    {"n_prompts": -1},
])
def test_validation_rejects(kw):
    with pytest.raises(ConfigurationError):
        RunConfig(**kw)


def test_boundary_values_allowed():
    RunConfig(alpha=0.0)
    RunConfig(alpha=1.0)
    RunConfig(lambda_ctc=0.0)
    RunConfig(lambda_ctc=1.0)
    RunConfig(beta=0.0)
    RunConfig(n_prompts=0)
