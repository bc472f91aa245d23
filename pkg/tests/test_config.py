import pytest

from sectorgen.config import ConfigError, RunConfig, from_dict, load_config
from sectorgen.model import Paradigm


def test_defaults():
    cfg = RunConfig()
    assert cfg.threshold == 20 and cfg.train_fraction == 0.9
    assert (cfg.orchestrator.significant, cfg.orchestrator.marginal, cfg.orchestrator.force_days) == (0.75, 0.1, 90)
    # incremental budget stays under a seventh of the full run
    assert cfg.orchestrator.incremental_fraction <= 1 / 7


def test_yaml_and_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("seed: 4\ntrain:\n  T: 700\n  paradigm: PromptTuning\npaths:\n  framework: fw.tsv\n")
    cfg = load_config(path, ["train.eps2=0.05", "threshold=5"])
    assert cfg.seed == 4 and cfg.train.seed == 4
    assert cfg.train.T == 700 and cfg.train.eps2 == 0.05 and cfg.train.paradigm is Paradigm.PROMPT_TUNING
    assert cfg.threshold == 5
    assert cfg.path("framework") == tmp_path / "fw.tsv"
    assert load_config(path).dump() == load_config(path).dump()


@pytest.mark.parametrize("data, overrides", [
    ({"bogus": 1}, []),
    ({"train": {"nope": 1}}, []),
    ({"train": {"t_prime": 99999}}, []),
    ({}, ["train.T"]),
    ({}, ["train_fraction=1.5"]),
    ({"train": 5}, []),
])
def test_errors(data, overrides):
    with pytest.raises(ConfigError):
        from_dict(data, ".", overrides)


def test_missing_or_bad_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")
    (tmp_path / "bad.yaml").write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")
