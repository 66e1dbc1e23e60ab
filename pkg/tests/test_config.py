import json
from unittest.mock import patch

import pytest

from src.config import (
    PRESETS,
    ExperimentConfig,
    Settings,
    load_experiment_config,
    preset_config,
)
from src.errors import ConfigError
from src.graphs import GraphSpec


@pytest.fixture
def spec():
    return {"family": "erdos-renyi", "n": 6, "prob": 0.5, "count": 2, "seed": 3}


def test_settings_defaults():
    with patch.dict("os.environ", {}, clear=True):
        current = Settings(_env_file=None)
    assert current.LOG_LEVEL == "INFO"
    assert current.JOBS == 1
    assert current.EXECUTOR == "process"


def test_settings_empty_boolean_is_false():
    with patch.dict("os.environ", {"LOG_JSON": "", "JOBS": "4"}, clear=True):
        current = Settings(_env_file=None)
    assert current.LOG_JSON is False
    assert current.JOBS == 4


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate(name):
    config = preset_config(name)
    assert config.name == name


def test_paper_preset_has_thirty_graphs():
    config = preset_config("paper")
    assert sum(spec.count for spec in config.graphs) == 30
    assert config.p_target == 10
    assert [rule.label for rule in config.k_rules][:5] == ["1", "2", "3", "4", "5"]


def test_full_aliases_paper():
    paper, full = preset_config("paper"), preset_config("full")
    assert full.graphs == paper.graphs
    assert [rule.label for rule in full.k_rules] == [rule.label for rule in paper.k_rules]
    assert full.depths() == paper.depths()
    assert preset_config("full-tqa").initializers == preset_config("paper-tqa").initializers


def test_desk_preset_has_ten_graphs_of_ten_vertices():
    config = preset_config("desk")
    assert sum(spec.count for spec in config.graphs) == 10
    assert {spec.n for spec in config.graphs} == {10}
    assert config.depths() == [3, 4, 5, 6, 7, 8]


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        preset_config("galaxy")


def test_bilinear_requires_progressive(spec):
    with pytest.raises(ValueError, match="bilinear initialization requires progressive"):
        ExperimentConfig(graphs=[spec], mode="direct", p_start=1, initializers=["bilinear"])


def test_progressive_rejects_tqa(spec):
    with pytest.raises(ValueError, match="progressive mode needs bilinear"):
        ExperimentConfig(graphs=[spec], initializers=["tqa"])


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"p_start": 5, "p_target": 4}, "below p_start"),
        ({"optimizers": ["cobyla"]}, "unknown optimizer"),
        ({"k": ["zero"]}, "k must be"),
        ({"init_seeds": [1, 1]}, "distinct"),
        ({"p_start": 2}, "p_start >= 3"),
    ],
)
def test_invalid_combinations(spec, overrides, message):
    with pytest.raises(ValueError, match=message):
        ExperimentConfig(graphs=[spec], **overrides)


def test_needs_graphs():
    with pytest.raises(ValueError, match="no graphs"):
        ExperimentConfig()


def test_repeated_graph_specs(spec):
    with pytest.raises(ValueError, match="repeat"):
        ExperimentConfig(graphs=[spec, spec])


def test_k_accepts_integers(spec):
    config = ExperimentConfig(graphs=[spec], k=[1, 2, "half_p"])
    assert config.k == ["1", "2", "half_p"]
    assert config.k_rules[2].resolve(8) == 4


def test_load_json(tmp_path, spec):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps({"name": "small", "graphs": [spec], "p_target": 4}))
    config = load_experiment_config(path, seed=9)
    assert config.name == "small"
    assert config.seed == 9
    assert config.graphs == [GraphSpec(**spec)]


def test_load_toml(tmp_path):
    path = tmp_path / "experiment.toml"
    path.write_text(
        'name = "toml"\nmode = "direct"\np_start = 1\np_target = 2\n'
        'initializers = ["random"]\ninit_seeds = [0, 1]\n\n'
        '[[graphs]]\nfamily = "regular"\nn = 6\ndegree = 3\n'
    )
    config = load_experiment_config(path)
    assert config.mode == "direct"
    assert config.graphs[0].degree == 3


def test_load_reports_bad_file(tmp_path, spec):
    broken = tmp_path / "broken.json"
    broken.write_text('{"graphs": [}')
    with pytest.raises(ConfigError, match=r"broken\.json:1:"):
        load_experiment_config(broken)

    invalid = tmp_path / "invalid.json"
    invalid.write_text(json.dumps({"graphs": [spec], "mode": "direct", "p_start": 1}))
    with pytest.raises(ConfigError, match="invalid.json: .*requires progressive"):
        load_experiment_config(invalid)

    with pytest.raises(ConfigError):
        load_experiment_config(tmp_path / "missing.json")
