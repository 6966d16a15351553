import json
from pathlib import Path

import numpy as np
import pytest

from degenerate_control.config import ConfigError, RunConfig, default_config


def test_default_round_trip():
    cfg = default_config()
    again = RunConfig.from_json(cfg.to_json())
    assert again == cfg
    assert cfg.grid.n == 199 and cfg.grid.m == 400 and cfg.grid.T == 0.5
    assert cfg.omega == [0.3, 0.7] and cfg.delta == 0.15


def test_partial_document_fills_defaults():
    cfg = RunConfig.from_dict({"grid": {"n": 31}, "hum": {"eps": 1e-3}})
    assert cfg.grid.n == 31 and cfg.grid.m == 400
    assert cfg.hum.eps == 1e-3 and cfg.hum.tol == 1e-8


@pytest.mark.parametrize("doc,path", [
    ({"colour": 1}, "colour"),
    ({"grid": {"k": 3}}, "grid.k"),
    ({"grid": {"n": 2}}, "grid.n"),
    ({"grid": {"T": -1}}, "grid.T"),
    ({"omega": [0.7, 0.3]}, "omega"),
    ({"delta": 0}, "delta"),
    ({"profile": {"kind": "power_law", "A": 0.6, "B": 0.4, "alpha": 2, "beta": 2}}, "profile"),
    ({"potential": {"kind": "cubic"}}, "potential"),
    ({"initial": {"kind": "gauss"}}, "initial.kind"),
    ({"carleman": {"s_list": []}}, "carleman.s_list"),
    ({"carleman": {"seed": -1}}, "carleman.seed"),
    ({"hum": {"eps_list": [1e-3, 1e-2]}}, "hum.eps_list"),
    ({"hum": {"max_iter": 0}}, "hum.max_iter"),
    ({"schema_version": 2}, "schema_version"),
])
def test_invalid_documents_name_the_field(doc, path):
    with pytest.raises(ConfigError) as err:
        RunConfig.from_dict(doc)
    assert err.value.path == path


def test_malformed_json():
    with pytest.raises(ConfigError):
        RunConfig.from_json("{not json")


def test_load_and_build(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"grid": {"n": 19, "m": 10, "T": 1.0},
                                "initial": {"kind": "sine", "mode": 2},
                                "potential": {"kind": "constant", "value": 0.5}}))
    cfg = RunConfig.load(path)
    grid = cfg.build_grid()
    problem = cfg.build_problem(grid)
    assert np.allclose(problem.initial(grid), np.sin(2 * np.pi * grid.x))
    assert problem.potential.value == 0.5
    params = cfg.carleman_params(s=3.0)
    assert params.s == 3.0 and params.x0 == pytest.approx(0.5) and params.T == 1.0


def test_shipped_configs_load():
    root = Path(__file__).resolve().parent.parent / "configs"
    assert RunConfig.load(root / "default.json") == default_config()
    assert RunConfig.load(root / "violating.json").omega == [0.75, 0.95]
    assert RunConfig.load(root / "heat.json").build_profile().kind == "constant"
