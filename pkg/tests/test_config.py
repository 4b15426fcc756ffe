import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from shellrg.config import PRESETS, config_from_dict, parse_config, preset, serialize
from shellrg.core import ConfigurationError
from shellrg.runner import expand_grid, sample_times


def test_minimal_config_gets_defaults():
    cfg = parse_config('{"kind": "single-run"}')
    assert cfg.model == "dyadic"
    assert cfg.solver.rtol == 1e-10 and cfg.solver.atol == 1e-12
    assert cfg.grid.J == (1,)
    assert cfg.ic == ("IC1",)


def test_chaos_requires_sabra():
    with pytest.raises(ConfigurationError, match="sabra"):
        parse_config('{"kind": "chaos-growth", "model": "dyadic"}')


def test_fig1_preset_expansion():
    cfg = preset("fig1-dyadic-convergence")
    assert cfg.grid.J == (1, 2, 3)
    assert cfg.grid.N == tuple(range(10, 21))
    assert cfg.ic == ("IC1", "IC2")
    assert cfg.bc == "dyadic-default"
    assert len(expand_grid(cfg)) == 2 * 3 * 11


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_validates_and_expands(name):
    cfg = preset(name)
    assert cfg.name == name
    assert parse_config(name) == cfg
    if cfg.kind != "stationary-check":
        assert expand_grid(cfg)


def test_preset_override():
    cfg = parse_config('{"preset": "fig6-sabra-chaos-desk", "grid": {"N": [6, 7, 8]}}')
    assert cfg.grid.N == (6, 7, 8)
    assert cfg.grid.eps == 1e-9


def test_unknown_key_is_named():
    with pytest.raises(ConfigurationError, match="colour"):
        parse_config('{"kind": "single-run", "colour": "red"}')


def test_nested_unknown_key_is_named():
    with pytest.raises(ConfigurationError, match="solver.*rtoll|rtoll"):
        parse_config('{"kind": "single-run", "solver": {"rtoll": 1e-8}}')


def test_type_error_names_key_and_type():
    with pytest.raises(ConfigurationError) as exc:
        parse_config('{"kind": "single-run", "solver": {"rtol": "tight"}}')
    assert "solver.rtol" in str(exc.value) and "number" in str(exc.value)


@pytest.mark.parametrize("text", ["{", "[1, 2]", '{"preset": "nope"}', '{"kind": "dance"}',
                                  '{"kind": "single-run", "bc": "cosh(t)"}',
                                  '{"kind": "single-run", "t_span": [2.0, 1.0]}',
                                  '{"kind": "eigenmode", "grid": {"N": [10, 12, 14]}}',
                                  '{"kind": "viscous-bridge"}'])
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


def test_sample_times_default_and_dt():
    cfg = parse_config('{"kind": "single-run", "t_span": 2.0}')
    assert sample_times(cfg).size == 101
    cfg = parse_config('{"kind": "single-run", "t_span": 1.0, "dt": 0.25}')
    assert list(sample_times(cfg)) == [0.0, 0.25, 0.5, 0.75, 1.0]


_configs = st.fixed_dictionaries(
    {"kind": st.sampled_from(["single-run", "rg-verify", "rg-convergence"]),
     "model": st.sampled_from(["dyadic", "gledzer", "sabra"])},
    optional={
        "grid": st.fixed_dictionaries({"N": st.lists(st.integers(0, 30), min_size=1, max_size=4),
                                       "J": st.lists(st.integers(1, 3), min_size=1, max_size=3)}),
        "t_span": st.floats(0.01, 10.0),
        "seed": st.integers(0, 2 ** 64 - 1),
        "solver": st.fixed_dictionaries({"rtol": st.floats(1e-14, 1e-3), "method": st.sampled_from(
            ["explicit-adaptive", "stiff-adaptive"])}),
        "shells": st.lists(st.integers(1, 8), min_size=1, max_size=4),
        "ic": st.lists(st.sampled_from(["IC1", "IC2"]) | st.builds(
            lambda v: {"values": v}, st.lists(st.floats(-2, 2), min_size=1, max_size=4)), min_size=1, max_size=3),
    })


@given(_configs)
def test_config_round_trip(data):
    cfg = config_from_dict(data)
    assert parse_config(serialize(cfg)) == cfg
    assert serialize(parse_config(serialize(cfg))) == serialize(cfg)


def test_serialize_is_complete_json():
    data = json.loads(serialize(parse_config('{"kind": "single-run"}')))
    assert {"solver", "grid", "analysis", "seed", "t_span"} <= set(data)
