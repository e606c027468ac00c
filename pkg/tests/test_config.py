import pytest
from hypothesis import given, settings, strategies as st

from ness_kmc.config import SCHEMA, ConfigError, ExperimentConfig, parse_config
from dataclasses import fields


def test_every_field_documented():
    names = [f.name for f in fields(ExperimentConfig)]
    assert names == list(SCHEMA)
    for name, meta in SCHEMA.items():
        assert meta["doc"]
        if name != "seed":
            assert getattr(ExperimentConfig(seed=0), name) == (tuple(meta["default"]) if isinstance(meta["default"], list) else meta["default"])


def test_seed_required():
    with pytest.raises(ConfigError):
        parse_config("[model]\nN = 2\n")
    assert parse_config("[model]\nseed = 0x10\n").seed == 16


def test_round_trip_default():
    c = parse_config("[model]\nseed = 3\n")
    assert parse_config(c.to_ini()) == c


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.floats(0.5, 2.0), st.floats(0.5, 2.0), st.floats(0.01, 0.24),
       st.one_of(st.none(), st.floats(1.5, 1e6)), st.integers(0, 2**64 - 1),
       st.lists(st.floats(0.1, 1e3), min_size=1, max_size=5).map(lambda v: tuple(sorted(set(v)))),
       st.booleans(), st.sampled_from(["C", "G"]), st.one_of(st.none(), st.integers(1, 64)))
def test_round_trip_random(N, TL, TR, eta, M0, seed, times, chain, target, workers):
    c = ExperimentConfig(N=N, T_L=TL, T_R=TR, eta=eta, M0=M0, seed=seed, mix_times=times,
                         sim_chain=chain, hit_target=target, workers=workers,
                         sim_initial="boundary:1,0.001", h=1 / (3 * (N + 1) * 10.0))
    assert parse_config(c.to_ini()) == c


def test_overrides_and_comments():
    text = "[model]\nseed = 1  # inline\nN = 2\n; full-line\n[hitting]\ncount = 7\n"
    c = parse_config(text, {"seed": 9, "kind": "hitting"})
    assert (c.seed, c.N, c.hit_count, c.kind) == (9, 2, 7, "hitting")


@pytest.mark.parametrize("text", [
    "[model]\nseed = 1\nbogus = 2\n",
    "[model]\nseed = 1\n[hitting]\nt_end = 3\n",
    "[model]\nseed = one\n",
    "[model]\nseed = 1\nK = 1.0\n",
    "[model]\nseed = 1\n[simulate]\nchain = maybe\n",
    "[experiment]\nkind = plot\n[model]\nseed = 1\n",
    "[experiment]\nschema_version = 2\n[model]\nseed = 1\n",
    "[model]\nseed = 1\n[hitting]\ntarget = D\n",
    "no section\n",
])
def test_invalid(text):
    with pytest.raises(ConfigError):
        parse_config(text)
