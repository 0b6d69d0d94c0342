import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pivotdecode.core import (
    DecodeConfig,
    DecodeTrace,
    StepRecord,
    dumps_config,
    loads_config,
    logit_vector,
    parse_overrides,
    pivot_token_ids,
    validate_config,
)
from pivotdecode.errors import ConfigError, IndexOutOfRange, LengthMismatch, NonFiniteError, RangeError


def test_logit_vector_is_read_only_copy():
    src = [1.0, 2.0, 3.0]
    v = logit_vector(src)
    assert v.dtype == np.float64
    assert not v.flags.writeable
    with pytest.raises(ValueError):
        v[0] = 5.0


def test_logit_vector_does_not_alias_writable_input():
    src = np.array([1.0, 2.0])
    v = logit_vector(src)
    src[0] = 9.0
    assert v[0] == 1.0


@pytest.mark.parametrize("bad", [[], [[1.0, 2.0]]])
def test_logit_vector_shape(bad):
    with pytest.raises(LengthMismatch):
        logit_vector(bad)


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20),
       st.integers(0, 19), st.sampled_from([math.nan, math.inf, -math.inf]))
def test_logit_vector_rejects_any_non_finite(values, pos, bad):
    values = list(values)
    values[pos % len(values)] = bad
    with pytest.raises(NonFiniteError):
        logit_vector(values)


def test_pivot_token_ids_collapses_duplicates():
    assert pivot_token_ids([3, 1, 3], 5) == frozenset({1, 3})
    assert pivot_token_ids([], 5) == frozenset()
    with pytest.raises(IndexOutOfRange):
        pivot_token_ids([5], 5)
    with pytest.raises(IndexOutOfRange):
        pivot_token_ids([-1], 5)


def test_defaults_are_accepted():
    cfg = DecodeConfig()
    assert (cfg.epsilon, cfg.beta, cfg.kappa, cfg.tau, cfg.delta) == (0.1, 0.2, 0.1, 0.1, 1e-6)
    assert validate_config(cfg) is cfg


@pytest.mark.parametrize("field,value", [
    ("delta", 0.0),
    ("delta", -1e-9),
    ("tau", 1.5),
    ("tau", 0.0),
    ("kappa", 0.0),
    ("epsilon", -0.1),
    ("beta", -1.0),
    ("beta", math.nan),
    ("max_steps", -1),
    ("max_steps", 2.5),
    ("mode", "beam"),
    ("rng_seed", -1),
    ("rng_seed", 2**64),
    ("contrast_text_only", "yes"),
])
def test_validate_names_offending_field(field, value):
    with pytest.raises(RangeError) as exc:
        validate_config(DecodeConfig().replace(**{field: value}))
    assert exc.value.field == field


def test_gate_above_one_is_allowed():
    validate_config(DecodeConfig(epsilon=0.9, beta=5.0))


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        DecodeConfig.from_dict({"epsilon": 0.1, "gamma": 2})


def test_config_file_parsing():
    text = """
    # decode settings
    epsilon = 0.05
    mode=sample   # trailing comment
    rng_seed = 0x10
    contrast_text_only = false
    """
    cfg = loads_config(text)
    assert cfg.epsilon == 0.05
    assert cfg.mode == "sample"
    assert cfg.rng_seed == 16
    assert cfg.contrast_text_only is False


def test_long_mode_names():
    assert parse_overrides(["mode=greedy-argmax", "tau=0.5"]) == {"mode": "greedy", "tau": 0.5}
    assert loads_config("mode = cutoff-sample\n").mode == "sample"


def test_config_file_errors():
    with pytest.raises(ConfigError):
        loads_config("gamma=1")
    with pytest.raises(ConfigError):
        loads_config("epsilon 0.1")
    with pytest.raises(RangeError):
        parse_overrides(["max_steps=many"])


finite_pos = st.floats(min_value=1e-300, max_value=1e300, allow_nan=False, allow_infinity=False)


@given(
    epsilon=st.floats(0, 1e6), beta=st.floats(0, 1e6), kappa=finite_pos,
    tau=st.floats(1e-300, 1.0).filter(lambda t: t > 0), delta=finite_pos,
    max_steps=st.integers(0, 10_000), mode=st.sampled_from(["greedy", "sample"]),
    rng_seed=st.integers(0, 2**64 - 1), text_only=st.booleans(),
)
def test_config_round_trips_bit_exactly(epsilon, beta, kappa, tau, delta, max_steps, mode, rng_seed, text_only):
    cfg = validate_config(DecodeConfig(epsilon, beta, kappa, tau, delta, max_steps, mode, rng_seed, text_only))
    again = loads_config(dumps_config(cfg))
    assert again == cfg
    for name in ("epsilon", "beta", "kappa", "tau", "delta"):
        assert math.copysign(1, getattr(again, name)) == math.copysign(1, getattr(cfg, name))
    assert DecodeConfig.from_dict(cfg.to_dict()) == cfg


def test_trace_timing():
    v = logit_vector([0.0, 1.0])
    trace = DecodeTrace([StepRecord(v, None, None, None, v, 1, 10), StepRecord(v, None, None, None, v, 1, 30)])
    assert len(trace) == 2
    assert trace.total_ns == 40
    assert trace.ns_per_token() == 20
    assert DecodeTrace().ns_per_token() == 0.0
