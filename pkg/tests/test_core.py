"""Parameter validation, mask container, config parsing, seed streams."""

import math

import numpy as np
import pytest

from dcmz import ConfigError, MaskSet, StabilityWarning, SystemParams, validate
from dcmz.core import (KNOWN_KEYS, apply_overrides, params_from_dict,
                       parse_config_text, rng_streams, validate_masks)


def test_validate_fills_step_duration():
    p = validate(SystemParams())
    assert p.P_m == pytest.approx(p.P / p.N_m, rel=0, abs=0)
    again = validate(p)
    assert again == p  # idempotent


@pytest.mark.parametrize("field,value", [("T", 0.0), ("T", -1.0), ("D", 0.0),
                                         ("P", -2.0), ("N_m", 0)])
def test_validate_rejects_nonpositive(field, value):
    import dataclasses
    with pytest.raises(ConfigError):
        validate(dataclasses.replace(SystemParams(), **{field: value}))


def test_validate_rejects_period_delay_mismatch():
    with pytest.raises(ConfigError, match="P must equal D"):
        validate(SystemParams(P=10.0, D=20.82))


def test_gain_above_one_warns_self_oscillation():
    with pytest.warns(StabilityWarning):
        validate(SystemParams(beta=1.1))
    # away from the quarter-wave point no warning fires
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        validate(SystemParams(beta=0.99))


def test_maskset_arrays_are_immutable():
    masks = MaskSet(m0=np.zeros(4), M=np.zeros((4, 2)), U=np.zeros((3, 4)), y0=np.zeros(3))
    with pytest.raises(ValueError):
        masks.m0[0] = 1.0


def test_maskset_content_hash_tracks_content():
    masks = MaskSet(m0=np.zeros(4), M=np.zeros((4, 2)), U=np.zeros((3, 4)), y0=np.zeros(3))
    same = MaskSet(m0=np.zeros(4), M=np.zeros((4, 2)), U=np.zeros((3, 4)), y0=np.zeros(3))
    bumped = masks.replace(m0=np.array([0.0, 0.0, 1e-300, 0.0]))
    assert masks.content_hash() == same.content_hash()
    assert masks.content_hash() != bumped.content_hash()


def test_validate_masks_shape_errors(small_params):
    good = MaskSet(m0=np.zeros(8), M=np.zeros((8, 3)), U=np.zeros((4, 8)), y0=np.zeros(4))
    validate_masks(good, small_params)
    with pytest.raises(ConfigError, match="N_m"):
        validate_masks(MaskSet(m0=np.zeros(7), M=np.zeros((7, 3)),
                               U=np.zeros((4, 7)), y0=np.zeros(4)), small_params)
    with pytest.raises(ConfigError, match="y0"):
        validate_masks(MaskSet(m0=np.zeros(8), M=np.zeros((8, 3)),
                               U=np.zeros((4, 8)), y0=np.zeros(3)), small_params)
    with pytest.raises(ConfigError, match="non-finite"):
        validate_masks(good.replace(m0=np.array([np.nan] + [0.0] * 7)), small_params)


def test_config_parse_types_and_comments():
    cfg = parse_config_text(
        "# header comment\n"
        "N_m = 100\n"
        "beta = 0.8   # trailing comment\n"
        "phi = pi/4\n"
        "augment = true\n"
        "scale_grid = 0.1, 0.5, 1.0\n"
        "task = mnist-desk\n")
    assert cfg["N_m"] == 100 and isinstance(cfg["N_m"], int)
    assert cfg["beta"] == 0.8
    assert cfg["phi"] == pytest.approx(math.pi / 4, rel=0)
    assert cfg["augment"] is True
    assert cfg["scale_grid"] == (0.1, 0.5, 1.0)
    assert cfg["task"] == "mnist-desk"


def test_config_parse_rejects_unknown_key_and_bad_value():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("betaa = 0.8\n")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config_text("N_m = ten\n")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config_text("just words\n")


def test_overrides_merge_and_reject_unknown():
    cfg = {"N_m": 100, "beta": 0.8}
    merged = apply_overrides(cfg, {"beta": "0.9", "iterations": "50"})
    assert merged["beta"] == 0.9 and merged["iterations"] == 50
    assert cfg["beta"] == 0.8  # original untouched
    with pytest.raises(ConfigError, match="unknown override"):
        apply_overrides(cfg, {"nope": "1"})


def test_params_from_dict_syncs_delay_with_period():
    p = params_from_dict({"D": 5.205, "N_m": 100})
    assert p.P == 5.205 and p.P_m == pytest.approx(0.05205)


def test_known_keys_cover_presets():
    from dcmz.scenarios import load_preset
    for name in ("mnist-desk", "seq-desk", "mnist-paper"):
        cfg = load_preset(name)
        assert set(cfg) <= KNOWN_KEYS


def test_rng_streams_deterministic_and_distinct():
    a = rng_streams(7, 3)
    b = rng_streams(7, 3)
    draws_a = [s.integers(0, 1 << 30) for s in a]
    draws_b = [s.integers(0, 1 << 30) for s in b]
    assert draws_a == draws_b
    assert len(set(draws_a)) == 3
