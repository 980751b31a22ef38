"""Test run configuration, tensor names and seed streams."""

from __future__ import annotations

import json
from typing import TYPE_CHECKING

import numpy as np
import pydantic
import pytest

from wadi import enums, ids
from wadi.helpers.seeding import SeedStreams
from wadi.schemas.config import (
    ConfigNotFoundError,
    InvalidConfigFileError,
    RunConfig,
    apply_overrides,
    load_config,
)

if TYPE_CHECKING:
    from pathlib import Path


def test_defaults() -> None:
    """Test the default run configuration."""
    config = load_config()
    assert config == RunConfig()
    assert config.distill.adapter_kind is enums.AdapterKindEnum.lorad
    assert config.distill.weighting is enums.WeightingModeEnum.normalized
    assert config.distill.total_steps == 2000
    assert (config.distill.r_student, config.distill.r_fake) == (16, 2)
    assert config.ablation.kinds == list(enums.AdapterKindEnum)


def test_overrides_skip_none() -> None:
    """Test dotted keys create nested mappings and None is ignored."""
    raw = apply_overrides({"distill": {"ratio": 2}}, {"distill.r_student": 8, "distill.ratio": None, "seed": 3})
    assert raw == {"distill": {"ratio": 2, "r_student": 8}, "seed": 3}


def test_file_and_overrides(tmp_path: Path) -> None:
    """Test flags win over the file."""
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"seed": 1, "data": {"kind": "two-moons"}, "distill": {"cfg_scale": 2.0}}))
    config = load_config(path, {"distill.cfg_scale": 3.0})
    assert config.seed == 1
    assert config.data.kind is enums.DatasetKindEnum.two_moons
    assert config.distill.cfg_scale == 3.0


def test_unknown_key(tmp_path: Path) -> None:
    """Test unknown keys are rejected."""
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"distill": {"rank": 4}}))
    with pytest.raises(pydantic.ValidationError, match="distill.rank"):
        load_config(path)


def test_invalid_dataset_lists_kinds() -> None:
    """Test an unknown dataset names the valid ones."""
    with pytest.raises(pydantic.ValidationError) as exc_info:
        load_config(overrides={"data.kind": "spirals"})
    message = str(exc_info.value)
    for kind in enums.DatasetKindEnum:
        assert kind.value in message


@pytest.mark.parametrize(
    ("overrides", "match"),
    [
        pytest.param({"model.hidden_width": 7}, "must be even", id="odd-width"),
        pytest.param({"schedule.beta_start": 0.1, "schedule.beta_end": 0.01}, "must not exceed", id="betas"),
        pytest.param({"distill.t_min_frac": 0.9, "distill.t_max_frac": 0.1}, "must not exceed", id="t-range"),
        pytest.param({"ablation.rank_grid": [[0, 2]]}, "at least 1", id="rank-grid"),
        pytest.param({"distill.ratio": 0}, "greater than or equal to 1", id="ratio"),
    ],
)
def test_invalid_values(overrides: dict[str, object], match: str) -> None:
    """Test out-of-range values."""
    with pytest.raises(pydantic.ValidationError, match=match):
        load_config(overrides=overrides)


def test_missing_file(tmp_path: Path) -> None:
    """Test a missing configuration file."""
    with pytest.raises(ConfigNotFoundError, match="nope.json"):
        load_config(tmp_path / "nope.json")


@pytest.mark.parametrize("content", ["{", "[1, 2]"])
def test_invalid_file(tmp_path: Path, content: str) -> None:
    """Test files that are not JSON objects."""
    path = tmp_path / "config.json"
    path.write_text(content)
    with pytest.raises(InvalidConfigFileError):
        load_config(path)


@pytest.mark.parametrize(
    ("name", "expected"),
    [
        pytest.param("fc1.weight", ids.TensorName("fc1", "weight"), id="weight"),
        pytest.param("cond.embedding", ids.TensorName("cond", "embedding"), id="embedding"),
        pytest.param(
            "out.dora-frozen-norm.B",
            ids.TensorName("out", "B", enums.AdapterKindEnum.dora_frozen_norm),
            id="adapter",
        ),
    ],
)
def test_tensor_names(name: str, expected: ids.TensorName) -> None:
    """Test checkpoint names parse and print back."""
    parsed = ids.TensorName.from_checkpoint_name(name)
    assert parsed == expected
    assert parsed.as_checkpoint_name() == name


@pytest.mark.parametrize("name", ["fc1", "fc1.", "a.b.c.d", "fc1.rotation.A", ".weight"])
def test_invalid_tensor_names(name: str) -> None:
    """Test malformed checkpoint names."""
    with pytest.raises(ids.InvalidTensorNameError):
        ids.TensorName.from_checkpoint_name(name)


def test_seed_streams_are_independent() -> None:
    """Test streams replay by name and differ across names and scopes."""
    streams = SeedStreams(42)
    first = streams.generator("noise").standard_normal(4)
    np.testing.assert_array_equal(streams.generator("noise").standard_normal(4), first)
    assert not np.array_equal(streams.generator("data").standard_normal(4), first)
    assert not np.array_equal(streams.child("distill").generator("noise").standard_normal(4), first)
    assert not np.array_equal(SeedStreams(43).generator("noise").standard_normal(4), first)
    assert repr(streams.child("a").child("b")) == "SeedStreams(seed=42, path=a/b)"
