"""Strict config parsing and the packaged defaults."""
from __future__ import annotations

import json

import pytest

from bpjdet.config import ConfigError, load_config, parse_config


def test_packaged_defaults():
    cfg = load_config()
    assert cfg.strides == (8, 16, 32, 64)
    assert cfg.schema.part_names == ("body", "face")
    assert (cfg.weights.alpha, cfg.weights.beta) == (0.05, 0.7)
    assert (cfg.weights.gamma, cfg.weights.lam) == (0.3, 0.015)
    assert cfg.weights.balance(8) == 4.0
    assert cfg.thresholds.inner == 0.6
    assert (cfg.scene.image_w, cfg.scene.image_h) == (256, 256)
    assert cfg.train.steps == 2000
    assert cfg.train.learning_rate == 20.0


def test_empty_document_equals_packaged_defaults():
    assert parse_config({}).echo() == load_config().echo()


@pytest.mark.parametrize(
    "doc,where",
    [
        ({"bogus": {}}, "top level"),
        ({"grid": {"stride": [8]}}, "grid"),
        ({"schema": {"part": ["face"]}}, "schema"),
        ({"weights": {"alhpa": 0.1}}, "weights"),
        ({"thresholds": {"body_confidence": 0.1}}, "thresholds"),
        ({"scene": {"n_bodies": [1, 2]}}, "scene"),
        ({"train": {"lr": 0.5}}, "train"),
        (
            {
                "scene": {
                    "part_rules": [{"dx": [0, 0], "dy": [0, 0], "size": [0.2, 0.3], "vis": 1}]
                }
            },
            "part_rules[0]",
        ),
    ],
)
def test_unknown_keys_rejected_everywhere(doc, where):
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(doc)
    try:
        parse_config(doc)
    except ConfigError as e:
        assert where in str(e)


def test_bad_files(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(broken)
    listdoc = tmp_path / "list.json"
    listdoc.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_config(listdoc)


def test_multi_part_schema_requires_rules():
    with pytest.raises(ConfigError, match="part_rules"):
        parse_config({"schema": {"parts": ["left_hand", "right_hand"]}})
    rule = {"dx": [-0.2, -0.1], "dy": [-0.1, 0.1], "size": [0.2, 0.3]}
    with pytest.raises(ConfigError, match="part rules"):
        parse_config(
            {
                "schema": {"parts": ["left_hand", "right_hand"]},
                "scene": {"part_rules": [rule]},
            }
        )
    cfg = parse_config(
        {
            "schema": {"parts": ["left_hand", "right_hand"]},
            "scene": {"part_rules": [rule, {**rule, "dx": [0.1, 0.2]}]},
        }
    )
    assert cfg.schema.k == 2
    assert cfg.scene.part_rules[1].dx == (0.1, 0.2)


def test_bad_pair_rejected():
    with pytest.raises(ConfigError, match="pair"):
        parse_config({"scene": {"bodies": [3]}})


def test_echo_is_fully_resolved_and_reparseable():
    cfg = load_config()
    echo = cfg.echo()
    assert set(echo) == {"grid", "schema", "weights", "thresholds", "scene", "train"}
    # anchors come back resolved even though the document omitted them
    assert echo["grid"]["anchors"]["8"][0] == [12.0, 16.0]
    assert echo["grid"]["anchors"]["64"][0] == [pytest.approx(142.0 * 1.8), pytest.approx(110.0 * 1.8)]
    assert echo["weights"]["lambda"] == 0.015
    assert echo["train"]["learning_rate"] == 20.0
    # the echo is itself a valid config document and a fixed point
    again = parse_config(json.loads(json.dumps(echo)))
    assert again.echo() == echo


def test_grid_for_uses_configured_layout():
    doc = {"grid": {"strides": [8], "anchors": {"8": [[10, 12], [20, 24]]}}}
    cfg = parse_config(doc)
    grid = cfg.grid_for(64, 128)
    assert grid.strides == (8,)
    assert grid.anchors[8] == ((10.0, 12.0), (20.0, 24.0))
    assert grid.grid_hw(8) == (8, 16)
