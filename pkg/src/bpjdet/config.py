"""Strict JSON run configuration.

Every section and key is validated; unknown keys are an error rather than a
silent ignore, so a typo like "thresolds" cannot masquerade as a default.
The packaged default carries the reference weights and thresholds.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .association import Thresholds
from .losses import LossWeights
from .representation import GridSpec, PartSchema
from .synthscene import PartRule, SceneConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _check_known(doc: dict, known, where: str):
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in {where} (known: {sorted(known)})")


def _pair(value, where: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{where} must be a [low, high] pair, got {value!r}")
    return float(value[0]), float(value[1])


def _int_pair(value, where: str) -> tuple[int, int]:
    lo, hi = _pair(value, where)
    return int(lo), int(hi)


@dataclass(frozen=True)
class RunConfig:
    strides: tuple[int, ...]
    anchors: dict | None
    schema: PartSchema
    weights: LossWeights
    thresholds: Thresholds
    scene: SceneConfig
    train: TrainConfig

    def grid_for(self, image_h: int, image_w: int) -> GridSpec:
        return GridSpec(image_h, image_w, self.strides, self.anchors)

    def echo(self) -> dict:
        """Fully-resolved configuration for embedding into reports."""
        anchors = self.anchors
        if anchors is None:
            anchors = GridSpec(
                self.scene.image_h, self.scene.image_w, self.strides
            ).anchors
        return {
            "grid": {
                "strides": list(self.strides),
                "anchors": {str(s): [list(a) for a in pairs] for s, pairs in anchors.items()},
            },
            "schema": {
                "parts": list(self.schema.part_names[1:]),
                "visibility_required": self.schema.visibility_required,
            },
            "weights": {
                "alpha": self.weights.alpha,
                "beta": self.weights.beta,
                "gamma": self.weights.gamma,
                "lambda": self.weights.lam,
                "batch_size": self.weights.batch_size,
                "obj_balance": {str(s): self.weights.balance(s) for s in self.strides},
            },
            "thresholds": {
                "body_conf": self.thresholds.body_conf,
                "body_iou": self.thresholds.body_iou,
                "part_conf": self.thresholds.part_conf,
                "part_iou": self.thresholds.part_iou,
                "inner": self.thresholds.inner,
            },
            "scene": {
                "seed": self.scene.seed,
                "image_w": self.scene.image_w,
                "image_h": self.scene.image_h,
                "bodies": list(self.scene.bodies),
                "body_w": list(self.scene.body_w),
                "body_aspect": list(self.scene.body_aspect),
                "max_body_iou": self.scene.max_body_iou,
                "max_part_iou": self.scene.max_part_iou,
                "part_rules": [
                    {
                        "dx": list(r.dx),
                        "dy": list(r.dy),
                        "size": list(r.size),
                        "visibility": r.visibility,
                    }
                    for r in self.scene.part_rules
                ],
                "orphans": list(self.scene.orphans),
                "noise_sigma": self.scene.noise_sigma,
            },
            "train": {
                "steps": self.train.steps,
                "learning_rate": self.train.learning_rate,
                "log_every": self.train.log_every,
                "negative_fraction": self.train.negative_fraction,
                "seed": self.train.seed,
            },
        }


def _parse_grid(doc: dict):
    _check_known(doc, {"strides", "anchors"}, "section 'grid'")
    strides = tuple(int(s) for s in doc.get("strides", (8, 16, 32, 64)))
    anchors = doc.get("anchors")
    if anchors is not None:
        anchors = {
            int(s): tuple((float(w), float(h)) for w, h in pairs)
            for s, pairs in anchors.items()
        }
    return strides, anchors


def _parse_schema(doc: dict) -> PartSchema:
    _check_known(doc, {"parts", "visibility_required"}, "section 'schema'")
    parts = doc.get("parts", ["face"])
    if not isinstance(parts, list) or not parts:
        raise ConfigError(f"schema.parts must be a non-empty list, got {parts!r}")
    return PartSchema.for_parts(
        *(str(p) for p in parts),
        visibility_required=bool(doc.get("visibility_required", False)),
    )


def _parse_weights(doc: dict) -> LossWeights:
    known = {"alpha", "beta", "gamma", "lambda", "batch_size", "obj_balance"}
    _check_known(doc, known, "section 'weights'")
    defaults = LossWeights()
    balance = doc.get("obj_balance")
    if balance is not None:
        balance = {int(s): float(v) for s, v in balance.items()}
    return LossWeights(
        alpha=float(doc.get("alpha", defaults.alpha)),
        beta=float(doc.get("beta", defaults.beta)),
        gamma=float(doc.get("gamma", defaults.gamma)),
        lam=float(doc.get("lambda", defaults.lam)),
        batch_size=int(doc.get("batch_size", defaults.batch_size)),
        obj_balance=balance,
    )


def _parse_thresholds(doc: dict) -> Thresholds:
    known = {"body_conf", "body_iou", "part_conf", "part_iou", "inner"}
    _check_known(doc, known, "section 'thresholds'")
    defaults = Thresholds()
    return Thresholds(
        **{name: float(doc.get(name, getattr(defaults, name))) for name in known}
    )


def _parse_rule(doc: dict, index: int) -> PartRule:
    where = f"scene.part_rules[{index}]"
    _check_known(doc, {"dx", "dy", "size", "visibility"}, where)
    return PartRule(
        dx=_pair(doc["dx"], f"{where}.dx"),
        dy=_pair(doc["dy"], f"{where}.dy"),
        size=_pair(doc["size"], f"{where}.size"),
        visibility=float(doc.get("visibility", 1.0)),
    )


def _parse_scene(doc: dict, schema: PartSchema) -> SceneConfig:
    known = {
        "seed",
        "image_w",
        "image_h",
        "bodies",
        "body_w",
        "body_aspect",
        "max_body_iou",
        "max_part_iou",
        "part_rules",
        "orphans",
        "noise_sigma",
    }
    _check_known(doc, known, "section 'scene'")
    defaults = SceneConfig()
    rules = doc.get("part_rules")
    if rules is None:
        if schema.k == 1:
            part_rules = defaults.part_rules
        else:
            raise ConfigError("scene.part_rules is required when the schema has k > 1 parts")
    else:
        part_rules = tuple(_parse_rule(r, i) for i, r in enumerate(rules))
    if len(part_rules) != schema.k:
        raise ConfigError(f"{len(part_rules)} part rules for k={schema.k} parts")
    return SceneConfig(
        seed=int(doc.get("seed", defaults.seed)),
        image_w=int(doc.get("image_w", defaults.image_w)),
        image_h=int(doc.get("image_h", defaults.image_h)),
        bodies=_int_pair(doc.get("bodies", defaults.bodies), "scene.bodies"),
        body_w=_pair(doc.get("body_w", defaults.body_w), "scene.body_w"),
        body_aspect=_pair(doc.get("body_aspect", defaults.body_aspect), "scene.body_aspect"),
        max_body_iou=float(doc.get("max_body_iou", defaults.max_body_iou)),
        max_part_iou=float(doc.get("max_part_iou", defaults.max_part_iou)),
        part_names=tuple(schema.part_names[1:]),
        part_rules=part_rules,
        orphans=_int_pair(doc.get("orphans", defaults.orphans), "scene.orphans"),
        noise_sigma=float(doc.get("noise_sigma", defaults.noise_sigma)),
    )


def _parse_train(doc: dict) -> TrainConfig:
    known = {"steps", "learning_rate", "log_every", "negative_fraction", "seed"}
    _check_known(doc, known, "section 'train'")
    defaults = TrainConfig()
    return TrainConfig(
        steps=int(doc.get("steps", defaults.steps)),
        learning_rate=float(doc.get("learning_rate", defaults.learning_rate)),
        log_every=int(doc.get("log_every", defaults.log_every)),
        negative_fraction=float(doc.get("negative_fraction", defaults.negative_fraction)),
        seed=int(doc.get("seed", defaults.seed)),
    )


def parse_config(doc: dict) -> RunConfig:
    sections = {"grid", "schema", "weights", "thresholds", "scene", "train"}
    _check_known(doc, sections, "the top level")
    strides, anchors = _parse_grid(doc.get("grid", {}))
    schema = _parse_schema(doc.get("schema", {}))
    return RunConfig(
        strides=strides,
        anchors=anchors,
        schema=schema,
        weights=_parse_weights(doc.get("weights", {})),
        thresholds=_parse_thresholds(doc.get("thresholds", {})),
        scene=_parse_scene(doc.get("scene", {}), schema),
        train=_parse_train(doc.get("train", {})),
    )


def load_config(path=None) -> RunConfig:
    """Parse a config file; with no path, the packaged defaults."""
    if path is None:
        text = resources.files("bpjdet.data").joinpath("default_config.json").read_text()
    else:
        with open(path) as f:
            text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(doc)
