"""Strict JSON run configuration.

Every section is optional; unknown keys are rejected with the dotted path of
the offending field::

    {
      "backbone": {"preset": "desk8", "num_classes": 5},
      "gate": {"interaction": "mul_sigmoid", "pooling": "avg"},
      "unroll": "Pu<6..4>x2",
      "data": {"train_count": 500, "val_count": 100, "seed": 0},
      "train": {"base_lr": 0.01, "epochs": 30, "batch_size": 8, "seed": 0},
      "output_dir": "runs/pu64x2"
    }

``backbone.blocks`` may replace the preset with six lists of
``[in, out, stride]`` (or ``[in, out, stride, kernel]``) layers, and
``data`` may instead be ``{"manifest": "path/to/dataset"}``.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

from .backbone import PRESETS, BackboneSpec, BlockSpec, ConvLayer
from .errors import ConfigError
from .gating import INTERACTIONS, POOLINGS
from .synthdata import DatasetSpec
from .trainer import TrainConfig
from .unroll import NetworkSpec, UnrollConfig, VariantParseError, parse_variant

_TOP_KEYS = ("backbone", "gate", "unroll", "data", "train", "output_dir")


@dataclass(frozen=True)
class RunConfig:
    network: NetworkSpec
    train: TrainConfig
    data: Optional[DatasetSpec] = None
    manifest: Optional[Path] = None
    output_dir: Path = Path("runs/default")

    @property
    def num_classes(self) -> int:
        return self.network.backbone.num_classes

    def estimator(self):
        from .estimator import RIGNetSegmenter

        t = self.train
        return RIGNetSegmenter(
            variant=self.network.unroll.variant(),
            backbone=self.network.backbone,
            num_classes=self.num_classes,
            interaction=self.network.interaction,
            pooling=self.network.pooling,
            base_lr=t.base_lr,
            momentum=t.momentum,
            weight_decay=t.weight_decay,
            epochs=t.epochs,
            batch_size=t.batch_size,
            poly_power=t.poly_power,
            flip_prob=t.flip_prob,
            loss_all_iterations=t.loss_all_iterations,
            ignore_label=t.ignore_label,
            random_state=t.seed,
        )


def _expect_obj(obj, path: str) -> Dict[str, Any]:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object, got {type(obj).__name__}")
    return obj


def _reject_unknown(obj: Dict[str, Any], allowed, path: str) -> None:
    for key in obj:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"{where}: unknown key")


def _check_scalar(value, default, path: str):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {json.dumps(value)}")
    return value


def _load_dataclass(cls, obj, path: str, overrides: Optional[Dict[str, Any]] = None):
    obj = _expect_obj(obj, path)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _reject_unknown(obj, fields, path)
    kwargs = dict(overrides or {})
    for key, value in obj.items():
        kwargs[key] = _check_scalar(value, fields[key].default, f"{path}.{key}")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _layer(obj, path: str) -> ConvLayer:
    if not isinstance(obj, list) or len(obj) not in (3, 4) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in obj
    ):
        raise ConfigError(f"{path}: expected [in, out, stride] or [in, out, stride, kernel]")
    try:
        return ConvLayer(*obj)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _backbone(obj, path: str = "backbone") -> BackboneSpec:
    obj = _expect_obj(obj, path)
    _reject_unknown(obj, ("preset", "num_classes", "blocks", "residual"), path)
    k = _check_scalar(obj.get("num_classes", 5), 5, f"{path}.num_classes")
    residual = obj.get("residual", [False] * 6)
    if not isinstance(residual, list) or len(residual) != 6 or not all(isinstance(r, bool) for r in residual):
        raise ConfigError(f"{path}.residual: expected six booleans")
    try:
        if "blocks" in obj:
            if "preset" in obj:
                raise ConfigError(f"{path}: give either preset or blocks, not both")
            blocks = obj["blocks"]
            if not isinstance(blocks, list) or len(blocks) != 6:
                raise ConfigError(f"{path}.blocks: expected a list of six blocks")
            specs = []
            for i, layers in enumerate(blocks, start=1):
                bpath = f"{path}.blocks[{i - 1}]"
                if not isinstance(layers, list) or not layers:
                    raise ConfigError(f"{bpath}: expected a non-empty list of layers")
                convs = tuple(_layer(l, f"{bpath}[{j}]") for j, l in enumerate(layers))
                try:
                    specs.append(BlockSpec(i, convs, residual[i - 1]))
                except ValueError as exc:
                    raise ConfigError(f"{bpath}: {exc}") from None
            return BackboneSpec(tuple(specs), k)
        preset = _check_scalar(obj.get("preset", "desk8"), "", f"{path}.preset")
        if preset not in PRESETS:
            raise ConfigError(f"{path}.preset: unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        spec = PRESETS[preset](k)
        if any(residual):
            blocks = tuple(BlockSpec(b.index, b.layers, r) for b, r in zip(spec.blocks, residual))
            spec = BackboneSpec(blocks, k, spec.stride)
        return spec
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(raw: Dict[str, Any], base_dir: Optional[os.PathLike] = None) -> RunConfig:
    raw = _expect_obj(raw, "config")
    _reject_unknown(raw, _TOP_KEYS, "")
    backbone = _backbone(raw.get("backbone", {}))

    gate = _expect_obj(raw.get("gate", {}), "gate")
    _reject_unknown(gate, ("interaction", "pooling", "multirange"), "gate")
    interaction = _check_scalar(gate.get("interaction", "mul_sigmoid"), "", "gate.interaction")
    if interaction not in INTERACTIONS:
        raise ConfigError(f"gate.interaction: {interaction!r} not in {INTERACTIONS}")
    pooling = _check_scalar(gate.get("pooling", "avg"), "", "gate.pooling")
    if pooling not in POOLINGS:
        raise ConfigError(f"gate.pooling: {pooling!r} not in {POOLINGS}")

    variant = raw.get("unroll", "FF")
    if not isinstance(variant, str):
        raise ConfigError("unroll: expected a variant string such as \"Pu<6..4>x2\"")
    try:
        unroll: UnrollConfig = parse_variant(variant)
    except VariantParseError as exc:
        raise ConfigError(f"unroll: {exc}") from None
    multirange = gate.get("multirange")
    if multirange is not None:
        if not isinstance(multirange, bool):
            raise ConfigError("gate.multirange: expected a boolean")
        if multirange != (unroll.mode == "parallel_multirange"):
            raise ConfigError(f"gate.multirange: {multirange} contradicts unroll variant {variant!r}")
    network = NetworkSpec(backbone, unroll, interaction, pooling)

    train = _load_dataclass(TrainConfig, raw.get("train", {}), "train")

    data_raw = _expect_obj(raw.get("data", {}), "data")
    data = None
    manifest = None
    if "manifest" in data_raw:
        _reject_unknown(data_raw, ("manifest",), "data")
        m = data_raw["manifest"]
        if not isinstance(m, str):
            raise ConfigError("data.manifest: expected a path string")
        manifest = Path(m)
        if base_dir is not None and not manifest.is_absolute():
            manifest = Path(base_dir) / manifest
    else:
        data = _load_dataclass(DatasetSpec, data_raw, "data", {"num_classes": backbone.num_classes})
        if data.num_classes != backbone.num_classes:
            raise ConfigError(
                f"data.num_classes: {data.num_classes} differs from backbone.num_classes {backbone.num_classes}"
            )

    out = raw.get("output_dir", "runs/default")
    if not isinstance(out, str):
        raise ConfigError("output_dir: expected a path string")
    return RunConfig(network, train, data, manifest, Path(out))


def load_config(path: os.PathLike) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON in {path}: {exc}") from None
    return parse_config(raw, base_dir=path.parent)
