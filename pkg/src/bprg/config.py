"""Experiment config files: strict JSON parsing with defaults and validation."""

from __future__ import annotations

import json

from .errors import ConfigError
from .model import LayerSpec
from .sparsity import PruneSchedule, RegrowSchedule
from .trajectory import DataConfig, ExperimentConfig

_TOP_KEYS = {"data", "model", "optimizer", "prune", "regrow", "seed"}


def _require_dict(obj, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    return obj


def _check_keys(obj, allowed, path):
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")


def _get(obj, key, path, default=None, required=False, kind=None):
    if key not in obj:
        if required:
            raise ConfigError(f"{path}.{key}: missing required key")
        return default
    val = obj[key]
    if kind is not None:
        if kind is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if not isinstance(val, kind) or isinstance(val, bool):
            raise ConfigError(f"{path}.{key}: expected {kind.__name__}")
    return val


def _parse_layers(items, path):
    if not isinstance(items, list) or not items:
        raise ConfigError(f"{path}: expected a non-empty list of layers")
    layers = []
    for i, item in enumerate(items):
        lp = f"{path}[{i}]"
        _require_dict(item, lp)
        kind = _get(item, "kind", lp, required=True, kind=str)
        try:
            if kind == "dense":
                _check_keys(item, {"kind", "in", "out"}, lp)
                layers.append(LayerSpec.dense(_get(item, "in", lp, required=True, kind=int),
                                              _get(item, "out", lp, required=True, kind=int)))
            elif kind == "conv3x3":
                _check_keys(item, {"kind", "in", "out"}, lp)
                layers.append(LayerSpec.conv3x3(_get(item, "in", lp, required=True, kind=int),
                                                _get(item, "out", lp, required=True, kind=int)))
            elif kind in ("flatten", "relu"):
                _check_keys(item, {"kind"}, lp)
                layers.append(LayerSpec(kind))
            else:
                raise ConfigError(f"{lp}.kind: unknown layer kind {kind!r}")
        except ConfigError:
            raise
    return layers


def parse_config_dict(doc: dict, path: str = "config") -> ExperimentConfig:
    _require_dict(doc, path)
    _check_keys(doc, _TOP_KEYS, path)
    seed = _get(doc, "seed", path, required=True, kind=int)

    data_obj = _require_dict(_get(doc, "data", path, default={}), f"{path}.data")
    source = _get(data_obj, "source", f"{path}.data", default="synth", kind=str)
    if source == "synth":
        _check_keys(data_obj, {"source", "n_train", "n_test", "features", "classes", "spread"},
                    f"{path}.data")
        data = DataConfig(
            source="synth",
            n_train=_get(data_obj, "n_train", f"{path}.data", default=10000, kind=int),
            n_test=_get(data_obj, "n_test", f"{path}.data", default=2000, kind=int),
            features=_get(data_obj, "features", f"{path}.data", default=16, kind=int),
            classes=_get(data_obj, "classes", f"{path}.data", default=10, kind=int),
            spread=_get(data_obj, "spread", f"{path}.data", default=0.15, kind=float),
        )
    elif source == "idx":
        _check_keys(data_obj, {"source", "n_train", "n_test", "train_images", "train_labels",
                               "test_images", "test_labels"}, f"{path}.data")
        data = DataConfig(
            source="idx",
            n_train=_get(data_obj, "n_train", f"{path}.data", default=0, kind=int),
            n_test=_get(data_obj, "n_test", f"{path}.data", default=0, kind=int),
            train_images=_get(data_obj, "train_images", f"{path}.data",
                              default="train-images-idx3-ubyte", kind=str),
            train_labels=_get(data_obj, "train_labels", f"{path}.data",
                              default="train-labels-idx1-ubyte", kind=str),
            test_images=_get(data_obj, "test_images", f"{path}.data",
                             default="t10k-images-idx3-ubyte", kind=str),
            test_labels=_get(data_obj, "test_labels", f"{path}.data",
                             default="t10k-labels-idx1-ubyte", kind=str),
        )
    else:
        raise ConfigError(f"{path}.data.source: must be 'synth' or 'idx'")

    model_obj = _require_dict(_get(doc, "model", path, required=True), f"{path}.model")
    _check_keys(model_obj, {"layers", "input_shape"}, f"{path}.model")
    layers = _parse_layers(_get(model_obj, "layers", f"{path}.model", required=True),
                           f"{path}.model.layers")
    input_shape = model_obj.get("input_shape")
    if input_shape is not None:
        if (not isinstance(input_shape, list) or len(input_shape) != 3
                or not all(isinstance(v, int) and v > 0 for v in input_shape)):
            raise ConfigError(f"{path}.model.input_shape: expected [c, h, w] of positive ints")
        input_shape = tuple(input_shape)

    opt_obj = _require_dict(_get(doc, "optimizer", path, default={}), f"{path}.optimizer")
    _check_keys(opt_obj, {"lr", "momentum", "batch_size", "pretrain_epochs",
                          "finetune_lr_scale", "eval_every"}, f"{path}.optimizer")
    lr = _get(opt_obj, "lr", f"{path}.optimizer", default=0.1, kind=float)
    momentum = _get(opt_obj, "momentum", f"{path}.optimizer", default=0.9, kind=float)
    batch_size = _get(opt_obj, "batch_size", f"{path}.optimizer", default=64, kind=int)
    pretrain_epochs = _get(opt_obj, "pretrain_epochs", f"{path}.optimizer", default=10, kind=int)
    finetune_lr_scale = _get(opt_obj, "finetune_lr_scale", f"{path}.optimizer", default=0.1, kind=float)
    eval_every = _get(opt_obj, "eval_every", f"{path}.optimizer", default=0, kind=int)
    if lr <= 0:
        raise ConfigError(f"{path}.optimizer.lr: must be positive")
    if not (0 <= momentum < 1):
        raise ConfigError(f"{path}.optimizer.momentum: must be in [0, 1)")
    if batch_size < 1:
        raise ConfigError(f"{path}.optimizer.batch_size: must be >= 1")
    if pretrain_epochs < 0:
        raise ConfigError(f"{path}.optimizer.pretrain_epochs: must be >= 0")

    prune_obj = _require_dict(_get(doc, "prune", path, default={}), f"{path}.prune")
    _check_keys(prune_obj, {"mode", "s_init", "s_final", "steps", "interpolation",
                            "finetune_epochs_per_step", "scope"}, f"{path}.prune")
    s_final = _get(prune_obj, "s_final", f"{path}.prune", default=0.99, kind=float)
    if not (0.0 < s_final < 1.0):
        raise ConfigError(f"{path}.prune.s_final: {s_final} outside (0, 1)")
    try:
        prune = PruneSchedule(
            mode=_get(prune_obj, "mode", f"{path}.prune", default="one-shot", kind=str),
            s_init=_get(prune_obj, "s_init", f"{path}.prune", default=0.0, kind=float),
            s_final=s_final,
            steps=_get(prune_obj, "steps", f"{path}.prune", default=1, kind=int),
            interpolation=_get(prune_obj, "interpolation", f"{path}.prune",
                               default="cubic", kind=str),
            finetune_epochs_per_step=_get(prune_obj, "finetune_epochs_per_step",
                                          f"{path}.prune", default=3, kind=int),
            scope=_get(prune_obj, "scope", f"{path}.prune", default="global", kind=str),
        )
    except ConfigError as e:
        raise ConfigError(f"{path}.prune: {e}") from None

    regrow_obj = _require_dict(_get(doc, "regrow", path, default={}), f"{path}.regrow")
    _check_keys(regrow_obj, {"mode", "s_start", "s_end", "steps", "criterion", "init_rule",
                             "finetune_epochs_per_step", "scoring_batch_size"}, f"{path}.regrow")
    s_start = _get(regrow_obj, "s_start", f"{path}.regrow", default=prune.s_final, kind=float)
    if abs(s_start - prune.s_final) > 1e-12:
        raise ConfigError(
            f"{path}.regrow.s_start ({s_start}) must equal {path}.prune.s_final ({prune.s_final})"
        )
    try:
        regrow = RegrowSchedule(
            mode=_get(regrow_obj, "mode", f"{path}.regrow", default="one-shot", kind=str),
            s_start=s_start,
            s_end=_get(regrow_obj, "s_end", f"{path}.regrow", default=0.95, kind=float),
            steps=_get(regrow_obj, "steps", f"{path}.regrow", default=1, kind=int),
            criterion=_get(regrow_obj, "criterion", f"{path}.regrow",
                           default="gradient", kind=str),
            init_rule=_get(regrow_obj, "init_rule", f"{path}.regrow", default="zero", kind=str),
            finetune_epochs_per_step=_get(regrow_obj, "finetune_epochs_per_step",
                                          f"{path}.regrow", default=3, kind=int),
            scoring_batch_size=_get(regrow_obj, "scoring_batch_size", f"{path}.regrow",
                                    default=512, kind=int),
        )
    except ConfigError as e:
        raise ConfigError(f"{path}.regrow: {e}") from None

    return ExperimentConfig(
        data=data,
        layers=layers,
        input_shape=input_shape,
        lr=lr,
        momentum=momentum,
        batch_size=batch_size,
        pretrain_epochs=pretrain_epochs,
        finetune_lr_scale=finetune_lr_scale,
        prune=prune,
        regrow=regrow,
        seed=seed,
        eval_every=eval_every,
        raw=doc,
    )


def parse_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return parse_config_dict(doc, path="config")


def canonical_config_json(cfg: ExperimentConfig) -> str:
    """Stable serialization used as the checkpoint fingerprint."""
    return json.dumps(cfg.raw, sort_keys=True, separators=(",", ":"))
