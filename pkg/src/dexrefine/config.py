"""Run configuration: YAML files with ``include`` lists, strict keys, CLI overrides.

Precedence, lowest to highest:

1. built-in defaults (the library defaults of every module),
2. files listed under ``include``, in order (each may include further files),
3. the keys of the config file itself,
4. command-line flags (``--seed``, ``--out-dir``, ``--threads``).

Relative paths are resolved against the directory of the file that sets them;
paths given on the command line are relative to the working directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .energy import ContactKernelParams, PriorWeights
from .refiner import RefinementConfig
from .tokenizer.training import TokenizerSpec, TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class KernelSection:
    alpha: float = 1.0
    k: float = 1.0
    lambda_c: float = 100.0
    epsilon: float = 1e-8


@dataclass
class PriorSection:
    w_gen: float = 1.0
    w_vel: float = 0.5
    w_acc: float = 0.25


@dataclass
class LMSection:
    lambda_init: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    max_inner_iters: int = 50
    step_tol: float = 1e-6
    energy_tol: float = 1e-9
    clamp_to_limits: bool = True


@dataclass
class RefineSection:
    kernel: KernelSection = field(default_factory=KernelSection)
    priors: PriorSection = field(default_factory=PriorSection)
    lm: LMSection = field(default_factory=LMSection)


@dataclass
class RetargetSection:
    lambda_smooth: float | None = None  # None: take the value from the spec file


@dataclass
class TokenizerSection:
    K: int = 256
    d_z: int = 32
    window: int = 8
    stride: int = 4
    dof: int = 4
    hidden: list = field(default_factory=lambda: [128, 128])
    activation: str = "tanh"


@dataclass
class TrainSection:
    beta: float = 0.25
    learning_rate: float = 1e-4
    epochs: int = 200
    refresh_every: int = 50
    tau_c: float = 1
    lambda_distill: float = 0.1
    batch_size: int = 32
    buffer_capacity: int = 65536
    distill_epochs: int | None = None
    update_codebook_stage2: bool = False


@dataclass
class VQSection:
    spec: TokenizerSection = field(default_factory=TokenizerSection)
    train: TrainSection = field(default_factory=TrainSection)
    source: str = "ref"
    target: str = "new"


@dataclass
class NoiseSection:
    sigma_levels: list = field(default_factory=lambda: [0.0, 0.001, 0.002])
    seeds: int = 20
    baseline_delta: float = 1e-6


@dataclass
class NormalsSection:
    k_neighbors: int = 16
    orient_ref: list | None = None  # None: cloud centroid


PATH_FIELDS = {
    "hand_model",
    "trajectory",
    "cloud",
    "target_poses",
    "extrinsics",
    "keypoints",
    "retarget_spec",
    "q_init",
    "codebook",
}
PATH_LIST_FIELDS = {
    "dataset",
    "dataset_ref",
    "dataset_target",
    "pred_keypoints",
    "gt_keypoints",
    "pred_root_poses",
    "gt_root_poses",
    "real_sequences",
    "gen_sequences",
}


@dataclass
class InputsSection:
    hand_model: str | None = None
    trajectory: str | None = None
    cloud: str | None = None
    target_poses: str | None = None
    extrinsics: str | None = None
    keypoints: str | None = None
    retarget_spec: str | None = None
    q_init: str | None = None
    codebook: str | None = None
    dataset: list = field(default_factory=list)
    dataset_ref: list = field(default_factory=list)
    dataset_target: list = field(default_factory=list)
    pred_keypoints: list = field(default_factory=list)
    gt_keypoints: list = field(default_factory=list)
    pred_root_poses: list = field(default_factory=list)
    gt_root_poses: list = field(default_factory=list)
    real_sequences: list = field(default_factory=list)
    gen_sequences: list = field(default_factory=list)


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "out"
    threads: int = 1
    inputs: InputsSection = field(default_factory=InputsSection)
    refine: RefineSection = field(default_factory=RefineSection)
    retarget: RetargetSection = field(default_factory=RetargetSection)
    vq: VQSection = field(default_factory=VQSection)
    noise_study: NoiseSection = field(default_factory=NoiseSection)
    normals: NormalsSection = field(default_factory=NormalsSection)

    # -- conversions to library objects

    def refinement_config(self) -> RefinementConfig:
        r = self.refine
        return RefinementConfig(
            kernel=ContactKernelParams(**dataclasses.asdict(r.kernel)),
            priors=PriorWeights(**dataclasses.asdict(r.priors)),
            **dataclasses.asdict(r.lm),
        )

    def tokenizer_spec(self) -> TokenizerSpec:
        s = dataclasses.asdict(self.vq.spec)
        s["hidden"] = tuple(int(h) for h in s["hidden"])
        return TokenizerSpec(**s)

    def train_config(self) -> TrainConfig:
        t = dataclasses.asdict(self.vq.train)
        every = t.pop("refresh_every")
        refresh = tuple(range(every, t["epochs"] + 1, every)) if every > 0 else ()
        return TrainConfig(refresh_epochs=refresh, seed=self.seed, **t)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _is_section(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _section_types(cls) -> dict[str, Any]:
    import typing

    return typing.get_type_hints(cls)


def _check_scalar(value, default, hint, where: str):
    """Type-check one leaf against the default/annotation of its field."""
    if value is None:
        if "None" in str(hint):
            return None
        raise ConfigError(f"{where}: must not be null")
    if isinstance(default, bool) or hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, list) or "list" in str(hint):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return value
    if hint is int or "int" in str(hint) and "float" not in str(hint):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float or "float" in str(hint):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str or "str" in str(hint):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _merge(obj, doc: dict, base_dir: Path, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(doc).__name__}")
    hints = _section_types(type(obj))
    for key, value in doc.items():
        path = f"{where}.{key}" if where else str(key)
        if key not in hints:
            known = ", ".join(sorted(hints))
            raise ConfigError(f"{path}: unknown key (expected one of: {known})")
        hint = hints[key]
        current = getattr(obj, key)
        if _is_section(hint):
            _merge(current, value, base_dir, path)
            continue
        value = _check_scalar(value, current, hint, path)
        if isinstance(obj, InputsSection) and value is not None:
            if key in PATH_FIELDS:
                value = str(base_dir / value)
            elif key in PATH_LIST_FIELDS:
                if not all(isinstance(v, str) for v in value):
                    raise ConfigError(f"{path}: expected a list of paths")
                value = [str(base_dir / v) for v in value]
        elif key == "out_dir":
            value = str(base_dir / value)
        setattr(obj, key, value)


def _load_file(cfg: RunConfig, path: Path, stack: tuple):
    path = path.resolve()
    if path in stack:
        raise ConfigError(f"include cycle through {path}")
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    includes = doc.pop("include", [])
    if isinstance(includes, str):
        includes = [includes]
    if not isinstance(includes, list):
        raise ConfigError(f"{path}: include: expected a list of paths")
    for inc in includes:
        _load_file(cfg, path.parent / inc, stack + (path,))
    _merge(cfg, doc, path.parent, "")


def _validate(cfg: RunConfig):
    if cfg.threads < 1:
        raise ConfigError("threads: must be >= 1")
    if cfg.noise_study.seeds < 1:
        raise ConfigError("noise_study.seeds: must be >= 1")
    if cfg.normals.orient_ref is not None and len(cfg.normals.orient_ref) != 3:
        raise ConfigError("normals.orient_ref: expected 3 numbers")
    # Surface library-level validation as field errors.
    for where, build in (("refine", cfg.refinement_config), ("vq.spec", cfg.tokenizer_spec), ("vq.train", cfg.train_config)):
        try:
            build()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from defaults, an optional file and overrides.

    ``overrides`` holds top-level keys from the command line (``seed``,
    ``out_dir``, ``threads``); ``None`` values are ignored.
    """
    cfg = RunConfig()
    if path is not None:
        _load_file(cfg, Path(path), ())
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "out_dir":
            value = str(Path(value).resolve())
        _merge(cfg, {key: value}, Path.cwd(), "")
    _validate(cfg)
    return cfg
