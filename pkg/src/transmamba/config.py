"""Run configuration: optimizer/schedule/data settings plus presets.

Config files are flat ``key = value`` text; ``#`` starts a comment.  The
``preset`` key (applied first regardless of position) selects a named
baseline which later keys then override.  Tuples are comma-separated;
progressive stages are ``start:patch:batch`` triples joined by commas.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .network import DESK_PRESET, PAPER_PRESET, ModelConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=lambda: DESK_PRESET)
    # loss
    alpha: float = 5.0
    coherence_per_channel: bool = False
    # optimizer
    lr0: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    eps: float = 1e-8
    # schedule: constant lr0 for warm_iters, then cosine to lr_min
    warm_iters: int = 120
    total_iters: int = 400
    lr_min: float = 1e-6
    # data / sampling
    batch_size: int = 2
    patch_size: int = 32
    seed: int = 0
    data_root: str = "data"
    holdout: int = 4
    # progressive stages: ((start_iter, patch, batch), ...), empty = fixed
    stages: tuple = ()
    # outputs
    checkpoint_path: str = "model.tmba"
    checkpoint_interval: int = 0
    eval_interval: int = 0
    log_path: str = ""

    def __post_init__(self):
        if self.warm_iters >= self.total_iters:
            raise ConfigError(f"warm_iters ({self.warm_iters}) must be < total_iters ({self.total_iters})")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patch_size % 8:
            raise ConfigError(f"patch_size {self.patch_size} must be divisible by 8")
        self.model.validate_spatial(self.patch_size, self.patch_size)
        for stage in self.stages:
            if len(stage) != 3:
                raise ConfigError(f"stage {stage} must be (start_iter, patch, batch)")
            self.model.validate_spatial(stage[1], stage[1])

    def stage_at(self, t: int) -> tuple[int, int]:
        """(patch, batch) in effect at iteration t (1-indexed)."""
        patch, batch = self.patch_size, self.batch_size
        for start, p, b in self.stages:
            if t >= start:
                patch, batch = p, b
        return patch, batch


def preset(name: str) -> RunConfig:
    if name == "desk":
        return RunConfig()
    if name == "desk-progressive":
        return RunConfig(stages=((1, 32, 2), (201, 48, 2)))
    if name == "paper-full":
        # full-scale recipe for documentation honesty; not runnable at desk scale
        return RunConfig(model=PAPER_PRESET, warm_iters=92_000, total_iters=300_000,
                         batch_size=8, patch_size=128, checkpoint_interval=10_000)
    raise ConfigError(f"unknown preset {name!r} (expected desk, desk-progressive, paper-full)")


_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_RUN_KEYS = {f.name for f in fields(RunConfig)} - {"model"}
_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_tuple(text: str, kind):
    return tuple(kind(v.strip()) for v in text.split(",") if v.strip())


def _parse_stages(text: str) -> tuple:
    stages = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        bits = part.split(":")
        if len(bits) != 3:
            raise ConfigError(f"stage {part!r} must be start:patch:batch")
        stages.append(tuple(int(b) for b in bits))
    return tuple(stages)


def _coerce(key: str, value: str):
    value = value.strip()
    tuples_int = {"sdtb_counts", "cbsm_counts", "heads"}
    if key in tuples_int:
        return _parse_tuple(value, int)
    if key == "direction_order":
        return _parse_tuple(value, str)
    if key == "stages":
        return _parse_stages(value)
    if key in ("coherence_per_channel",):
        word = value.lower()
        if word not in _BOOL_WORDS:
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return _BOOL_WORDS[word]
    if key in ("data_root", "checkpoint_path", "log_path", "flip_axis", "scale_mode"):
        return value
    try:
        num = float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r}") from exc
    return int(num) if num == int(num) and "." not in value and "e" not in value.lower() else num


def apply_settings(cfg: RunConfig, settings: dict[str, str]) -> RunConfig:
    """Override config fields from string values (file keys or --set flags)."""
    model_updates, run_updates = {}, {}
    for key, raw in settings.items():
        if key in _MODEL_KEYS:
            model_updates[key] = _coerce(key, raw)
        elif key in _RUN_KEYS:
            run_updates[key] = _coerce(key, raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if model_updates:
        run_updates["model"] = replace(cfg.model, **model_updates)
    return replace(cfg, **run_updates)


def _read_pairs(path) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_run_config(path) -> RunConfig:
    pairs = _read_pairs(path)
    cfg = preset(pairs.pop("preset", "desk"))
    return apply_settings(cfg, pairs)


def load_recipe(path):
    from .data import RainRecipe

    pairs = _read_pairs(path)
    kwargs = {}
    for key, value in pairs.items():
        if key == "seed":
            kwargs[key] = int(value)
        elif key == "streak_count":
            kwargs[key] = _parse_tuple(value, int)
        elif key in ("length", "angle", "width", "intensity"):
            kwargs[key] = _parse_tuple(value, float)
        else:
            raise ConfigError(f"unknown recipe key {key!r}")
    return RainRecipe(**kwargs)
