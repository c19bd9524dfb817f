"""Run configuration and dataset manifest parsing.

The config is a flat KEY=VALUE text file ('#' comments allowed); unknown
keys are rejected so typos fail loudly.  The manifest is line-delimited
JSON, one record per shape: {"id", "mesh", "class", optional "split"}.
Mesh paths are resolved relative to the manifest's directory.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass


class ConfigError(ValueError):
    """Malformed config or manifest."""


@dataclass
class RunConfig:
    # representation
    n: int = 1024
    k: int = 7
    lam: float = 0.1
    fine_tune_steps: int = 1000
    lr: float = 1e-4
    batch: int = 16384
    surface_count: int = 300_000
    near_count: int = 200_000
    near_variance: float = 0.01
    # generation
    sigma: float = 1e-5
    p_uncond: float = 0.1
    omega: float = 0.0
    solver: str = "midpoint"
    solver_steps: int = 50
    fm_steps: int = 2000
    fm_batch: int = 4
    fm_lr: float = 1e-4
    ema_decay: float = 0.999
    model_h: int = 64
    model_layers: int = 2
    model_heads: int = 4
    # evaluation
    grid_res: int = 128
    chamfer_samples: int = 30_000
    metric_points: int = 2048
    seed: int = 0


# 'lambda' is a Python keyword, so the field is 'lam' but the file key
# stays the conventional name.
_KEY_TO_FIELD = {"lambda": "lam"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}
_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_value(field: dataclasses.Field, raw: str, key: str):
    try:
        if field.type == "int":
            return int(raw)
        if field.type == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = dataclasses.replace(base) if base else RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected KEY=VALUE, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        name = _KEY_TO_FIELD.get(key, key)
        if name not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, name, _parse_value(_FIELDS[name], raw, key))
    return cfg


def load_config(path: str, base: RunConfig | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base)


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        key = _FIELD_TO_KEY.get(f.name, f.name)
        lines.append(f"{key} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


def write_effective_config(cfg: RunConfig, out_dir: str) -> str:
    """Echo the effective config (plus tool version) into an output directory."""
    from . import __version__
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# msdf {__version__}\n")
        fh.write(config_to_text(cfg))
    return path


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    mesh: str
    class_id: int
    split: str | None = None


def load_manifest(path: str) -> list[ManifestEntry]:
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            missing = {"id", "mesh", "class"} - rec.keys()
            if missing:
                raise ConfigError(f"{path}:{lineno}: missing fields {sorted(missing)}")
            sid = str(rec["id"])
            if sid in seen:
                raise ConfigError(f"{path}:{lineno}: duplicate id {sid!r}")
            seen.add(sid)
            mesh = rec["mesh"]
            if not os.path.isabs(mesh):
                mesh = os.path.join(base, mesh)
            entries.append(ManifestEntry(sid, mesh, int(rec["class"]),
                                         rec.get("split")))
    if not entries:
        raise ConfigError(f"{path}: empty manifest")
    return entries
