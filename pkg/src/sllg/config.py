"""Flat key-value experiment configuration.

The format is deliberately minimal for reproducibility: one ``section.key =
value`` per line, ``#`` comments, values being booleans, numbers, number
lists, or bare strings. Spatial profiles come from a small named table
(constant, sine, tanh-wall) instead of expression evaluation.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .fields import Grid1D, SphereField, normalize_rows
from .noise import NoiseShape
from .params import AnisotropyParams
from .spde import SolverConfig


class ConfigError(ValueError):
    """The configuration file is malformed or inconsistent."""


def _parse_value(token: str):
    token = token.strip()
    low = token.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    parts = token.split()
    if len(parts) > 1:
        try:
            return [float(p) for p in parts]
        except ValueError:
            return token
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token


def parse_config_text(text: str) -> dict:
    """Parse ``section.key = value`` lines into a flat dict."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key or "." not in key:
            raise ConfigError(f"line {lineno}: keys must be dotted, got {key!r}")
        out[key] = _parse_value(value)
    return out


def load_config(path) -> dict:
    with open(path, "r") as fh:
        return parse_config_text(fh.read())


def config_hash(cfg: dict) -> str:
    """Order-independent SHA-256 of the canonicalized key-value pairs."""
    canon = "\n".join(f"{k}={cfg[k]!r}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode()).hexdigest()


def get(cfg: dict, key: str, default=None, required: bool = False):
    if key in cfg:
        return cfg[key]
    if required:
        raise ConfigError(f"missing required key {key!r}")
    return default


# -- model objects from a config ---------------------------------------------

def build_grid(cfg: dict) -> Grid1D:
    try:
        return Grid1D(
            n_points=int(get(cfg, "grid.n_points", required=True)),
            length=float(get(cfg, "grid.length", required=True)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_params(cfg: dict) -> AnisotropyParams:
    a = get(cfg, "params.A", [0.0] * 9)
    b = get(cfg, "params.b", [0.0] * 3)
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size != 9:
        raise ConfigError("params.A must have 9 row-major entries")
    if b.size != 3:
        raise ConfigError("params.b must have 3 entries")
    try:
        return AnisotropyParams(
            lam1=float(get(cfg, "params.lam1", 0.0)),
            lam2=float(get(cfg, "params.lam2", 1.0)),
            A=a.reshape(3, 3),
            b=b,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


PROFILES = ("constant", "sine", "tanh-wall")


def profile_samples(name: str, grid: Grid1D, amplitude: float = 1.0) -> np.ndarray:
    """Scalar spatial profile sampled on the grid nodes."""
    x = grid.x
    if name == "constant":
        f = np.ones_like(x)
    elif name == "sine":
        f = np.sin(np.pi * x / grid.length)
    elif name == "tanh-wall":
        f = np.tanh((x - 0.5 * grid.length) / (0.1 * grid.length))
    else:
        raise ConfigError(f"unknown profile {name!r}; choose from {PROFILES}")
    return amplitude * f


def build_noise(cfg: dict, grid: Grid1D) -> NoiseShape | None:
    tag = str(get(cfg, "noise.shape", "B"))
    if tag == "none":
        return None
    if tag not in ("A", "B"):
        raise ConfigError(f"noise.shape must be A, B or none, got {tag!r}")
    profile = profile_samples(
        str(get(cfg, "noise.profile", "constant")),
        grid,
        float(get(cfg, "noise.amplitude", 1.0)),
    )
    if tag == "B":
        return NoiseShape("B", profile)
    direction = np.asarray(get(cfg, "noise.direction", [0.0, 0.0, 1.0]), dtype=float)
    if direction.size != 3 or not np.linalg.norm(direction) > 0:
        raise ConfigError("noise.direction must be a nonzero 3-vector")
    direction = direction / np.linalg.norm(direction)
    return NoiseShape("A", profile[:, None] * direction[None, :])


def build_solver(cfg: dict) -> SolverConfig:
    try:
        return SolverConfig(
            dt=float(get(cfg, "solver.dt", required=True)),
            scheme=str(get(cfg, "solver.scheme", "strang_rotation")),
            renormalize_after_drift=bool(get(cfg, "solver.renormalize", True)),
            cfl_safety=float(get(cfg, "solver.safety", 0.5)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


INITIAL_FIELDS = ("constant", "cos-sin", "tilted-wave")


def build_initial(cfg: dict, grid: Grid1D) -> SphereField:
    """Initial sphere field from the named table."""
    kind = str(get(cfg, "run.initial", "constant"))
    x = grid.x
    if kind == "constant":
        direction = np.asarray(
            get(cfg, "run.initial_direction", [0.0, 0.0, 1.0]), dtype=float
        )
        if direction.size != 3 or not np.linalg.norm(direction) > 0:
            raise ConfigError("run.initial_direction must be a nonzero 3-vector")
        return SphereField.constant(grid, direction)
    if kind == "cos-sin":
        k = float(get(cfg, "run.initial_wavenumber", 1.0))
        vals = np.stack([np.cos(k * x), np.sin(k * x), np.zeros_like(x)], axis=-1)
        return SphereField(grid, vals)
    if kind == "tilted-wave":
        amp = float(get(cfg, "run.initial_amplitude", 0.5))
        k = float(get(cfg, "run.initial_wavenumber", 1.0))
        raw = np.stack([
            amp * np.cos(np.pi * k * x / grid.length),
            amp * np.sin(np.pi * k * x / grid.length),
            np.ones_like(x),
        ], axis=-1)
        return SphereField(grid, normalize_rows(raw))
    raise ConfigError(f"unknown initial field {kind!r}; choose from {INITIAL_FIELDS}")
