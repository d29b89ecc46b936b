"""Experiment configuration: strict key=value text files.

Format: UTF-8 lines of ``key = value``; blank lines and ``#`` comments
ignored.  Unknown keys are fatal, as are values that fail their declared
type — archived configs must resolve unambiguously.

Schema (key: type — meaning):
    experiment:   str    one of EXPERIMENTS (may come from the CLI instead)
    manifold:     str    cylinder | slab3d | disk
    length, circumference, side1, side2, radius: float  descriptor sizes
    nx, ny, nz, nr, na:  int    mesh resolution per descriptor
    resolutions:  int list      refinement sweep (experiment-dependent axis)
    times:        float list    time grid
    t_final:      float  flow horizon
    seeds:        int list      seed batch
    seed:         int    single-seed experiments / stream base
    group:        str    U1 | SU2
    bc:           str    Relative | Absolute
    amplitude:    float  random-connection amplitude
    r:            float  ball radius / flow horizon parameter
    radii:        float list    radius sweep for stability studies
    y:            float list    start/center point in chart coordinates
    s0:           float  expectation-functional total time
    n_paths:      int    Monte Carlo path count
    dt:           float  step size override
    kappa_grid:   float list    exit-tail grid
    out:          str    output directory
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield
from pathlib import Path
from typing import Optional

EXPERIMENTS = ("lyh-sharp", "lyh-fit", "doubling", "kernel-decay", "ym-flow",
               "boundary-sign", "int-parts", "zeta", "monotonicity",
               "bochner", "exit-tail", "dist-lemma", "rbm-kernel")


class ConfigError(ValueError):
    pass


def _float_list(s):
    return [float(v) for v in s.replace(",", " ").split()]


def _int_list(s):
    return [int(v) for v in s.replace(",", " ").split()]


_SCHEMA = {
    "experiment": str,
    "manifold": str,
    "length": float,
    "circumference": float,
    "side1": float,
    "side2": float,
    "radius": float,
    "nx": int, "ny": int, "nz": int, "nr": int, "na": int,
    "resolutions": _int_list,
    "times": _float_list,
    "t_final": float,
    "seeds": _int_list,
    "seed": int,
    "group": str,
    "bc": str,
    "amplitude": float,
    "r": float,
    "radii": _float_list,
    "y": _float_list,
    "s0": float,
    "n_paths": int,
    "dt": float,
    "kappa_grid": _float_list,
    "out": str,
}

_CHOICES = {
    "experiment": EXPERIMENTS,
    "manifold": ("cylinder", "slab3d", "disk"),
    "group": ("U1", "SU2"),
    "bc": ("Relative", "Absolute"),
}


@dataclass
class ExperimentConfig:
    experiment: Optional[str] = None
    values: dict = dfield(default_factory=dict)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def __getitem__(self, key):
        return self.values[key]

    def __contains__(self, key):
        return key in self.values

    def resolved_text(self) -> str:
        lines = [f"experiment = {self.experiment}"]
        for k in sorted(self.values):
            if k == "experiment":
                continue
            v = self.values[k]
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', "
                              f"got {raw!r}")
        key, _, val = (p.strip() for p in line.partition("="))
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _SCHEMA[key](val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for "
                              f"{key!r}: {exc}") from None
        if key in _CHOICES and values[key] not in _CHOICES[key]:
            raise ConfigError(f"{source}:{lineno}: {key!r} must be one of "
                              f"{_CHOICES[key]}, got {values[key]!r}")
    return ExperimentConfig(values.get("experiment"), values)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    return parse_config_text(p.read_text(), source=str(p))


def build_descriptor(cfg: ExperimentConfig, resolution: Optional[int] = None):
    """Mesh descriptor from config keys; ``resolution`` overrides the
    per-axis counts uniformly (used by refinement sweeps)."""
    from flowlab.geometry import FlatCylinder, FlatSlab3D, FlatDisk
    kind = cfg.get("manifold", "cylinder")
    if kind == "cylinder":
        n = resolution or cfg.get("nx", 32)
        return FlatCylinder(cfg.get("length", 1.0),
                            cfg.get("circumference", 1.0),
                            n, resolution or cfg.get("ny", n))
    if kind == "slab3d":
        n = resolution or cfg.get("nx", 16)
        return FlatSlab3D(cfg.get("length", 1.0), cfg.get("side1", 1.0),
                          cfg.get("side2", 1.0), n,
                          resolution or cfg.get("ny", n),
                          resolution or cfg.get("nz", n))
    if kind == "disk":
        nr = resolution or cfg.get("nr", 16)
        return FlatDisk(cfg.get("radius", 1.0), nr,
                        (resolution * 3 if resolution else cfg.get("na",
                                                                   3 * nr)))
    raise ConfigError(f"unknown manifold {kind!r}")
