"""Flat key=value run configuration.

Grammar: UTF-8 text, one ``key = value`` pair per line, ``#`` starts a
comment, blank lines ignored, unknown keys rejected. The key set is fixed:

====================  =======================================================
key                   value
====================  =======================================================
voxel_path            path to the voxel cell file (required)
task                  homogenize | solve | verify
formulation           displacement | stress-uzawa | strain
macro_kind            strain | stress        (task = solve only)
macro_value           6 reals, Mandel order  (task = solve only)
lattice               9 reals: generators g1 g2 g3, concatenated
tol                   relative solver tolerance, default 1e-9
max_iter              iteration cap, default 10000
uzawa_step            positive real or AUTO
output_dir            artifact directory, default "."
seed                  integer seed for randomized probes, default 0
====================  =======================================================
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ParseError(ValueError):
    """Malformed config text; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(ValueError):
    """Config parsed but a field is invalid; carries the field name."""

    def __init__(self, fld: str, message: str):
        super().__init__(f"{fld}: {message}")
        self.field = fld


TASKS = ("homogenize", "solve", "verify")
FORMULATIONS = ("displacement", "stress-uzawa", "strain")

_KEYS = ("voxel_path", "task", "formulation", "macro_kind", "macro_value",
         "lattice", "tol", "max_iter", "uzawa_step", "output_dir", "seed")


@dataclass
class RunConfig:
    voxel_path: str
    task: str = "homogenize"
    formulation: str = "displacement"
    macro_kind: str | None = None
    macro_value: np.ndarray | None = None
    lattice: np.ndarray = field(default_factory=lambda: np.eye(3).ravel())
    tol: float = 1e-9
    max_iter: int = 10000
    uzawa_step: float | str = "auto"
    output_dir: str = "."
    seed: int = 0


def _floats(fld: str, text: str, count: int) -> np.ndarray:
    try:
        vals = np.array([float(t) for t in text.split()])
    except ValueError as exc:
        raise ValidationError(fld, f"expected {count} reals: {exc}") from exc
    if vals.size != count:
        raise ValidationError(fld, f"expected {count} reals, got {vals.size}")
    return vals


def parse_config(text: str) -> RunConfig:
    """Parse and validate a run configuration."""
    pairs: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(lineno, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ParseError(lineno, f"unknown key {key!r}")
        if key in pairs:
            raise ParseError(lineno, f"duplicate key {key!r}")
        if not value:
            raise ParseError(lineno, f"empty value for {key!r}")
        pairs[key] = value

    if "voxel_path" not in pairs:
        raise ValidationError("voxel_path", "required")
    cfg = RunConfig(voxel_path=pairs.pop("voxel_path"))

    if "task" in pairs:
        cfg.task = pairs.pop("task")
        if cfg.task not in TASKS:
            raise ValidationError("task", f"must be one of {TASKS}")
    if "formulation" in pairs:
        cfg.formulation = pairs.pop("formulation")
        if cfg.formulation not in FORMULATIONS:
            raise ValidationError("formulation", f"must be one of {FORMULATIONS}")
    if "macro_kind" in pairs:
        cfg.macro_kind = pairs.pop("macro_kind")
        if cfg.macro_kind not in ("strain", "stress"):
            raise ValidationError("macro_kind", "must be 'strain' or 'stress'")
    if "macro_value" in pairs:
        cfg.macro_value = _floats("macro_value", pairs.pop("macro_value"), 6)
    if "lattice" in pairs:
        cfg.lattice = _floats("lattice", pairs.pop("lattice"), 9)
        if abs(np.linalg.det(cfg.lattice.reshape(3, 3).T)) <= 0.0:
            raise ValidationError("lattice", "generators must be independent")
    if "tol" in pairs:
        try:
            cfg.tol = float(pairs.pop("tol"))
        except ValueError as exc:
            raise ValidationError("tol", str(exc)) from exc
        if not cfg.tol > 0.0:
            raise ValidationError("tol", "must be positive")
    if "max_iter" in pairs:
        try:
            cfg.max_iter = int(pairs.pop("max_iter"))
        except ValueError as exc:
            raise ValidationError("max_iter", str(exc)) from exc
        if cfg.max_iter < 1:
            raise ValidationError("max_iter", "must be at least 1")
    if "uzawa_step" in pairs:
        raw = pairs.pop("uzawa_step")
        if raw.upper() == "AUTO":
            cfg.uzawa_step = "auto"
        else:
            try:
                cfg.uzawa_step = float(raw)
            except ValueError as exc:
                raise ValidationError("uzawa_step", str(exc)) from exc
            if not cfg.uzawa_step > 0.0:
                raise ValidationError("uzawa_step", "must be positive or AUTO")
    if "output_dir" in pairs:
        cfg.output_dir = pairs.pop("output_dir")
    if "seed" in pairs:
        try:
            cfg.seed = int(pairs.pop("seed"))
        except ValueError as exc:
            raise ValidationError("seed", str(exc)) from exc
    assert not pairs

    # task-dependent field requirements: exactly what the task needs
    if cfg.task == "solve":
        if cfg.macro_kind is None:
            raise ValidationError("macro_kind", "required when task = solve")
        if cfg.macro_value is None:
            raise ValidationError("macro_value", "required when task = solve")
        if cfg.formulation == "stress-uzawa" and cfg.macro_kind != "stress":
            raise ValidationError(
                "macro_kind", "stress-uzawa formulation solves a stress datum")
    else:
        if cfg.macro_kind is not None or cfg.macro_value is not None:
            raise ValidationError(
                "macro_value", f"not accepted when task = {cfg.task}")
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
