"""Experiment configuration: one JSON file with nested blocks.

Blocks: ``domain`` (kind plus geometry parameters), ``nonlinearity``
(gradient profile kind and parameters), ``solver`` (grid step and
iteration budget), ``scenario`` (subcommand-specific lists: R ladder,
seeds, sharpness H/eps), ``output`` (directory, formats).  Every block
is validated at load time; referenced files must exist.  The raw file
bytes are hashed so reports can embed their provenance.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from .errors import ArgumentError, ConfigError
from .geometry import (DomainSpec, annulus_sector, cube, cube_minus_ball,
                       half_space, lipschitz_graph)
from .grid import GridField, make_disc_grid, make_domain_grid
from .nonlinearity import Nonlinearity, make_nonlinearity

MODULE_VERSION = __version__

DOMAIN_KINDS = ("half_space", "cube", "cube_minus_ball", "annulus_sector",
                "lipschitz_graph", "disc")
PHI_KINDS = ("homogeneous", "linear", "log_model", "tabulated")
OUTPUT_FORMATS = ("json", "csv")

# committed defaults; scenario values omitted from a config fall back here
DEFAULT_SOLVER = {
    "h": 1.0 / 64.0,
    "tol_solve": 1e-7,
    "max_iters": 400_000,
    "dt_factor": 0.25,
}
DEFAULT_SCENARIO = {
    "R": [1.0, 0.5, 0.25],
    "seeds": [0, 1, 2],
    "eps": 0.03,
    "H": [1e4, 1e6],
}


@dataclass(frozen=True)
class ExperimentConfig:
    domain: dict
    nonlinearity: dict
    solver: dict
    scenario: dict
    output: dict
    config_hash: str
    source: str


def _fin(block: dict, key: str, where: str, lo=None, hi=None,
         lo_open=False) -> float:
    try:
        v = float(block[key])
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"{where}.{key} missing or not a number")
    if not math.isfinite(v):
        raise ConfigError(f"{where}.{key} must be finite, got {v}")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(f"{where}.{key} = {v} below the allowed range")
    if hi is not None and v > hi:
        raise ConfigError(f"{where}.{key} = {v} above the allowed range")
    return v


def _pair(block: dict, key: str, where: str) -> tuple:
    v = block.get(key)
    if (not isinstance(v, (list, tuple)) or len(v) != 2
            or not all(isinstance(x, (int, float)) for x in v)):
        raise ConfigError(f"{where}.{key} must be a pair of numbers")
    if not all(math.isfinite(float(x)) for x in v):
        raise ConfigError(f"{where}.{key} must be finite")
    return (float(v[0]), float(v[1]))


def _existing_path(block: dict, key: str, where: str, base: str) -> str:
    p = block.get(key)
    if not isinstance(p, str) or not p:
        raise ConfigError(f"{where}.{key} must be a file path")
    full = p if os.path.isabs(p) else os.path.join(base, p)
    if not os.path.isfile(full):
        raise ConfigError(f"{where}.{key}: no file at {full}")
    return full


def _load_two_column_csv(path: str, where: str) -> tuple:
    try:
        arr = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {path}: {exc}")
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise ConfigError(
            f"{where}: {path} must hold two columns and at least two rows")
    return arr[:, 0].copy(), arr[:, 1].copy()


def _validate_domain(block: dict, base: str) -> dict:
    kind = block.get("kind")
    if kind not in DOMAIN_KINDS:
        raise ConfigError(
            f"domain.kind must be one of {DOMAIN_KINDS}, got {kind!r}")
    out = {"kind": kind}
    if "l" in block:
        out["l"] = _fin(block, "l", "domain", lo=0.0)
    if kind == "lipschitz_graph":
        if "knots" in block:
            path = _existing_path(block, "knots", "domain", base)
            kx, ky = _load_two_column_csv(path, "domain.knots")
            out["knots_x"], out["knots_y"] = list(kx), list(ky)
        elif "knots_x" in block and "knots_y" in block:
            out["knots_x"] = [float(v) for v in block["knots_x"]]
            out["knots_y"] = [float(v) for v in block["knots_y"]]
        else:
            raise ConfigError(
                "domain: lipschitz_graph needs a knots CSV path or inline "
                "knots_x/knots_y lists")
    elif kind == "cube":
        out["lo"] = _pair(block, "lo", "domain") if "lo" in block else (0.0, 0.0)
        out["hi"] = _pair(block, "hi", "domain") if "hi" in block else (1.0, 1.0)
    elif kind == "cube_minus_ball":
        out["lo"] = _pair(block, "lo", "domain")
        out["hi"] = _pair(block, "hi", "domain")
        out["center"] = _pair(block, "center", "domain")
        out["radius"] = _fin(block, "radius", "domain", lo=0.0, lo_open=True)
    elif kind == "annulus_sector":
        out["center"] = _pair(block, "center", "domain") if "center" in block else (0.0, 0.0)
        out["r_in"] = _fin(block, "r_in", "domain", lo=0.0, lo_open=True)
        out["r_out"] = _fin(block, "r_out", "domain", lo=out["r_in"], lo_open=True)
        out["theta0"] = _fin(block, "theta0", "domain") if "theta0" in block else 0.0
        out["theta1"] = _fin(block, "theta1", "domain") if "theta1" in block else 2.0 * math.pi
    elif kind == "disc":
        out["center"] = _pair(block, "center", "domain") if "center" in block else (0.0, 0.0)
        out["radius"] = _fin(block, "radius", "domain", lo=0.0, lo_open=True) if "radius" in block else 1.0
    if "window" in block:
        w = block["window"]
        if not isinstance(w, (list, tuple)) or len(w) != 4:
            raise ConfigError("domain.window must be [x0, x1, y0, y1]")
        x0, x1, y0, y1 = (float(v) for v in w)
        if not (x0 < x1 and y0 < y1):
            raise ConfigError(f"domain.window is empty: {w}")
        out["window"] = (x0, x1, y0, y1)
    if "anchor" in block:
        out["anchor"] = _pair(block, "anchor", "domain")
    return out


def _validate_nonlinearity(block: dict, base: str) -> dict:
    kind = block.get("kind", "homogeneous")
    if kind not in PHI_KINDS:
        raise ConfigError(
            f"nonlinearity.kind must be one of {PHI_KINDS}, got {kind!r}")
    out = {"kind": kind}
    if kind in ("linear", "log_model"):
        out["c"] = _fin(block, "c", "nonlinearity", lo=0.0, lo_open=True) \
            if "c" in block else 1.0
    if kind == "tabulated":
        path = _existing_path(block, "table", "nonlinearity", base)
        t, phi = _load_two_column_csv(path, "nonlinearity.table")
        out["table_t"], out["table_phi"] = list(t), list(phi)
        out["table"] = path
    return out


def _validate_solver(block: dict, domain: dict) -> dict:
    out = dict(DEFAULT_SOLVER)
    if "h" in block:
        out["h"] = _fin(block, "h", "solver", lo=0.0, lo_open=True, hi=0.5)
    if "tol_solve" in block:
        out["tol_solve"] = _fin(block, "tol_solve", "solver", lo=0.0, lo_open=True)
    if "dt_factor" in block:
        out["dt_factor"] = _fin(block, "dt_factor", "solver", lo=0.0,
                                lo_open=True, hi=0.4)
    if "max_iters" in block:
        m = block["max_iters"]
        if not isinstance(m, int) or m < 1:
            raise ConfigError(f"solver.max_iters must be a positive int, got {m!r}")
        out["max_iters"] = m
    # nx/ny are derived from window and h; explicit values must agree
    win = domain.get("window")
    if win is not None:
        h = out["h"]
        nx = int(round((win[1] - win[0]) / h)) + 1
        ny = int(round((win[3] - win[2]) / h)) + 1
        for key, want in (("nx", nx), ("ny", ny)):
            if key in block and int(block[key]) != want:
                raise ConfigError(
                    f"solver.{key} = {block[key]} inconsistent with the "
                    f"window and h (expected {want})")
        out["nx"], out["ny"] = nx, ny
    return out


def _validate_scenario(block: dict) -> dict:
    out = dict(DEFAULT_SCENARIO)
    out.update(block)
    rs = out["R"]
    if not isinstance(rs, (list, tuple)) or not rs:
        raise ConfigError("scenario.R must be a non-empty list")
    for r in rs:
        rv = float(r)
        if not (0.0 < rv <= 1.0) or not math.isfinite(rv):
            raise ConfigError(f"scenario.R entries must lie in (0, 1], got {r}")
    out["R"] = [float(r) for r in rs]
    seeds = out["seeds"]
    if not isinstance(seeds, (list, tuple)) or not seeds:
        raise ConfigError("scenario.seeds must be a non-empty list")
    if not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError(f"scenario.seeds must be non-negative ints, got {seeds}")
    out["seeds"] = list(seeds)
    eps = float(out["eps"])
    if not (0.0 < eps < 0.25):
        raise ConfigError(f"scenario.eps must lie in (0, 1/4), got {eps}")
    out["eps"] = eps
    hs = out["H"]
    if isinstance(hs, (int, float)):
        hs = [hs]
    if not isinstance(hs, (list, tuple)) or not hs:
        raise ConfigError("scenario.H must be a number or non-empty list")
    out["H"] = [float(v) for v in hs]
    for v in out["H"]:
        if not (v >= 1e4):
            raise ConfigError(f"scenario.H entries must be >= 1e4, got {v}")
    return out


def _validate_output(block: dict) -> dict:
    out = {"dir": block.get("dir", "out"), "formats": block.get("formats", ["json"])}
    if not isinstance(out["dir"], str) or not out["dir"]:
        raise ConfigError("output.dir must be a non-empty string")
    fmts = out["formats"]
    if isinstance(fmts, str):
        fmts = [fmts]
    for f in fmts:
        if f not in OUTPUT_FORMATS:
            raise ConfigError(
                f"output.formats entries must come from {OUTPUT_FORMATS}, got {f!r}")
    out["formats"] = list(dict.fromkeys(fmts))
    return out


def load_config(path: str) -> ExperimentConfig:
    """Parse and validate a config file; the hash is over the raw bytes."""
    if not os.path.isfile(path):
        raise ConfigError(f"no config file at {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    digest = hashlib.sha256(raw).hexdigest()
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    known = {"domain", "nonlinearity", "solver", "scenario", "output"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown config blocks: {sorted(extra)}")
    base = os.path.dirname(os.path.abspath(path))
    domain = _validate_domain(data["domain"], base) if "domain" in data else {}
    return ExperimentConfig(
        domain=domain,
        nonlinearity=_validate_nonlinearity(data.get("nonlinearity", {}), base),
        solver=_validate_solver(data.get("solver", {}), domain),
        scenario=_validate_scenario(data.get("scenario", {})),
        output=_validate_output(data.get("output", {})),
        config_hash=digest,
        source=os.path.abspath(path),
    )


# ---------------------------------------------------------------------------
# object construction from validated blocks


def build_domain(cfg: ExperimentConfig) -> DomainSpec:
    d = cfg.domain
    kind = d.get("kind")
    if kind is None:
        raise ConfigError("this subcommand needs a domain block")
    if kind == "half_space":
        return half_space()
    if kind == "lipschitz_graph":
        return lipschitz_graph(d["knots_x"], d["knots_y"])
    if kind == "cube":
        return cube(d["lo"], d["hi"])
    if kind == "cube_minus_ball":
        return cube_minus_ball(d["lo"], d["hi"], d["center"], d["radius"])
    if kind == "annulus_sector":
        return annulus_sector(d["center"], d["r_in"], d["r_out"],
                              d["theta0"], d["theta1"])
    raise ConfigError(f"domain.kind {kind!r} has no boundary-domain geometry; "
                      "disc grids carry no graph boundary")


def build_nonlinearity(cfg: ExperimentConfig) -> Nonlinearity:
    n = cfg.nonlinearity
    kind = n["kind"]
    if kind == "tabulated":
        return make_nonlinearity("tabulated", table_t=n["table_t"],
                                 table_phi=n["table_phi"])
    if kind in ("linear", "log_model"):
        return make_nonlinearity(kind, c=n.get("c", 1.0))
    return make_nonlinearity("homogeneous")


def default_window(cfg: ExperimentConfig) -> tuple:
    d = cfg.domain
    if "window" in d:
        return d["window"]
    kind = d.get("kind")
    if kind == "half_space":
        return (-1.0, 1.0, 0.0, 1.0)
    if kind == "cube":
        lo, hi = d["lo"], d["hi"]
        return (lo[0], hi[0], lo[1], hi[1])
    if kind == "cube_minus_ball":
        lo, hi = d["lo"], d["hi"]
        return (lo[0], hi[0], lo[1], hi[1])
    raise ConfigError(f"domain.kind {kind!r} needs an explicit window")


def build_grid(cfg: ExperimentConfig) -> GridField:
    d = cfg.domain
    h = cfg.solver["h"]
    if d.get("kind") == "disc":
        return make_disc_grid(d["center"], d["radius"], h)
    return make_domain_grid(build_domain(cfg), default_window(cfg), h)


def anchor_point(cfg: ExperimentConfig) -> tuple:
    return cfg.domain.get("anchor", (0.0, 0.0))
