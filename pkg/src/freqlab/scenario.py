"""Scenario files: strict TOML parsing against an explicit schema.

A scenario has four blocks plus two top-level keys::

    seed = 0                # recorded in every output
    tol = 1e-8              # quadrature tolerance
    name = "label"          # optional

    [geometry]              # the graph domain
    [field]                 # the harmonic field
    [experiment]            # kind = whitney|frequency|cascade|doubling|cauchy|verify
    [output]                # dir, prefix

Every key must appear in SCHEMA (or, for the experiment block, in
EXPERIMENT_SCHEMA for the chosen kind, and for cauchy in CAUCHY_MODES for
the chosen mode).  Unknown keys raise ConfigError naming the key and line.
"""
from __future__ import annotations

import copy
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .fields import CatalogField, CatalogTerm, HarmonicField, MFSParams, _parse_name, catalog, mfs_fit
from .geometry import DEFAULT_TOL, GraphDomain, LipschitzGraph

EXPERIMENT_KINDS = ("whitney", "frequency", "cascade", "doubling", "cauchy", "verify")

NUM = (int, float)
LIST = (list,)

# key -> (allowed types, default); a default of None means "optional"
SCHEMA: dict[str, dict[str, tuple]] = {
    "": {
        "seed": ((int,), 0),
        "tol": (NUM, DEFAULT_TOL),
        "name": ((str,), ""),
    },
    "geometry": {
        "n": ((int,), 2),
        "kind": ((str,), "flat"),
        "slope": (NUM, 0.0),
        "period": (NUM, 0.2),
        "phase": (NUM, 0.0),
        "width": (NUM, 0.25),
        "bump_center": (NUM, 0.3),
        "spacing": (NUM, 0.05),
        "half_count": ((int,), 60),
        "grid_seed": ((int,), 0),
        "center": (LIST, None),
        "radius": (NUM, 1.0),
        "box_factor": (NUM, 4.0),
    },
    "field": {
        "kind": ((str,), "catalog"),
        "name": ((str,), "linear"),
        "coef": (NUM, 1.0),
        "axis": ((int,), None),
        "pole": (LIST, None),
        "value": (NUM, None),
        "terms": (LIST, None),
        "target": ((str,), "linear"),
        "n_sources": ((int,), 240),
        "depth": (NUM, 0.1),
        "n_collocation": ((int,), 720),
        "residual_tol": (NUM, 1e-8),
    },
    "output": {
        "dir": ((str,), "out"),
        "prefix": ((str,), None),
    },
}

TERM_SCHEMA = {
    "name": ((str,), None),
    "coef": (NUM, 1.0),
    "axis": ((int,), None),
    "pole": (LIST, None),
    "value": (NUM, None),
}

EXPERIMENT_SCHEMA: dict[str, dict[str, tuple]] = {
    "whitney": {
        "c0": (NUM, 1.0 / 32.0),
        "k_max": ((int,), 9),
        "enforce_separation": ((bool,), True),
        "window_half_width": (NUM, None),
        "generations": ((int,), 4),
        "root_radius": (NUM, 1.0 / 64.0),
        "root_c0": (NUM, 0.25),
        "root_k_max": ((int,), 40),
        "M": (NUM, 1024.0),
    },
    "frequency": {
        "x": (LIST, None),
        "radii": (LIST, None),
        "r_max": (NUM, 1.0),
        "ratio": (NUM, 2.0),
        "count": ((int,), 7),
        "method": ((str,), "fd"),
        "energy": ((str,), "surface"),
        "rho_fd": (NUM, 1e-3),
        "volume": ((bool,), False),
        "expect_F": (NUM, None),
        "expect_tol": (NUM, 1e-6),
        "check_identities": ((bool,), False),
        "check_monotone": ((bool,), False),
    },
    "cascade": {
        "A": (NUM + LIST, 16.0),
        "N0": (NUM, 10.0),
        "K": ((int,), None),
        "j": ((int,), 3),
        "delta0_expected": (NUM, None),
        "levels": ((int,), 1),
        "horizon": ((int,), 0),
        "root_radius": (NUM, 1.0 / 64.0),
        "c0": (NUM, 0.25),
        "k_max": ((int,), 40),
        "M": (NUM, 1024.0),
        "enforce_separation": ((bool,), False),
        "workers": ((int,), 1),
        "stability_factor": (NUM, 2.0),
        "fj": ((bool,), True),
        "mean_tol": (NUM, 1e-12),
        "orth_tol": (NUM, 1e-10),
        "lln_m": ((int,), 1_000_000),
        "lln_seed": ((int,), None),
        "lln_tol": (NUM, 0.01),
    },
    "doubling": {
        "points": ((int,), 20),
        "half_width": (NUM, 0.5),
        "r_max": (NUM, 0.02),
        "ratio": (NUM, 2.0),
        "count": ((int,), 8),
        "N0": (NUM, 10.0),
        "safety": (NUM, 1.0),
        "expect_ratio": (NUM, None),
        "expect_rtol": (NUM, 1e-3),
    },
    "cauchy": {
        "mode": ((str,), "alpha"),
    },
    "verify": {
        "filter": (LIST, None),
    },
}

CAUCHY_MODES: dict[str, dict[str, tuple]] = {
    "alpha": {
        "family": ((str,), "constrained"),
        "eps": (LIST, [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4]),
        "samples": ((int,), 1501),
        "sources": ((int,), None),
        "alpha_range": (LIST, None),
        "r2_min": (NUM, 0.9),
    },
    "flux": {
        "x0": (LIST, None),
        "r": (NUM, 0.3),
        "residual_tol": (NUM, 1e-6),
    },
    "mass": {
        "x0": (LIST, None),
        "radii": (LIST, [0.1, 0.2, 0.4]),
        "window_fraction": (NUM, 1.0),
    },
    "threeball": {
        "x": (LIST, None),
        "r1": (NUM, 0.1),
        "r2": (NUM, 0.4),
        "alpha": (NUM, None),
        "c2_radius": (NUM, 1.0),
    },
    "ratio": {
        "x": (LIST, None),
        "radii": (LIST, [0.02, 0.05, 0.1]),
        "degree": ((int,), None),
        "rtol": (NUM, 1e-3),
    },
}


def schema_document() -> dict:
    """The full schema as plain data (types by name, defaults)."""

    def flat(block):
        return {k: {"types": [t.__name__ for t in ty], "default": d} for k, (ty, d) in block.items()}

    return {
        "top": flat(SCHEMA[""]),
        "geometry": flat(SCHEMA["geometry"]),
        "field": flat(SCHEMA["field"]),
        "field.terms": flat(TERM_SCHEMA),
        "output": flat(SCHEMA["output"]),
        "experiment": {k: flat(v) for k, v in EXPERIMENT_SCHEMA.items()},
        "experiment.cauchy": {k: flat(v) for k, v in CAUCHY_MODES.items()},
    }


# ---------------------------------------------------------------------------
# line lookup


def _line_index(text: str) -> dict:
    """Map (block, key) to the 1-based line where it is assigned."""
    out: dict = {}
    block = ""
    head = re.compile(r"^\s*\[\[?\s*([A-Za-z0-9_.\-]+)\s*\]\]?")
    assign = re.compile(r"""^\s*["']?([A-Za-z0-9_\-]+)["']?\s*=""")
    for i, line in enumerate(text.splitlines(), start=1):
        m = head.match(line)
        if m:
            block = m.group(1)
            out.setdefault((block, None), i)
            continue
        m = assign.match(line)
        if m:
            out.setdefault((block, m.group(1)), i)
    return out


# ---------------------------------------------------------------------------
# the scenario


@dataclass
class Scenario:
    seed: int
    tol: float
    name: str
    geometry: dict
    field: dict
    experiment: dict
    output: dict
    source: str = "<default>"
    lines: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.experiment["kind"]

    def line_of(self, block: str, key: Optional[str] = None) -> Optional[int]:
        return self.lines.get((block, key)) or self.lines.get((block, None))

    def where(self, block: str = "experiment", key: Optional[str] = None) -> str:
        line = self.line_of(block, key)
        return f"{self.source}:{line}" if line else self.source

    def echo(self) -> dict:
        return {
            "seed": self.seed, "tol": self.tol, "name": self.name,
            "geometry": copy.deepcopy(self.geometry), "field": copy.deepcopy(self.field),
            "experiment": copy.deepcopy(self.experiment), "output": copy.deepcopy(self.output),
        }

    # builders -------------------------------------------------------------

    def build_domain(self) -> GraphDomain:
        g = self.geometry
        n, kind = g["n"], g["kind"]
        try:
            if kind == "flat":
                graph = LipschitzGraph.flat(n)
            elif kind == "ramp":
                graph = LipschitzGraph.ramp(n, g["slope"])
            elif kind == "sawtooth":
                graph = LipschitzGraph.sawtooth(n, g["slope"], g["period"], g["phase"])
            elif kind == "bump":
                graph = LipschitzGraph.bump(n, g["slope"], g["width"], g["bump_center"])
            elif kind == "grid":
                graph = LipschitzGraph.random_grid(n, g["slope"], g["spacing"], g["half_count"], g["grid_seed"])
            else:
                raise ConfigError(f"{self.where('geometry', 'kind')}: unknown geometry kind {kind!r}")
            center = None if g["center"] is None else tuple(float(v) for v in g["center"])
            return GraphDomain(graph, center, float(g["radius"]), float(g["box_factor"]))
        except ValueError as exc:
            raise ConfigError(f"{self.where('geometry')}: {exc}") from None

    def build_field(self, domain: Optional[GraphDomain]) -> HarmonicField:
        f = self.field
        n = self.geometry["n"]
        if f["kind"] == "catalog":
            terms = f["terms"] if f["terms"] is not None else [
                {k: f[k] for k in TERM_SCHEMA}
            ]
            out = []
            for t in terms:
                base, params = _parse_name(t["name"])
                for k in ("axis", "pole", "value"):
                    if t.get(k) is not None:
                        params[k] = tuple(t[k]) if k == "pole" else t[k]
                out.append(CatalogTerm(float(t.get("coef", 1.0)), base, tuple(sorted(params.items()))))
            try:
                return CatalogField(n, out, domain)
            except ValueError as exc:
                raise ConfigError(f"{self.where('field')}: {exc}") from None
        if f["kind"] == "fitted":
            if domain is None:
                raise ConfigError(f"{self.where('field', 'kind')}: fitted fields need a domain")
            target = catalog(f["target"], n, domain)
            params = MFSParams(n_sources=f["n_sources"], depth=float(f["depth"]),
                               n_collocation=f["n_collocation"], residual_tol=float(f["residual_tol"]))
            return mfs_fit(domain, lambda x: target.raw(x)[0], params)
        raise ConfigError(f"{self.where('field', 'kind')}: field kind must be 'catalog' or 'fitted'")


def _check_block(data: dict, schema: dict, block: str, lines: dict, source: str) -> dict:
    out = {}
    for key, val in data.items():
        if key not in schema:
            line = lines.get((block, key))
            loc = f"{source}:{line}" if line else source
            where = f"[{block}]" if block else "top level"
            raise ConfigError(f"{loc}: unknown key {key!r} in {where}")
        types, _ = schema[key]
        ok = isinstance(val, types) and not (isinstance(val, bool) and bool not in types)
        if not ok:
            line = lines.get((block, key))
            loc = f"{source}:{line}" if line else source
            names = "/".join(t.__name__ for t in types)
            raise ConfigError(f"{loc}: key {key!r} must be {names}, got {type(val).__name__}")
        out[key] = val
    for key, (_, default) in schema.items():
        out.setdefault(key, copy.deepcopy(default))
    return out


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _line_index(text)
    blocks = ("geometry", "field", "experiment", "output")
    top = {k: v for k, v in data.items() if k not in blocks}
    top = _check_block(top, SCHEMA[""], "", lines, source)
    if "experiment" not in data:
        raise ConfigError(f"{source}: missing [experiment] block")
    for b in blocks:
        if b in data and not isinstance(data[b], dict):
            raise ConfigError(f"{source}: {b} must be a table")
    geo = _check_block(data.get("geometry", {}), SCHEMA["geometry"], "geometry", lines, source)
    fld = _check_block(data.get("field", {}), SCHEMA["field"], "field", lines, source)
    out = _check_block(data.get("output", {}), SCHEMA["output"], "output", lines, source)

    exp = dict(data["experiment"])
    kind = exp.pop("kind", None)
    if kind not in EXPERIMENT_KINDS:
        line = lines.get(("experiment", "kind")) or lines.get(("experiment", None))
        raise ConfigError(f"{source}:{line}: experiment kind must be one of {', '.join(EXPERIMENT_KINDS)}")
    schema = dict(EXPERIMENT_SCHEMA[kind])
    if kind == "cauchy":
        mode = exp.get("mode", "alpha")
        if mode not in CAUCHY_MODES:
            line = lines.get(("experiment", "mode"))
            raise ConfigError(f"{source}:{line}: cauchy mode must be one of {', '.join(CAUCHY_MODES)}")
        schema.update(CAUCHY_MODES[mode])
    exp = _check_block(exp, schema, "experiment", lines, source)
    exp["kind"] = kind

    if fld["terms"] is not None:
        checked = []
        for t in fld["terms"]:
            if not isinstance(t, dict):
                raise ConfigError(f"{source}: field.terms entries must be tables")
            t = _check_block(t, TERM_SCHEMA, "field.terms", lines, source)
            if t["name"] is None:
                raise ConfigError(f"{source}: every field term needs a name")
            checked.append(t)
        fld["terms"] = checked
    if geo["n"] not in (2, 3):
        raise ConfigError(f"{source}:{lines.get(('geometry', 'n'))}: n must be 2 or 3")
    if top["tol"] <= 0:
        raise ConfigError(f"{source}:{lines.get(('', 'tol'))}: tol must be positive")
    return Scenario(int(top["seed"]), float(top["tol"]), top["name"], geo, fld, exp, out, source, lines)


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    return parse_scenario(text, str(p))


# ---------------------------------------------------------------------------
# defaults used when a subcommand runs without --scenario

DEFAULT_SCENARIOS = {
    "whitney": """
[geometry]
kind = "flat"
[experiment]
kind = "whitney"
""",
    "frequency": """
[geometry]
kind = "flat"
[field]
name = "linear"
[experiment]
kind = "frequency"
r_max = 1.0
count = 7
expect_F = 2.0
""",
    "cascade": """
[geometry]
kind = "flat"
box_factor = 8.0
[field]
name = "odd-harmonic-8"
[experiment]
kind = "cascade"
A = [16.0, 64.0]
levels = 2
delta0_expected = 0.125
lln_m = 1000000
lln_seed = 42
""",
    "doubling": """
[geometry]
kind = "flat"
[field]
name = "linear"
[experiment]
kind = "doubling"
expect_ratio = 144.0
""",
    "cauchy": """
[geometry]
n = 2
[experiment]
kind = "cauchy"
mode = "alpha"
family = "constrained"
""",
    "verify": """
[experiment]
kind = "verify"
""",
}


def default_scenario(kind: str) -> Scenario:
    if kind not in DEFAULT_SCENARIOS:
        raise ConfigError(f"no default scenario for {kind!r}")
    return parse_scenario(DEFAULT_SCENARIOS[kind], f"<default {kind}>")
