"""Reports: tables, audits and deterministic JSON/CSV emission."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__


@dataclass
class Audit:
    name: str
    passed: bool
    value: Any = None
    threshold: Any = None
    tol: Optional[float] = None
    group: str = ""
    detail: str = ""
    quadrature_limited: bool = False

    def to_dict(self) -> dict:
        return {
            "group": self.group, "name": self.name, "passed": bool(self.passed), "value": self.value,
            "threshold": self.threshold, "tol": self.tol, "detail": self.detail,
            "quadrature_limited": self.quadrature_limited,
        }


@dataclass
class Report:
    experiment: str
    scenario: dict
    seed: int
    tol: float
    tables: dict = field(default_factory=dict)  # name -> list of row dicts
    results: dict = field(default_factory=dict)
    audits: list = field(default_factory=list)
    wall_clock: float = 0.0  # seconds; printed, never written, so files stay reproducible

    def add_table(self, name: str, rows: list, tol: Optional[float] = None) -> None:
        t = self.tol if tol is None else tol
        self.tables[name] = [{"tol": t, **r} for r in rows]

    def audit(self, name: str, passed: bool, value=None, threshold=None, tol=None, **kw) -> Audit:
        a = Audit(name, bool(passed), value, threshold, self.tol if tol is None else tol, **kw)
        self.audits.append(a)
        return a

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.audits)

    @property
    def failed(self) -> list[str]:
        return [(f"{a.group}/" if a.group else "") + a.name for a in self.audits if not a.passed]

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def summary(self) -> dict:
        return {"audits": len(self.audits), "passed": sum(a.passed for a in self.audits),
                "failed": self.failed, "ok": self.passed}

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "version": __version__,
            "seed": self.seed,
            "tol": self.tol,
            "scenario": self.scenario,
            "results": self.results,
            "audits": [a.to_dict() for a in self.audits],
            "summary": self.summary(),
            "tables": sorted(self.tables),
        }

    def to_json(self) -> str:
        return json.dumps(clean(self.to_dict()), sort_keys=True, indent=2) + "\n"

    def table_csv(self, name: str) -> str:
        return to_csv(self.tables[name])

    def write(self, out_dir, prefix: Optional[str] = None) -> list[Path]:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        stem = prefix or self.experiment
        paths = [d / f"{stem}.json"]
        paths[0].write_text(self.to_json())
        for name in sorted(self.tables):
            p = d / f"{stem}_{name}.csv"
            p.write_text(self.table_csv(name))
            paths.append(p)
        return paths

    def text_summary(self) -> str:
        lines = [f"{self.experiment}: {self.summary()['passed']}/{len(self.audits)} audits passed "
                 f"(seed {self.seed}, tol {self.tol:g}, {self.wall_clock:.2f} s)"]
        for a in self.audits:
            tag = "PASS" if a.passed else "FAIL"
            name = (f"{a.group}/" if a.group else "") + a.name
            lines.append(f"  {tag} {name}: value={_short(a.value)} threshold={_short(a.threshold)}"
                         + (f" ({a.detail})" if a.detail else ""))
        return "\n".join(lines)


def _short(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, Fractions to floats,
    non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, Fraction):
        obj = float(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def to_csv(rows: list) -> str:
    cols: list = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(r.get(k)) for k in cols})
    return buf.getvalue()


def _cell(v):
    v = clean(v)
    if v is None:
        return ""
    if isinstance(v, list):
        return " ".join(str(x) for x in v)
    return v
