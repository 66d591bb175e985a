"""Residual reports: the unit of output for every verification suite."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

from .errors import GeoloopError

log = logging.getLogger("geoloop")


@dataclass
class Entry:
    id: str
    anchor: str
    residual: Optional[float]
    tol: float
    passed: bool
    meta: dict = field(default_factory=dict)

    @classmethod
    def make(cls, id, anchor, residual, tol, meta=None):
        ok = residual is not None and math.isfinite(residual) and residual <= tol
        res = None if residual is None or not math.isfinite(residual) else float(residual)
        return cls(id, anchor, res, float(tol), ok, dict(meta or {}))

    def to_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


@dataclass
class ResidualReport:
    suite: str
    entries: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    elapsed_s: float = 0.0

    def add(self, id, anchor, residual, tol, meta=None):
        entry = Entry.make(id, anchor, residual, tol, meta)
        self.entries.append(entry)
        log.info("%s %s residual=%s tol=%g", "PASS" if entry.passed else "FAIL", id, entry.residual, tol)
        return entry

    def run(self, id, anchor, tol, fn: Callable[[], float], meta=None):
        """Record ``fn()`` as a residual; numerical failures become failed entries."""
        try:
            return self.add(id, anchor, fn(), tol, meta)
        except GeoloopError as exc:
            return self.add(id, anchor, None, tol, {**(meta or {}), "error": str(exc)})

    def extend(self, other: "ResidualReport"):
        self.entries.extend(other.entries)

    def sorted(self):
        self.entries.sort(key=lambda e: e.id)
        return self

    def __getitem__(self, id):
        for e in self.entries:
            if e.id == id:
                return e
        raise KeyError(id)

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def to_dict(self):
        return {
            "suite": self.suite,
            "config": self.config,
            "entries": [e.to_dict() for e in self.entries],
            "elapsed_s": self.elapsed_s,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        entries = [Entry(e["id"], e["anchor"], e["residual"], e["tol"], e["pass"], e["meta"]) for e in d["entries"]]
        return cls(d["suite"], entries, d["config"], d["elapsed_s"])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "anchor", "residual", "tol", "pass", "meta"])
        for e in self.entries:
            w.writerow([e.id, e.anchor, fmt(e.residual), fmt(e.tol), "true" if e.passed else "false",
                        json.dumps(e.meta, sort_keys=True)])
        return buf.getvalue()


def fmt(x):
    """17 significant digits, locale independent; empty for missing values."""
    if x is None:
        return ""
    return format(float(x), ".17g")
