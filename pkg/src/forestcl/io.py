"""Census tables and event logs as CSV.

Census files have the header ``tree_id,species,x,y,mark,census`` with one row
per tree per census. Lines starting with ``#`` are provenance comments. An
empty ``mark`` field (or ``NA``) is a missing mark.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import CensusSeries, PointPattern, Window
from .errors import DataError

__all__ = ["CENSUS_COLUMNS", "EVENT_COLUMNS", "read_census_csv", "write_census_csv", "write_events_csv", "count_table"]

CENSUS_COLUMNS = ("tree_id", "species", "x", "y", "mark", "census")
EVENT_COLUMNS = ("rep", "census", "species", "event", "tree_id", "x", "y", "mark")
_MISSING = ("", "na", "nan")


def _provenance(fh, provenance: Mapping | None):
    for k, v in (provenance or {}).items():
        fh.write(f"# {k}: {v}\n")


def _rows(path):
    with open(path, newline="") as fh:
        lines = ((n, line) for n, line in enumerate(fh, 1) if not line.startswith("#"))
        numbered = list(lines)
    reader = csv.reader(line for _, line in numbered)
    for (lineno, _), row in zip(numbered, reader):
        yield lineno, row


def read_census_csv(path, window: Window, n_species: int | None = None,
                    species_map: Mapping[str, int] | None = None, allow_missing_marks: bool = True) -> CensusSeries:
    """Parse a census table into a :class:`CensusSeries`.

    Parameters
    ----------
    window : Window
        Every location must lie inside it; offenders are listed in the error.
    n_species : int, optional
        Number of species patterns per census (default: largest label).
    species_map : mapping, optional
        Translates non-numeric species labels to ``1..p``.
    allow_missing_marks : bool
        When false a missing mark is a data error.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"census file {path} not found")
    rows = _rows(path)
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    if tuple(h.strip() for h in header) != CENSUS_COLUMNS:
        raise DataError(f"{path}:{lineno}: header must be {','.join(CENSUS_COLUMNS)}")

    seen: dict[tuple[int, int], int] = {}
    recs = []
    for lineno, row in rows:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CENSUS_COLUMNS):
            raise DataError(f"{path}:{lineno}: expected {len(CENSUS_COLUMNS)} fields, got {len(row)}")
        tid, sp, x, y, m, k = (c.strip() for c in row)
        try:
            tid_i = int(tid)
            k_i = int(k)
            if species_map is not None and sp in species_map:
                sp_i = int(species_map[sp])
            else:
                sp_i = int(sp)
            xf, yf = float(x), float(y)
            mf = math.nan if m.lower() in _MISSING else float(m)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if tid_i < 0:
            raise DataError(f"{path}:{lineno}: tree ids must be non-negative")
        if k_i < 0:
            raise DataError(f"{path}:{lineno}: census index must be non-negative")
        if sp_i < 1:
            raise DataError(f"{path}:{lineno}: species labels start at 1")
        if math.isnan(mf) and not allow_missing_marks:
            raise DataError(f"{path}:{lineno}: missing mark for tree {tid_i}")
        if not math.isnan(mf) and mf <= 0:
            raise DataError(f"{path}:{lineno}: mark must be positive")
        key = (tid_i, k_i)
        if key in seen:
            raise DataError(f"{path}:{lineno}: duplicate tree {tid_i} in census {k_i} (first seen on line {seen[key]})")
        seen[key] = lineno
        recs.append((lineno, tid_i, sp_i, xf, yf, mf, k_i))

    if not recs:
        raise DataError(f"{path}: no census rows")
    xy = np.array([[r[3], r[4]] for r in recs])
    outside = ~window.contains(xy)
    if outside.any():
        bad = [f"tree {r[1]} census {r[6]} (line {r[0]})" for r, o in zip(recs, outside) if o]
        raise DataError(f"{len(bad)} row(s) outside window {window.as_tuple()}: " + "; ".join(bad[:20]))

    K = max(r[6] for r in recs)
    p = max(r[2] for r in recs) if n_species is None else n_species
    if any(r[2] > p for r in recs):
        raise DataError(f"species label above {p}")
    groups: dict[tuple[int, int], list] = defaultdict(list)
    for r in recs:
        groups[(r[6], r[2])].append(r)
    snapshots = []
    for k in range(K + 1):
        snap = []
        for s in range(1, p + 1):
            g = groups.get((k, s), [])
            if not g:
                snap.append(PointPattern.empty(window))
                continue
            snap.append(PointPattern(
                window, [[r[3], r[4]] for r in g], [r[5] for r in g], [r[1] for r in g], s,
            ))
        snapshots.append(tuple(snap))
    return CensusSeries(window, tuple(snapshots), {"source": str(path)})


def write_census_csv(series: CensusSeries, path, provenance: Mapping | None = None) -> None:
    """Write a series so that :func:`read_census_csv` reproduces it exactly."""
    with open(path, "w", newline="") as fh:
        _provenance(fh, provenance)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CENSUS_COLUMNS)
        for k, snap in enumerate(series.snapshots):
            for pat in snap:
                for i, (x, y), m, s in zip(pat.ids, pat.xy, pat.marks, pat.species):
                    w.writerow([int(i), int(s), repr(float(x)), repr(float(y)),
                                "" if np.isnan(m) else repr(float(m)), k])


def write_events_csv(events: Iterable[Mapping], path, provenance: Mapping | None = None) -> None:
    with open(path, "w", newline="") as fh:
        _provenance(fh, provenance)
        w = csv.DictWriter(fh, fieldnames=EVENT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for e in events:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in e.items()})


def count_table(series: CensusSeries) -> list[dict]:
    """Trees, recruits and deaths per census and species."""
    rows = []
    for s in range(1, series.n_species + 1):
        for r in series.counts(s):
            rows.append({"species": s, "census": r["census"], "trees": r["trees"],
                         "recruits": r.get("recruits", ""), "deaths": r.get("deaths", "")})
    return rows
