"""Result profiling, correlation, transformation, and visualization hints.

Operates on small immutable tables loaded from the canonical result format
(CSV plus a JSON sidecar manifest). Everything here is a pure function:
the same table and the same transformation profile always produce the same
output, which is what makes saved profiles replayable.
"""

from __future__ import annotations

import ast
import csv
import io
import json
import math
import random
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    EmptyTable,
    FormulaParseError,
    NotEnoughNumericColumns,
    OutOfRange,
    UnknownVariable,
)

#: Row cap above which profiling/correlation work on a uniform sample.
DEFAULT_SAMPLE_CAP = 100_000

MISSING = ""  # canonical missing-value encoding in CSV


class ColType(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    TEMPORAL = "temporal"
    GEOSPATIAL = "geospatial"


@dataclass(frozen=True)
class ResultTable:
    name: str
    columns: tuple[tuple[str, ColType], ...]
    rows: tuple[tuple, ...]  # cell values: float | str | None

    def __post_init__(self):
        names = [c for c, _ in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names")

    @property
    def row_count(self) -> int:
        return len(self.rows)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.columns)

    def col_type(self, name: str) -> ColType:
        for c, t in self.columns:
            if c == name:
                return t
        raise UnknownVariable(f"no column named {name!r}")

    def column(self, name: str) -> list:
        idx = self._index(name)
        return [row[idx] for row in self.rows]

    def _index(self, name: str) -> int:
        for i, (c, _) in enumerate(self.columns):
            if c == name:
                return i
        raise UnknownVariable(f"no column named {name!r}")

    def numeric_columns(self) -> list[str]:
        return [c for c, t in self.columns if t is ColType.NUMERIC]


# -- construction and canonical serialization ---------------------------------

def _parse_number(text: str) -> Optional[float]:
    try:
        value = float(text)
    except (TypeError, ValueError):
        return None
    return value if math.isfinite(value) else None

def _parse_temporal(text: str) -> bool:
    try:
        datetime.fromisoformat(text.replace("Z", "+00:00"))
        return True
    except (TypeError, ValueError):
        return False


_LAT_NAMES = {"lat", "latitude"}
_LON_NAMES = {"lon", "lng", "long", "longitude"}


def infer_types(header: Sequence[str], raw_rows: Sequence[Sequence[str]],
                threshold: float = 0.95) -> list[ColType]:
    """Numeric/temporal if >= 95% of non-missing cells parse; lat/lon pairs
    within range are promoted to geospatial; everything else is categorical."""
    types: list[ColType] = []
    for i, _ in enumerate(header):
        cells = [row[i] for row in raw_rows if i < len(row) and row[i] != MISSING]
        if not cells:
            types.append(ColType.CATEGORICAL)
            continue
        numeric = sum(1 for c in cells if _parse_number(c) is not None)
        if numeric / len(cells) >= threshold:
            types.append(ColType.NUMERIC)
            continue
        temporal = sum(1 for c in cells if _parse_temporal(c))
        if temporal / len(cells) >= threshold:
            types.append(ColType.TEMPORAL)
        else:
            types.append(ColType.CATEGORICAL)

    lower = [h.lower() for h in header]
    lat_idx = [i for i, h in enumerate(lower) if h in _LAT_NAMES]
    lon_idx = [i for i, h in enumerate(lower) if h in _LON_NAMES]
    if lat_idx and lon_idx:
        for idx, (low, high) in ((lat_idx[0], (-90, 90)), (lon_idx[0], (-180, 180))):
            if types[idx] is not ColType.NUMERIC:
                return types
            values = [_parse_number(row[idx]) for row in raw_rows
                      if idx < len(row) and row[idx] != MISSING]
            if not all(v is not None and low <= v <= high for v in values):
                return types
        types[lat_idx[0]] = ColType.GEOSPATIAL
        types[lon_idx[0]] = ColType.GEOSPATIAL
    return types


def table_from_csv(data: bytes, name: str = "result",
                   manifest: Optional[dict] = None) -> ResultTable:
    """Load the canonical format; without a manifest, types are inferred."""
    text = data.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyTable("no header row") from None
    raw_rows = [row for row in reader]
    if manifest and "columns" in manifest:
        declared = manifest["columns"]
        types = [ColType(declared[h]) for h in header]
    else:
        types = infer_types(header, raw_rows)

    rows = []
    for raw in raw_rows:
        row = []
        for i, ctype in enumerate(types):
            cell = raw[i] if i < len(raw) else MISSING
            if cell == MISSING:
                row.append(None)
            elif ctype in (ColType.NUMERIC, ColType.GEOSPATIAL):
                row.append(_parse_number(cell))
            else:
                row.append(cell)
        rows.append(tuple(row))
    return ResultTable(name=name, columns=tuple(zip(header, types)), rows=tuple(rows))


def table_to_csv(table: ResultTable) -> tuple[bytes, dict]:
    """Canonical CSV bytes plus the sidecar manifest."""
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.column_names)
    for row in table.rows:
        writer.writerow([MISSING if v is None else v for v in row])
    manifest = {
        "columns": {c: t.value for c, t in table.columns},
        "row_count": table.row_count,
        "missing": MISSING,
    }
    return buf.getvalue().encode("utf-8"), manifest


def sample_capped(table: ResultTable, cap: int = DEFAULT_SAMPLE_CAP) -> tuple[ResultTable, int]:
    """Uniform row sample for large results; sample size is reported back."""
    if table.row_count <= cap:
        return table, table.row_count
    rng = random.Random(0x5EED)
    idx = sorted(rng.sample(range(table.row_count), cap))
    rows = tuple(table.rows[i] for i in idx)
    return ResultTable(table.name, table.columns, rows), cap


# -- variable profiles --------------------------------------------------------

@dataclass(frozen=True)
class NumericStats:
    min: float
    max: float
    mean: float
    std: float


@dataclass(frozen=True)
class CategoricalStats:
    distinct_count: int
    frequencies: dict


@dataclass(frozen=True)
class VariableProfile:
    name: str
    col_type: ColType
    missing_count: int
    numeric: Optional[NumericStats] = None
    categorical: Optional[CategoricalStats] = None

    def to_dict(self) -> dict:
        out = {"name": self.name, "type": self.col_type.value,
               "missing_count": self.missing_count}
        if self.numeric:
            out["stats"] = {"min": self.numeric.min, "max": self.numeric.max,
                            "mean": self.numeric.mean, "std": self.numeric.std}
        if self.categorical:
            out["stats"] = {"distinct_count": self.categorical.distinct_count,
                            "frequencies": self.categorical.frequencies}
        return out


def profile(table: ResultTable) -> list[VariableProfile]:
    """One profile per column; numeric stats use the population std."""
    if table.row_count == 0:
        raise EmptyTable("cannot profile a table with no rows")
    profiles = []
    for name, ctype in table.columns:
        values = table.column(name)
        missing = sum(1 for v in values if v is None)
        present = [v for v in values if v is not None]
        if ctype in (ColType.NUMERIC, ColType.GEOSPATIAL):
            stats = None
            if present:
                arr = np.asarray(present, dtype=float)
                stats = NumericStats(min=float(arr.min()), max=float(arr.max()),
                                     mean=float(arr.mean()), std=float(arr.std()))
            profiles.append(VariableProfile(name, ctype, missing, numeric=stats))
        else:
            freq: dict = {}
            for v in present:
                freq[v] = freq.get(v, 0) + 1
            profiles.append(VariableProfile(
                name, ctype, missing,
                categorical=CategoricalStats(distinct_count=len(freq), frequencies=freq)))
    return profiles


# -- correlation matrix -------------------------------------------------------

@dataclass(frozen=True)
class CorrelationMatrix:
    """Strictly-lower-triangular Pearson matrix over the numeric columns.

    ``entries[(i, j)]`` with i > j holds r for (variables[i], variables[j]);
    ``None`` marks an undefined pair (zero variance or too few paired rows).
    """

    variables: tuple[str, ...]
    entries: dict

    def get(self, a: str, b: str) -> Optional[float]:
        i, j = self.variables.index(a), self.variables.index(b)
        if i == j:
            return 1.0
        if i < j:
            i, j = j, i
        return self.entries[(i, j)]


def correlations(table: ResultTable) -> CorrelationMatrix:
    """Pairwise-complete Pearson r for every numeric column pair."""
    names = table.numeric_columns()
    if len(names) < 2:
        raise NotEnoughNumericColumns(f"need >= 2 numeric columns, have {len(names)}")
    cols = {}
    for name in names:
        cols[name] = np.array([np.nan if v is None else v for v in table.column(name)],
                              dtype=float)
    entries: dict = {}
    for i in range(1, len(names)):
        for j in range(i):
            x, y = cols[names[i]], cols[names[j]]
            mask = np.isfinite(x) & np.isfinite(y)
            entries[(i, j)] = _pearson(x[mask], y[mask])
    return CorrelationMatrix(variables=tuple(names), entries=entries)


def _pearson(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    if x.size < 2:
        return None
    dx, dy = x - x.mean(), y - y.mean()
    sx = float(np.sqrt(np.mean(dx * dx)))
    sy = float(np.sqrt(np.mean(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        return None  # undefined, not a number
    r = float(np.mean(dx * dy) / (sx * sy))
    return max(-1.0, min(1.0, r))


# -- color scale --------------------------------------------------------------

RED_ANCHOR = (215.0, 48.0, 39.0)
YELLOW_ANCHOR = (255.0, 255.0, 191.0)
GREEN_ANCHOR = (26.0, 152.0, 80.0)


def color_for(r: float) -> tuple[float, float, float]:
    """Diverging red(-1) -> yellow(0) -> green(+1), linear per component."""
    if not (-1.0 <= r <= 1.0):
        raise OutOfRange(f"correlation {r} outside [-1, 1]")
    if r < 0:
        lo, hi, t = RED_ANCHOR, YELLOW_ANCHOR, r + 1.0
    else:
        lo, hi, t = YELLOW_ANCHOR, GREEN_ANCHOR, r
    return tuple(a + (b - a) * t for a, b in zip(lo, hi))


def css_color(rgb: tuple[float, float, float]) -> str:
    return "rgb({},{},{})".format(*(round(c) for c in rgb))


# -- classification against user thresholds -----------------------------------

@dataclass(frozen=True)
class CorrelationThresholds:
    good: float = 0.7
    moderate: float = 0.4

    def __post_init__(self):
        if not (0 < self.moderate < self.good <= 1):
            raise ValueError("need 0 < moderate < good <= 1")


def classify_correlation(r: float, thresholds: CorrelationThresholds) -> str:
    strength = abs(r)
    if strength >= thresholds.good:
        return "good"
    if strength >= thresholds.moderate:
        return "moderate"
    return "poor"


# -- transformation profiles --------------------------------------------------

@dataclass(frozen=True)
class ScaleAction:
    var: str
    factor: Union[float, str]  # number, or "standardize"


@dataclass(frozen=True)
class SummarizeAction:
    var: str
    stat: str  # min | max | mean | std


@dataclass(frozen=True)
class FormulaAction:
    new_var: str
    expression: str


Transform = Union[ScaleAction, SummarizeAction, FormulaAction]


@dataclass(frozen=True)
class TransformationProfile:
    """A replayable list of transform actions plus exploration thresholds."""

    name: str
    actions: tuple = ()
    thresholds: CorrelationThresholds = CorrelationThresholds()
    std_bounds: Optional[tuple[float, float]] = None
    unique_value_bounds: Optional[tuple[int, int]] = None

    @classmethod
    def from_dict(cls, data: dict) -> "TransformationProfile":
        actions = []
        for item in data.get("actions", ()):
            kind = item.get("kind")
            if kind == "scale":
                actions.append(ScaleAction(item["var"], item["factor"]))
            elif kind == "summarize":
                actions.append(SummarizeAction(item["var"], item["stat"]))
            elif kind == "formula":
                actions.append(FormulaAction(item["new_var"], item["expression"]))
            else:
                raise FormulaParseError(f"unknown action kind {kind!r}")
        thr = data.get("thresholds") or {}
        return cls(
            name=data.get("name", "unnamed"),
            actions=tuple(actions),
            thresholds=CorrelationThresholds(thr.get("good", 0.7), thr.get("moderate", 0.4)),
            std_bounds=tuple(data["std_bounds"]) if data.get("std_bounds") else None,
            unique_value_bounds=(tuple(data["unique_value_bounds"])
                                 if data.get("unique_value_bounds") else None),
        )


def apply_transforms(table: ResultTable, tprofile: TransformationProfile) -> ResultTable:
    """Replay the profile's actions in order. Rows hit by a division by zero
    are flagged missing rather than erroring the whole table."""
    out = table
    for action in tprofile.actions:
        if isinstance(action, ScaleAction):
            out = _apply_scale(out, action)
        elif isinstance(action, SummarizeAction):
            out = _apply_summarize(out, action)
        elif isinstance(action, FormulaAction):
            out = _apply_formula(out, action)
        else:
            raise FormulaParseError(f"unknown action {action!r}")
    return out


def _numeric_values(table: ResultTable, var: str) -> list:
    if var not in table.column_names:
        raise UnknownVariable(f"no column named {var!r}")
    if table.col_type(var) is not ColType.NUMERIC:
        raise UnknownVariable(f"column {var!r} is not numeric")
    return table.column(var)


def _replace_column(table: ResultTable, var: str, values: list) -> ResultTable:
    idx = table._index(var)
    rows = tuple(row[:idx] + (values[k],) + row[idx + 1:]
                 for k, row in enumerate(table.rows))
    return ResultTable(table.name, table.columns, rows)


def _append_column(table: ResultTable, var: str, ctype: ColType, values: list) -> ResultTable:
    if var in table.column_names:
        return _replace_column(table, var, values)
    rows = tuple(row + (values[k],) for k, row in enumerate(table.rows))
    return ResultTable(table.name, table.columns + ((var, ctype),), rows)


def _apply_scale(table: ResultTable, action: ScaleAction) -> ResultTable:
    values = _numeric_values(table, action.var)
    if action.factor == "standardize":
        present = np.asarray([v for v in values if v is not None], dtype=float)
        if present.size == 0:
            return table
        mean, std = float(present.mean()), float(present.std())
        if std == 0.0:
            scaled = [None for _ in values]  # constant column: division by zero
        else:
            scaled = [None if v is None else (v - mean) / std for v in values]
    else:
        factor = float(action.factor)
        scaled = [None if v is None else v * factor for v in values]
    return _replace_column(table, action.var, scaled)


def _apply_summarize(table: ResultTable, action: SummarizeAction) -> ResultTable:
    values = _numeric_values(table, action.var)
    present = np.asarray([v for v in values if v is not None], dtype=float)
    if action.stat not in ("min", "max", "mean", "std"):
        raise FormulaParseError(f"unknown summary statistic {action.stat!r}")
    if present.size == 0:
        scalar = None
    else:
        scalar = float(getattr(present, action.stat)())
    new_name = f"{action.var}_{action.stat}"
    return _append_column(table, new_name, ColType.NUMERIC,
                          [scalar] * table.row_count)


_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div)


def _compile_formula(expression: str, known: Sequence[str]):
    """Restricted arithmetic over column names; anything else is rejected."""
    try:
        tree = ast.parse(expression, mode="eval")
    except SyntaxError as exc:
        raise FormulaParseError(f"cannot parse {expression!r}: {exc.msg}") from None

    names: set[str] = set()

    def check(node: ast.AST) -> None:
        if isinstance(node, ast.Expression):
            check(node.body)
        elif isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
            check(node.left)
            check(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            check(node.operand)
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            pass
        elif isinstance(node, ast.Name):
            names.add(node.id)
        else:
            raise FormulaParseError(
                f"unsupported construct {type(node).__name__} in {expression!r}")

    check(tree)
    for name in names:
        if name not in known:
            raise UnknownVariable(f"formula references unknown column {name!r}")
    return tree, names


def _apply_formula(table: ResultTable, action: FormulaAction) -> ResultTable:
    tree, names = _compile_formula(action.expression, table.column_names)
    for name in names:
        if table.col_type(name) is not ColType.NUMERIC:
            raise UnknownVariable(f"column {name!r} is not numeric")
    indices = {name: table._index(name) for name in names}

    def eval_node(node: ast.AST, row: tuple):
        if isinstance(node, ast.Expression):
            return eval_node(node.body, row)
        if isinstance(node, ast.BinOp):
            left = eval_node(node.left, row)
            right = eval_node(node.right, row)
            if left is None or right is None:
                return None
            if isinstance(node.op, ast.Add):
                return left + right
            if isinstance(node.op, ast.Sub):
                return left - right
            if isinstance(node.op, ast.Mult):
                return left * right
            if right == 0:
                return None  # division by zero: flag the row missing
            return left / right
        if isinstance(node, ast.UnaryOp):
            value = eval_node(node.operand, row)
            if value is None:
                return None
            return -value if isinstance(node.op, ast.USub) else value
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return row[indices[node.id]]
        raise FormulaParseError(f"unsupported node {type(node).__name__}")

    values = [eval_node(tree, row) for row in table.rows]
    return _append_column(table, action.new_var, ColType.NUMERIC, values)


# -- visualization recommendation ---------------------------------------------

#: The built-in visualization palette.
PALETTE = ("line", "scatter", "parallel_coordinates", "box", "heat_map",
           "map", "bar", "tabular")


@dataclass(frozen=True)
class VisualizationRecommendation:
    kind: str
    variables: tuple[str, ...] = ()
    reason: str = ""


def recommend(profiles: Sequence[VariableProfile],
              selection: Optional[Sequence[str]] = None) -> list[VisualizationRecommendation]:
    """Ordered suggestions from the type/format mapping table; tabular always
    closes the list as the fallback."""
    if not profiles:
        raise EmptyTable("no profiles to recommend from")
    by_name = {p.name: p for p in profiles}
    out: list[VisualizationRecommendation] = []
    seen: set[tuple] = set()

    def add(kind: str, variables: tuple[str, ...], reason: str) -> None:
        key = (kind, variables)
        if key not in seen:
            seen.add(key)
            out.append(VisualizationRecommendation(kind, variables, reason))

    numeric = [p.name for p in profiles if p.col_type is ColType.NUMERIC]
    temporal = [p.name for p in profiles if p.col_type is ColType.TEMPORAL]
    categorical = [p.name for p in profiles if p.col_type is ColType.CATEGORICAL]
    geospatial = [p.name for p in profiles if p.col_type is ColType.GEOSPATIAL]

    if selection:
        unknown = [s for s in selection if s not in by_name]
        if unknown:
            raise UnknownVariable(f"selection names unknown columns {unknown}")
        sel_types = sorted(by_name[s].col_type.value for s in selection)
        sel = tuple(selection)
        if sel_types == ["numeric", "numeric"]:
            add("scatter", sel, "two numeric variables")
        elif sel_types == ["categorical"]:
            add("bar", sel, "frequency distribution of one categorical variable")
        elif sel_types == ["categorical", "numeric"]:
            add("box", sel, "numeric spread per category")
            add("bar", sel, "aggregate per category")
        elif sel_types == ["numeric", "temporal"]:
            add("line", sel, "numeric variable over time")
        elif sel_types == ["geospatial", "geospatial"]:
            add("map", sel, "coordinate pair")
        elif sel_types == ["numeric"]:
            add("box", sel, "distribution of one numeric variable")

    if len(geospatial) >= 2:
        add("map", tuple(geospatial[:2]), "geospatial coordinates present")
    if len(numeric) >= 2:
        add("heat_map", tuple(numeric), "correlation matrix over numeric variables")
    if len(numeric) >= 4:
        add("parallel_coordinates", tuple(numeric), "four or more numeric variables")
    if len(numeric) >= 2:
        add("scatter", tuple(numeric[:2]), "numeric pair")
    if temporal and numeric:
        add("line", (temporal[0], numeric[0]), "time axis available")
    if categorical and numeric:
        add("box", (categorical[0], numeric[0]), "numeric spread per category")
    if categorical:
        add("bar", (categorical[0],), "categorical frequencies")

    add("tabular", tuple(p.name for p in profiles), "always-available fallback")
    return out
