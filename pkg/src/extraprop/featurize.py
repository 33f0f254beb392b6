"""Composition featurization and feature scaling.

Formula strings are parsed into element->count maps, turned into fixed-length
vectors of stoichiometry-weighted statistics over a shipped elemental-property
table, and scaled with one of three schemes:

* ``standard``  -- per-column z-score fitted on training rows, followed by
  row-wise L2 normalization (solids scheme),
* ``minmax``    -- per-column min/max rescaling with NaN cells mapped to a
  fill constant, default -1 (experimental-benchmark scheme),
* ``none``      -- identity, for inputs that arrive pre-scaled.

The elemental table is a declared interface: any CSV with a ``symbol`` column
followed by numeric property columns (empty cell = unknown) is accepted.
"""

import csv
import hashlib
import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DimensionError, FeaturizeError, FormulaError, ScalerError

CompositionMap = dict[str, float]

STAT_NAMES = ("wmean", "sum", "min", "max", "range", "avgdev")


# ---------------------------------------------------------------------------
# Elemental property table


@dataclass(frozen=True)
class ElementTable:
    symbols: list[str]
    property_names: list[str]
    values: np.ndarray  # (n_elements, P), NaN = unknown

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def row(self, symbol: str) -> np.ndarray:
        try:
            return self.values[self._index[symbol]]
        except KeyError:
            raise FeaturizeError(f"element {symbol!r} not in property table") from None

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    @classmethod
    def from_csv(cls, path: str | Path) -> "ElementTable":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "symbol":
                raise FeaturizeError(f"element table {path}: first column must be 'symbol'")
            names = header[1:]
            symbols, rows = [], []
            for row in reader:
                symbols.append(row[0])
                rows.append([float(c) if c != "" else math.nan for c in row[1:]])
        return cls(symbols=symbols, property_names=names, values=np.asarray(rows, dtype=np.float64))


@lru_cache(maxsize=1)
def default_table() -> ElementTable:
    with resources.as_file(resources.files("extraprop.data") / "elements.csv") as p:
        return ElementTable.from_csv(p)


# ---------------------------------------------------------------------------
# Formula parsing

_SYMBOL = re.compile(r"[A-Z][a-z]?")
_NUMBER = re.compile(r"\d+\.?\d*|\.\d+")


def parse_formula(formula: str, known: set[str] | None = None) -> CompositionMap:
    """Parse a chemical formula into an element -> count map.

    Supports nested parenthesized groups with multipliers and decimal counts:
    ``"B4ReU"`` -> ``{"B": 4, "Re": 1, "U": 1}``; ``"Ca(OH)2"`` ->
    ``{"Ca": 1, "O": 2, "H": 2}``. Counts of repeated elements are summed.
    Raises FormulaError with a character offset on bad input.
    """
    if known is None:
        known = set(default_table().symbols)
    if not formula:
        raise FormulaError("empty formula", 0)

    pos = 0
    n = len(formula)

    def parse_group(depth: int) -> CompositionMap:
        nonlocal pos
        out: CompositionMap = {}
        while pos < n:
            ch = formula[pos]
            if ch == "(":
                open_at = pos
                pos += 1
                inner = parse_group(depth + 1)
                if pos >= n or formula[pos] != ")":
                    raise FormulaError("unclosed parenthesis", open_at)
                pos += 1
                mult = parse_count(default=1.0)
                for sym, cnt in inner.items():
                    out[sym] = out.get(sym, 0.0) + cnt * mult
            elif ch == ")":
                if depth == 0:
                    raise FormulaError("unmatched ')'", pos)
                return out
            else:
                m = _SYMBOL.match(formula, pos)
                if not m:
                    raise FormulaError(f"unexpected character {ch!r}", pos)
                sym = m.group()
                if sym not in known:
                    raise FormulaError(f"unknown element symbol {sym!r}", pos)
                pos = m.end()
                cnt = parse_count(default=1.0)
                out[sym] = out.get(sym, 0.0) + cnt
        return out

    def parse_count(default: float) -> float:
        nonlocal pos
        m = _NUMBER.match(formula, pos)
        if not m:
            return default
        value = float(m.group())
        if value <= 0:
            raise FormulaError(f"count must be positive, got {m.group()}", pos)
        pos = m.end()
        return value

    comp = parse_group(0)
    if pos != n:
        raise FormulaError("trailing input", pos)
    if not comp:
        raise FormulaError("formula contains no elements", 0)
    return comp


def canonical_composition(comp: CompositionMap) -> tuple[tuple[str, float], ...]:
    """Canonical key for composition equality.

    Symbols sorted alphabetically; integral counts reduced by their GCD,
    otherwise counts normalized to fractions summing to 1 (rounded to 12
    decimals to absorb float noise).
    """
    items = sorted(comp.items())
    counts = [c for _, c in items]
    if all(float(c).is_integer() for c in counts):
        g = math.gcd(*(int(c) for c in counts))
        return tuple((s, float(int(c) // g)) for (s, _), c in zip(items, counts))
    total = sum(counts)
    return tuple((s, round(c / total, 12)) for s, c in items)


# ---------------------------------------------------------------------------
# Composition statistics

def composition_features(comp: CompositionMap, table: ElementTable) -> np.ndarray:
    """Vector of six statistics per elemental property (length 6 * P).

    With fractions w_i = count_i / sum(count), per property: fraction-weighted
    mean, count-weighted sum, min, max, range, and fraction-weighted average
    deviation from the mean. NaN elemental entries propagate NaN into the six
    statistics of the affected property only.
    """
    rows = np.stack([table.row(sym) for sym in comp])  # (m, P)
    counts = np.asarray(list(comp.values()), dtype=np.float64)
    fracs = counts / counts.sum()

    wmean = fracs @ rows
    total = counts @ rows
    with np.errstate(invalid="ignore"):
        pmin = rows.min(axis=0)
        pmax = rows.max(axis=0)
        prange = pmax - pmin
        avgdev = fracs @ np.abs(rows - wmean)

    feats = np.stack([wmean, total, pmin, pmax, prange, avgdev], axis=1)  # (P, 6)
    return feats.reshape(-1)


def feature_names(table: ElementTable) -> list[str]:
    return [f"{prop}_{stat}" for prop in table.property_names for stat in STAT_NAMES]


def featurize_formulas(formulas: list[str], table: ElementTable | None = None) -> np.ndarray:
    table = table or default_table()
    return np.stack([composition_features(parse_formula(f, set(table.symbols)), table) for f in formulas])


# ---------------------------------------------------------------------------
# Scaling


@dataclass(frozen=True)
class ScalerState:
    """Fitted per-column statistics; frozen after fit_scaler.

    ``zero_var`` marks columns mapped to constant 0 (no spread in training
    data); ``all_nan`` marks columns with no training data at all, which
    always transform to ``nan_fill``.
    """

    kind: str  # "standard" (z-score + row L2 normalize) | "minmax" | "none"
    n_features: int
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    data_min: np.ndarray | None = None
    data_max: np.ndarray | None = None
    zero_var: np.ndarray | None = None
    all_nan: np.ndarray | None = None
    nan_fill: float = 0.0

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else [repr(float(v)) if not isinstance(v, (bool, np.bool_)) else bool(v) for v in a]

        return {
            "kind": self.kind,
            "n_features": self.n_features,
            "mean": arr(self.mean),
            "std": arr(self.std),
            "data_min": arr(self.data_min),
            "data_max": arr(self.data_max),
            "zero_var": None if self.zero_var is None else [bool(v) for v in self.zero_var],
            "all_nan": None if self.all_nan is None else [bool(v) for v in self.all_nan],
            "nan_fill": self.nan_fill,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerState":
        def arr(v):
            return None if v is None else np.array([float(x) for x in v], dtype=np.float64)

        def barr(v):
            return None if v is None else np.array(v, dtype=bool)

        return cls(
            kind=d["kind"],
            n_features=d["n_features"],
            mean=arr(d["mean"]),
            std=arr(d["std"]),
            data_min=arr(d["data_min"]),
            data_max=arr(d["data_max"]),
            zero_var=barr(d["zero_var"]),
            all_nan=barr(d["all_nan"]),
            nan_fill=d["nan_fill"],
        )


def fit_scaler(X: np.ndarray, kind: str = "standard", nan_fill: float | None = None) -> ScalerState:
    """Fit per-column statistics on the training matrix only.

    ``standard`` uses the population convention (divide by n) over non-NaN
    entries. Zero-variance columns are flagged and transform to 0.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ScalerError("expected a 2-d feature matrix")
    d = X.shape[1]

    if kind == "none":
        return ScalerState(kind="none", n_features=d)

    present = ~np.isnan(X)
    counts = present.sum(axis=0)
    all_nan = counts == 0

    if kind == "standard":
        fill = 0.0 if nan_fill is None else nan_fill
        safe = np.where(present, X, 0.0)
        n = np.maximum(counts, 1)
        mean = safe.sum(axis=0) / n
        var = (np.where(present, (X - mean) ** 2, 0.0)).sum(axis=0) / n
        std = np.sqrt(var)
        zero_var = (std == 0.0) & ~all_nan
        mean = np.where(all_nan, 0.0, mean)
        std = np.where(zero_var | all_nan, 1.0, std)
        return ScalerState(kind="standard", n_features=d, mean=mean, std=std,
                           zero_var=zero_var, all_nan=all_nan, nan_fill=fill)

    if kind == "minmax":
        fill = -1.0 if nan_fill is None else nan_fill
        big = np.where(present, X, np.inf)
        small = np.where(present, X, -np.inf)
        lo = np.where(all_nan, 0.0, big.min(axis=0))
        hi = np.where(all_nan, 0.0, small.max(axis=0))
        zero_var = (hi == lo) & ~all_nan
        return ScalerState(kind="minmax", n_features=d, data_min=lo, data_max=hi,
                           zero_var=zero_var, all_nan=all_nan, nan_fill=fill)

    raise ScalerError(f"unknown scaler kind {kind!r}")


def transform(X: np.ndarray, scaler: ScalerState) -> np.ndarray:
    """Apply a fitted scaler; never mutates ``scaler`` or ``X``."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != scaler.n_features:
        raise DimensionError(f"feature dimension {X.shape[1]} != scaler dimension {scaler.n_features}")

    if scaler.kind == "none":
        out = X.copy()
    elif scaler.kind == "standard":
        out = (X - scaler.mean) / scaler.std
        out[:, scaler.zero_var] = 0.0
        out[np.isnan(out)] = scaler.nan_fill
        out[:, scaler.all_nan] = scaler.nan_fill
        norms = np.sqrt((out ** 2).sum(axis=1, keepdims=True))
        np.divide(out, norms, out=out, where=norms > 0)
    elif scaler.kind == "minmax":
        span = np.where(scaler.zero_var | scaler.all_nan, 1.0, scaler.data_max - scaler.data_min)
        out = (X - scaler.data_min) / span
        out[:, scaler.zero_var] = 0.0
        out[np.isnan(out)] = scaler.nan_fill
        out[:, scaler.all_nan] = scaler.nan_fill
    else:
        raise ScalerError(f"unknown scaler kind {scaler.kind!r}")
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Optional top-k feature selection by normalized mutual information


def nmi_scores(X: np.ndarray, y: np.ndarray, bins: int = 16) -> np.ndarray:
    """Normalized mutual information of each column with the target.

    Both sides are discretized into equal-frequency bins (NaN gets its own
    bin); NMI = MI / sqrt(Hx * Hy), 0 when either entropy vanishes.
    """

    def discretize(v: np.ndarray) -> np.ndarray:
        lab = np.zeros(len(v), dtype=np.int64)
        ok = ~np.isnan(v)
        if ok.any():
            qs = np.quantile(v[ok], np.linspace(0, 1, bins + 1)[1:-1])
            lab[ok] = 1 + np.searchsorted(qs, v[ok], side="right")
        return lab

    def entropy(p: np.ndarray) -> float:
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())

    ylab = discretize(np.asarray(y, dtype=np.float64))
    ny = ylab.max() + 1
    py = np.bincount(ylab, minlength=ny) / len(ylab)
    hy = entropy(py)

    scores = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        xlab = discretize(X[:, j])
        nx = xlab.max() + 1
        joint = np.bincount(xlab * ny + ylab, minlength=nx * ny).reshape(nx, ny) / len(xlab)
        px = joint.sum(axis=1)
        hx = entropy(px)
        if hx == 0.0 or hy == 0.0:
            continue
        mi = hx + hy - entropy(joint.reshape(-1))
        scores[j] = max(0.0, mi) / math.sqrt(hx * hy)
    return scores


def nmi_top_k(X: np.ndarray, y: np.ndarray, k: int, bins: int = 16) -> np.ndarray:
    """Indices (ascending) of the k columns with highest NMI against y."""
    scores = nmi_scores(X, y, bins=bins)
    order = sorted(range(X.shape[1]), key=lambda j: (-scores[j], j))[:k]
    return np.array(sorted(order), dtype=np.int64)


# ---------------------------------------------------------------------------
# Feature cache CSV (id column + feature columns; bit-exact round trip)


def save_feature_cache(path: str | Path, ids: list[str], X: np.ndarray,
                       names: list[str], fingerprint: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if fingerprint:
            fh.write(f"# config_fingerprint={fingerprint}\n")
        w = csv.writer(fh)
        w.writerow(["id"] + list(names))
        for rid, row in zip(ids, X):
            w.writerow([rid] + ["" if math.isnan(v) else repr(float(v)) for v in row])


def load_feature_cache(path: str | Path) -> tuple[list[str], np.ndarray, list[str], str | None]:
    """Returns (ids, X, feature_names, embedded_fingerprint_or_None)."""
    fingerprint = None
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if first.startswith("#"):
            m = re.search(r"config_fingerprint=(\w+)", first)
            fingerprint = m.group(1) if m else None
            header_line = fh.readline()
        else:
            header_line = first
        header = next(csv.reader([header_line]))
        names = header[1:]
        ids, rows = [], []
        for row in csv.reader(fh):
            ids.append(row[0])
            rows.append([float(c) if c != "" else math.nan for c in row[1:]])
    X = np.asarray(rows, dtype=np.float64).reshape(len(ids), len(names))
    return ids, X, names, fingerprint
