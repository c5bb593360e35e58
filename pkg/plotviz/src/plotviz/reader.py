"""Reader for the harness figure CSVs.

The documented schema is one header line

    ratio_percent,regime,macro_auroc,ci_lo,ci_hi,baseline_auroc

followed by one row per (regime, ratio) cell: the ratio as a
non-negative integer percent, a non-empty regime name, then four floats
in [0, 1] with ci_lo <= ci_hi. The baseline column repeats one value on
every row of a file. This module only reads; no metric is ever
recomputed here.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

EXPECTED_HEADER = ("ratio_percent", "regime", "macro_auroc",
                   "ci_lo", "ci_hi", "baseline_auroc")


class SchemaError(ValueError):
    """The file does not match the documented figure-CSV schema."""


@dataclass(frozen=True)
class FigureRow:
    ratio_percent: int
    regime: str
    macro_auroc: float
    ci_lo: float
    ci_hi: float
    baseline_auroc: float


def _parse_fraction(text: str, column: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(f"{where}: {column} {text!r} is not a number") from None
    if not 0.0 <= value <= 1.0:
        raise SchemaError(f"{where}: {column} {value} outside [0, 1]")
    return value


def _parse_row(raw: list, where: str) -> FigureRow:
    if len(raw) != len(EXPECTED_HEADER):
        raise SchemaError(f"{where}: expected {len(EXPECTED_HEADER)} columns, "
                          f"got {len(raw)}")
    try:
        ratio = int(raw[0])
    except ValueError:
        raise SchemaError(f"{where}: ratio_percent {raw[0]!r} is not an "
                          f"integer") from None
    if ratio < 0:
        raise SchemaError(f"{where}: ratio_percent {ratio} is negative")
    regime = raw[1].strip()
    if not regime:
        raise SchemaError(f"{where}: empty regime name")
    macro = _parse_fraction(raw[2], "macro_auroc", where)
    lo = _parse_fraction(raw[3], "ci_lo", where)
    hi = _parse_fraction(raw[4], "ci_hi", where)
    baseline = _parse_fraction(raw[5], "baseline_auroc", where)
    if lo > hi:
        raise SchemaError(f"{where}: ci_lo {lo} exceeds ci_hi {hi}")
    return FigureRow(ratio_percent=ratio, regime=regime, macro_auroc=macro,
                     ci_lo=lo, ci_hi=hi, baseline_auroc=baseline)


def read_figure_csv(path) -> list:
    """Parse one figure CSV into FigureRows, validating as it goes."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != EXPECTED_HEADER:
            raise SchemaError(f"{path}: header {header!r} does not match "
                              f"{','.join(EXPECTED_HEADER)!r}")
        rows = [_parse_row(raw, f"{path}:{i}")
                for i, raw in enumerate(reader, start=2) if raw]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    baselines = {r.baseline_auroc for r in rows}
    if len(baselines) != 1:
        raise SchemaError(f"{path}: baseline_auroc varies across rows "
                          f"({sorted(baselines)})")
    seen = set()
    for r in rows:
        key = (r.regime, r.ratio_percent)
        if key in seen:
            raise SchemaError(f"{path}: duplicate row for regime "
                              f"{r.regime!r} at ratio {r.ratio_percent}")
        seen.add(key)
    return rows
