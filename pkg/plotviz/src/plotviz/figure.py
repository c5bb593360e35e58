"""Chart construction: macro AUROC against supplementation ratio.

One figure shows one test set. Every regime present in the input (or
the subset selected in the spec) becomes one line with a shaded
confidence band, and the file's baseline value becomes a horizontal red
rule. Axis limits auto-fit the data with a fixed pad; the legend is
ordered by regime name so repeated renders diff cleanly.
"""

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .reader import SchemaError, read_figure_csv

_Y_PAD = 0.02
_X_PAD_FRACTION = 0.04
BASELINE_COLOR = "#c62828"


@dataclass(frozen=True)
class FigureSpec:
    csv_paths: tuple
    out_path: str
    title: str = ""
    regimes: tuple = ()        # empty means every regime found

    def __post_init__(self):
        paths = tuple(str(p) for p in self.csv_paths)
        if not paths:
            raise ValueError("at least one input CSV is required")
        object.__setattr__(self, "csv_paths", paths)
        object.__setattr__(self, "regimes",
                           tuple(str(r) for r in self.regimes))


def _collect(spec: FigureSpec):
    rows = []
    for path in spec.csv_paths:
        rows.extend(read_figure_csv(path))
    baselines = {r.baseline_auroc for r in rows}
    if len(baselines) != 1:
        raise SchemaError(f"inputs disagree on baseline_auroc: "
                          f"{sorted(baselines)}")
    if spec.regimes:
        present = {r.regime for r in rows}
        missing = [name for name in spec.regimes if name not in present]
        if missing:
            raise SchemaError(f"requested regimes not in the data: {missing}")
        rows = [r for r in rows if r.regime in spec.regimes]
    return rows, baselines.pop()


def build_figure(spec: FigureSpec):
    """The matplotlib Figure for a spec, without writing anything."""
    rows, baseline = _collect(spec)
    by_regime = {}
    for r in rows:
        by_regime.setdefault(r.regime, []).append(r)

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    lo, hi = baseline, baseline
    for name in sorted(by_regime):
        series = sorted(by_regime[name], key=lambda r: r.ratio_percent)
        x = [r.ratio_percent for r in series]
        ax.plot(x, [r.macro_auroc for r in series], marker="o", label=name)
        ax.fill_between(x, [r.ci_lo for r in series],
                        [r.ci_hi for r in series], alpha=0.2)
        lo = min([lo] + [r.ci_lo for r in series])
        hi = max([hi] + [r.ci_hi for r in series])
    ax.axhline(baseline, color=BASELINE_COLOR, linewidth=1.2,
               label=f"baseline ({baseline:.3f})")

    ratios = sorted({r.ratio_percent for r in rows})
    span = max(ratios[-1] - ratios[0], 1)
    ax.set_xlim(ratios[0] - span * _X_PAD_FRACTION,
                ratios[-1] + span * _X_PAD_FRACTION)
    ax.set_ylim(lo - _Y_PAD, hi + _Y_PAD)
    ax.set_xticks(ratios)
    ax.set_xlabel("synthetic supplementation (percent of real)")
    ax.set_ylabel("macro AUROC")
    if spec.title:
        ax.set_title(spec.title)
    ax.grid(True, linewidth=0.3, alpha=0.5)
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    return fig


def render(spec: FigureSpec) -> Path:
    """Write the chart for a spec and return the output path."""
    fig = build_figure(spec)
    out = Path(spec.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.savefig(out)
    finally:
        plt.close(fig)
    return out
