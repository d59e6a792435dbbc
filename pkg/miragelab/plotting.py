"""SVG charts of experiment CSVs.

``histogram_overlay`` draws one miss-count distribution per condition, from a per-trial template
store, a template summary (normal curves) or a covert-channel report. ``line_sweep`` draws
first-spill throws against ball count from a bucket-and-ball sweep, or SAE counts against extra
ways from an SAE sweep. Identical inputs render to byte-identical files.
"""

import logging
from enum import Enum
from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy import stats  # noqa: E402

from .core import FrozenModel  # noqa: E402
from .errors import PlotSchemaError  # noqa: E402
from .utils import read_csv  # noqa: E402

logger = logging.getLogger(__name__)

SVG_RC = {"svg.hashsalt": "miragelab", "svg.fonttype": "path"}

Rows = list[dict[str, str]]


class PlotKind(str, Enum):
    HISTOGRAM_OVERLAY = "histogram_overlay"
    LINE_SWEEP = "line_sweep"


class PlotResult(FrozenModel):
    path: Path
    kind: PlotKind
    curves: int


def _has(rows: Rows, *columns: str) -> bool:
    return all(column in rows[0] for column in columns)


def _ints(rows: Rows, column: str) -> list[int]:
    try:
        return [int(row[column]) for row in rows]
    except (TypeError, ValueError) as exc:
        raise PlotSchemaError(f"column {column!r} holds a non-integer value") from exc


def _grouped(rows: Rows, key: str, value: str) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for k, v in zip(_ints(rows, key), _ints(rows, value)):
        groups.setdefault(k, []).append(v)
    return dict(sorted(groups.items()))


def _draw_histograms(ax: plt.Axes, rows: Rows) -> int:
    if _has(rows, "victim_accesses", "mean", "stddev"):
        means = [float(row["mean"]) for row in rows]
        deviations = [max(float(row["stddev"]), 1e-9) for row in rows]
        xs = np.linspace(min(means) - 4 * max(deviations), max(means) + 4 * max(deviations), 400)
        for label, mean, deviation in zip(_ints(rows, "victim_accesses"), means, deviations):
            ax.plot(xs, stats.norm.pdf(xs, mean, deviation), label=str(label))
        ax.set_ylabel("density")
        return len(rows)
    if _has(rows, "victim_accesses", "miss_count"):
        groups = _grouped(rows, "victim_accesses", "miss_count")
        title = "victim accesses"
    elif _has(rows, "bit_sent", "miss_count"):
        groups = _grouped(rows, "bit_sent", "miss_count")
        title = "bit sent"
    else:
        raise PlotSchemaError(f"histogram_overlay cannot use columns {sorted(rows[0])}")
    for label, misses in groups.items():
        values, counts = np.unique(misses, return_counts=True)
        ax.plot(values, counts, marker=".", label=f"{title} {label}")
    ax.set_ylabel("trials")
    return len(groups)


def _draw_sweep(ax: plt.Axes, rows: Rows) -> int:
    if _has(rows, "B", "load_balanced", "throws_until_first_spill"):
        series: dict[str, dict[int, list[int]]] = {}
        for row in rows:
            if row["throws_until_first_spill"] == "":
                continue
            name = "load balanced" if row["load_balanced"] == "1" else "single choice"
            series.setdefault(name, {}).setdefault(int(row["B"]), []).append(int(row["throws_until_first_spill"]))
        if not series:
            raise PlotSchemaError("sweep has no spills to plot")
        for name, points in sorted(series.items()):
            xs = sorted(points)
            ax.plot(xs, [float(np.median(points[x])) for x in xs], marker="o", label=name)
        ax.set_xlabel("balls")
        ax.set_ylabel("throws until first spill (median)")
        return len(series)
    if _has(rows, "extra_ways", "sae_count"):
        ax.plot(_ints(rows, "extra_ways"), _ints(rows, "sae_count"), marker="o", label="SAE")
        ax.set_xlabel("extra ways")
        ax.set_ylabel("set-associative evictions")
        return 1
    raise PlotSchemaError(f"line_sweep cannot use columns {sorted(rows[0])}")


def emit_plot(
    csv_input: Union[str, Path], kind: Union[PlotKind, str], output: Union[str, Path, None] = None
) -> PlotResult:
    """Render ``csv_input`` as an SVG chart next to it (or at ``output``)."""
    kind = PlotKind(kind)
    source = Path(csv_input)
    _, rows = read_csv(source)
    if not rows:
        raise PlotSchemaError(f"{source} has no data rows")
    target = Path(output) if output is not None else source.with_suffix(".svg")
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(8, 5))
        try:
            curves = _draw_histograms(ax, rows) if kind is PlotKind.HISTOGRAM_OVERLAY else _draw_sweep(ax, rows)
            if kind is PlotKind.HISTOGRAM_OVERLAY:
                ax.set_xlabel("probe misses")
            ax.legend(fontsize="small")
            ax.grid(True, alpha=0.3)
            target.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(target, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    logger.info("wrote %s (%d curves)", target, curves)
    return PlotResult(path=target, kind=kind, curves=curves)
