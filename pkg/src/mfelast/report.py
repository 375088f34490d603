"""CSV and SVG emission for benchmark records.

The CSV layout is versioned by a leading comment line
(``# mfelast-bench-schema: 1``) followed by a header row with the column
names of :class:`mfelast.bench.BenchRecord`, in declaration order.  Floats
are written with ``repr`` so a parsed-back file reproduces the records
exactly; byte-identical output for identical records.
"""

from __future__ import annotations

import csv
from pathlib import Path

from .bench import BenchConfig, BenchRecord, ConfigError

__all__ = [
    "SCHEMA_LINE",
    "write_csv",
    "read_csv",
    "render_figures",
    "emit_report",
]

SCHEMA_LINE = "# mfelast-bench-schema: 1"

_INT_FIELDS = {"dim", "p", "levels", "n_dofs", "newton_iterations",
               "cg_iterations"}


def write_csv(records, path):
    if not records:
        raise ConfigError("no records to write")
    names = BenchRecord.field_names()
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_LINE + "\n")
        writer = csv.writer(fh)
        writer.writerow(names)
        for rec in records:
            row = []
            for name in names:
                val = getattr(rec, name)
                if val is None:
                    row.append("")
                elif isinstance(val, float):
                    row.append(repr(val))
                else:
                    row.append(str(val))
            writer.writerow(row)


def read_csv(path):
    records = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    for row in reader:
        kwargs = {}
        for name, raw in row.items():
            if raw == "":
                kwargs[name] = None
            elif name in ("model", "strategy"):
                kwargs[name] = raw
            elif name in _INT_FIELDS:
                kwargs[name] = int(raw)
            else:
                kwargs[name] = float(raw)
        records.append(BenchRecord(**kwargs))
    return records


_STRATEGY_STYLE = {
    "naive": dict(color="tab:purple", marker="^"),
    "recompute": dict(color="tab:blue", marker="o"),
    "store": dict(color="tab:green", marker="s"),
    "sparse": dict(color="tab:red", marker="x", linestyle="--"),
}


def _plot_metric(records, attr, ylabel, title, path, logy=True):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    strategies = sorted({r.strategy for r in records})
    plotted = False
    for strat in strategies:
        pts = sorted((r.p, getattr(r, attr)) for r in records
                     if r.strategy == strat and getattr(r, attr) is not None)
        if not pts:
            continue
        plotted = True
        ps, vals = zip(*pts)
        ax.plot(ps, vals, label=strat, **_STRATEGY_STYLE.get(strat, {}))
    if not plotted:
        plt.close(fig)
        return None
    ax.set_xlabel("polynomial degree p")
    ax.set_ylabel(ylabel)
    if logy:
        ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


_FIGURES = (
    ("throughput_dofs_per_s", "throughput [DoF/s]",
     "Tangent application throughput", "throughput.svg"),
    ("total_bytes_per_dof", "storage [bytes/DoF]",
     "Operator storage per DoF", "memory_per_dof.svg"),
    ("flops_per_qp", "operations per point",
     "Quadrature-loop operations per point", "flops_per_point.svg"),
    ("solve_seconds", "time to solution [s]",
     "Full solve wall time", "time_to_solution.svg"),
)


def render_figures(records, out_dir):
    """SVG line charts (metric vs degree, one line per strategy)."""
    out_dir = Path(out_dir)
    written = []
    for attr, ylabel, title, fname in _FIGURES:
        path = _plot_metric(records, attr, ylabel, title, out_dir / fname)
        if path is not None:
            written.append(Path(path))
    return written


def emit_report(records, out_dir, csv_name="records.csv"):
    """Write the delimited records and the figures they support.

    Returns the list of written paths.  Raises ConfigError before touching
    the filesystem when there is nothing to report.
    """
    if not records:
        raise ConfigError("no records to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / csv_name
    write_csv(records, csv_path)
    return [csv_path] + render_figures(records, out_dir)
