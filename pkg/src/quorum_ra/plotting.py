"""Static plots rendered from the emitted CSV files (matplotlib, optional)."""

import math
from pathlib import Path

from .harness import read_csv


def _floats(rows, key):
    return [float(r[key]) for r in rows]


def plot_metric_csv(csv_path, out_path=None, title=None):
    """Log-log plot of ``value`` and both bound columns against ``K >= 1``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    csv_path = Path(csv_path)
    out_path = Path(out_path) if out_path else csv_path.with_suffix(".png")
    rows = [r for r in read_csv(csv_path) if int(r["K"]) >= 1]
    K = [int(r["K"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, style in (("value", "-"), ("bound_measured_eta", "--"), ("bound_fixed_eta", ":")):
        vals = _floats(rows, key)
        pts = [(k, v) for k, v in zip(K, vals) if v > 0 and not math.isnan(v)]
        if pts:
            ax.loglog(*zip(*pts), style, label=key)
    ax.set_xlabel("K")
    ax.set_ylabel(csv_path.stem)
    ax.set_title(title or csv_path.stem)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path


def plot_comparison_csv(csv_path, out_path=None):
    """Summary value per rule against delta (log scale)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    csv_path = Path(csv_path)
    out_path = Path(out_path) if out_path else csv_path.with_suffix(".png")
    rows = read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for rule in dict.fromkeys(r["rule"] for r in rows):
        pts = [(float(r["delta"]), float(r["mse_last150"])) for r in rows if r["rule"] == rule]
        pts = [(d, v) for d, v in pts if v > 0 and not math.isnan(v)]
        if pts:
            ax.semilogy(*zip(*sorted(pts)), "o-", label=rule)
    ax.set_xlabel("delta")
    ax.set_ylabel("mean MSE, last 150 iterations")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path
