"""SVG figures from an aggregate sweep: pending bars and latency lines against rho."""
from __future__ import annotations

from collections import defaultdict


def plot_sweep(rows, path: str) -> None:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    series = defaultdict(list)
    for r in rows:
        series[int(r["b"])].append((float(r["rho"]), float(r["avg_pending"]), float(r["avg_latency"])))
    rhos = sorted({x for pts in series.values() for x, _, _ in pts})
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    width = 0.8 / max(len(series), 1)
    for n, (b, pts) in enumerate(sorted(series.items())):
        pts.sort()
        xs = [rhos.index(x) + (n - (len(series) - 1) / 2) * width for x, _, _ in pts]
        ax1.bar(xs, [p for _, p, _ in pts], width=width, label=f"b={b}")
        ax2.plot([x for x, _, _ in pts], [lat for _, _, lat in pts], marker="o", label=f"b={b}")
    ax1.set_xticks(range(len(rhos)), [f"{x:g}" for x in rhos])
    ax1.set_xlabel("injection rate rho")
    ax1.set_ylabel("avg pending transactions per shard")
    ax2.set_xlabel("injection rate rho")
    ax2.set_ylabel("avg latency (rounds)")
    for ax in (ax1, ax2):
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
