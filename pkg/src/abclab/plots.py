"""Static SVG line plots of the detection density and the energy density."""
from __future__ import annotations

from .detection import DetectionRecord
from .energy import EnergyDensity


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def plot_detection_record(record: DetectionRecord, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(record.mid_times, record.w, lw=1.2, label="w(t) norm decrement")
    for j, label in enumerate(record.boundary_labels):
        ax.plot(record.mid_times, record.prob2[:, j], lw=0.8, ls="--",
                label=f"amplitude route ({label})")
    ax.set_xlabel("t")
    ax.set_ylabel("detection density")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_energy_density(density: EnergyDensity, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(density.energies, density.rho, lw=1.2)
    ax.set_xlabel("E")
    ax.set_ylabel("rho(E)")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
