"""Run artifacts: delimited outputs, legacy-VTK slices, matplotlib figures.

Every writer takes explicit paths; the CLI wires them to the output
directory.  Figures are rendered headless (Agg) next to the CSV they plot.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError
from .pipeline import SolveResult, StudyResult

_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass
class SliceData:
    axis: str
    value: float  # nearest grid-plane coordinate actually used
    coords: np.ndarray  # (N*N, 3)
    solution: np.ndarray  # (N*N,)
    error: np.ndarray | None  # (N*N,) or None when no exact solution


def extract_slice(result: SolveResult, axis: str, value: float) -> SliceData:
    """Nearest axis-aligned grid plane of the solution (and error) grids."""
    if axis not in _AXES:
        raise ConfigError(f"slice axis must be one of x, y, z; got {axis!r}")
    box = result.cls.box
    ax_coords = box.coords()
    if not (ax_coords[0] - box.h <= value <= ax_coords[-1] + box.h):
        raise ConfigError(
            f"slice plane {axis}={value} outside the box "
            f"[{ax_coords[0]:.4f}, {ax_coords[-1]:.4f}]"
        )
    idx = int(np.argmin(np.abs(ax_coords - value)))
    take = [slice(None)] * 3
    take[_AXES[axis]] = idx
    take = tuple(take)
    sol = result.solution[take]
    err = result.error[take] if result.error is not None else None
    grids = np.meshgrid(ax_coords, ax_coords, indexing="ij")
    coords = np.empty((box.N * box.N, 3))
    other = [d for d in range(3) if d != _AXES[axis]]
    coords[:, other[0]] = grids[0].ravel()
    coords[:, other[1]] = grids[1].ravel()
    coords[:, _AXES[axis]] = ax_coords[idx]
    return SliceData(
        axis=axis,
        value=float(ax_coords[idx]),
        coords=coords,
        solution=sol.ravel(),
        error=None if err is None else err.ravel(),
    )


def write_slice_csv(data: SliceData, path: str, which: str = "solution") -> None:
    vals = data.solution if which == "solution" else data.error
    if vals is None:
        raise ConfigError("no error field on this slice (run had no exact solution)")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "value"])
        for row, v in zip(data.coords, vals):
            w.writerow([f"{row[0]:.17g}", f"{row[1]:.17g}", f"{row[2]:.17g}", f"{v:.17g}"])


def write_slice_vtk(data: SliceData, result: SolveResult, path: str) -> None:
    """Legacy-VTK structured points; solution (and error) as point scalars."""
    box = result.cls.box
    n = box.N
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"slice {data.axis}={data.value:.12g}\n")
        fh.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {n} {n} 1\n")
        fh.write(f"ORIGIN {box.coords()[0]} {box.coords()[0]} {data.value}\n")
        fh.write(f"SPACING {box.h} {box.h} {box.h}\n")
        fh.write(f"POINT_DATA {n * n}\n")
        for name, vals in (("solution", data.solution), ("abs_error", data.error)):
            if vals is None:
                continue
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            # VTK structured points run x fastest; our slice arrays are
            # C-ordered with the second in-plane axis fastest, so transpose
            grid = vals.reshape(n, n).T
            for line in grid:
                fh.write(" ".join(f"{v:.17g}" for v in line) + "\n")


def plot_slice(data: SliceData, result: SolveResult, path: str) -> None:
    box = result.cls.box
    n = box.N
    fields = [("solution", data.solution)]
    if data.error is not None:
        fields.append(("abs error", data.error))
    fig, axes = plt.subplots(1, len(fields), figsize=(5.5 * len(fields), 4.4))
    if len(fields) == 1:
        axes = [axes]
    extent = [box.coords()[0], box.coords()[-1]] * 2
    for ax, (name, vals) in zip(axes, fields):
        im = ax.imshow(
            vals.reshape(n, n).T, origin="lower", extent=extent, cmap="viridis"
        )
        ax.set_title(f"{name} ({data.axis}={data.value:.3g})")
        fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def write_residuals_csv(history: list, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "residual"])
        for i, r in enumerate(history, start=1):
            w.writerow([i, f"{r:.17g}"])


def plot_residuals(history: list, path: str, label: str | None = None) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    ax.semilogy(range(1, len(history) + 1), history, "o-", ms=3, label=label)
    ax.set_xlabel("GMRES iteration")
    ax.set_ylabel("relative residual")
    ax.grid(True, which="both", alpha=0.3)
    if label:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_residual_family(histories: dict, path: str) -> None:
    """Overlaid residual curves, one per grid size (refinement studies)."""
    fig, ax = plt.subplots(figsize=(5.6, 4.2))
    for label, hist in histories.items():
        ax.semilogy(range(1, len(hist) + 1), hist, "o-", ms=3, label=str(label))
    ax.set_xlabel("GMRES iteration")
    ax.set_ylabel("relative residual")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(title="N")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def write_convergence_csv(study: StudyResult, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "MaxError", "Rate"])
        for row in study.rows:
            rate = "" if row.rate is None else f"{row.rate:.2f}"
            if row.degenerate:
                rate += " (degenerate)"
            w.writerow([row.N, f"{row.max_error:.4e}", rate])


def plot_convergence(study: StudyResult, path: str) -> None:
    ns = [row.N for row in study.rows]
    errs = [row.max_error for row in study.rows]
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    ax.loglog(ns, errs, "o-", label="max error")
    ref = errs[0] * (np.asarray(ns, float) / ns[0]) ** -2
    ax.loglog(ns, ref, "k--", alpha=0.6, label="second order")
    ax.set_xlabel("N")
    ax.set_ylabel("max error on interior nodes")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def export_slices(
    result: SolveResult,
    axis: str,
    value: float,
    out_dir: str,
    basename: str = "slice",
) -> SliceData:
    """CSV + VTK (+ PNG) slice artifacts for a solved run."""
    os.makedirs(out_dir, exist_ok=True)
    data = extract_slice(result, axis, value)
    tag = f"{basename}_{axis}{data.value:+.3g}"
    write_slice_csv(data, os.path.join(out_dir, f"{tag}_solution.csv"), "solution")
    if data.error is not None:
        write_slice_csv(data, os.path.join(out_dir, f"{tag}_error.csv"), "error")
    write_slice_vtk(data, result, os.path.join(out_dir, f"{tag}.vtk"))
    plot_slice(data, result, os.path.join(out_dir, f"{tag}.png"))
    return data
