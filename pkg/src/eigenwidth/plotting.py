"""Figures written next to the CLI outputs.

Everything draws on the Agg backend into a file and closes the figure; no
function here shows a window.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_profile(profile, path, polygon=None) -> Path:
    """h_- and h_+ (the domain outline) and h itself on a second axis."""
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(2, 1, sharex=True)
        if polygon is not None:
            v = np.vstack([polygon.vertices, polygon.vertices[:1]])
            ax0.fill(v[:, 0], v[:, 1], color="0.85", lw=0)
        ax0.plot(profile.grid, profile.h_minus, "k-", lw=1)
        ax0.plot(profile.grid, profile.h_plus, "k-", lw=1)
        ax0.set_ylabel("y")
        ax0.set_aspect("auto")
        ax1.plot(profile.grid, profile.h, "C0-", lw=1.2)
        ax1.set_xlabel("x")
        ax1.set_ylabel("h(x)")
        return _save(fig, path)


def plot_ode(sol, path) -> Path:
    """First weighted Neumann eigenfunction with its zero marked."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(sol.grid, sol.phi, "C0-", lw=1.2, label="phi")
        ax.axhline(0.0, color="0.5", lw=0.6)
        ax.axvline(sol.x0, color="C3", lw=0.8, ls="--", label=f"x0 = {sol.x0:.4f}")
        ax.set_xlabel("x")
        ax.set_title(f"mu1(N) = {sol.mu1N:.8g}")
        ax.legend()
        return _save(fig, path)


def plot_liouville(data, path) -> Path:
    """w = sqrt(h) zeta' and the smooth potential (log scale)."""
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(2, 1, sharex=True)
        ax0.plot(data.grid, data.w, "C0-", lw=1.2)
        ax0.set_ylabel("w")
        mid = 0.5 * (data.grid[:-1] + data.grid[1:])
        pos = data.V > 0
        if np.any(pos):
            ax1.semilogy(mid[pos], data.V[pos], "C1-", lw=1)
        for xk in data.kink_x:
            ax1.axvline(xk, color="C3", lw=0.6, ls=":")
        ax1.set_ylabel("V (smooth part)")
        ax1.set_xlabel("x")
        return _save(fig, path)


def plot_pde(sol, path) -> Path:
    """Filled contours of the 2-D eigenfunction on its mesh."""
    mesh = sol.mesh
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        tc = ax.tricontourf(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles, sol.u, levels=21, cmap="RdBu_r")
        fig.colorbar(tc, ax=ax, shrink=0.8)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_title(f"mu1 = {sol.mu1:.8g}, k = {sol.k:.6f}")
        return _save(fig, path)


def plot_bridge(report, path) -> Path:
    """Slice averages against the ODE eigenfunction, and the error term."""
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(2, 1, sharex=True)
        ax0.plot(report.grid, report.ubar, "0.6", lw=2.5, label="ubar")
        ax0.plot(report.grid, report.utilde, "C0-", lw=1, label="utilde")
        ax0.plot(report.grid, report.zeta, "C3--", lw=1, label="zeta")
        ax0.legend()
        ax1.plot(report.grid, report.eta, "C2-", lw=1)
        ax1.set_ylabel("eta")
        ax1.set_xlabel("x")
        return _save(fig, path)


def plot_sweep(records, path) -> Path:
    """c_hat = slack/eps^2 against eps per family (log-x), with the rectangle limit."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        fams = sorted({r.family for r in records if r.ok})
        for i, fam in enumerate(fams):
            rs = sorted((r for r in records if r.ok and r.family == fam), key=lambda r: r.eps)
            ax.semilogx([r.eps for r in rs], [r.c_hat for r in rs], "o-", color=f"C{i}", ms=3, label=fam)
        ax.axhline(math.pi**2 / 16, color="0.4", lw=0.8, ls="--", label="pi^2/16")
        ax.set_xlabel("eps")
        ax.set_ylabel("slack / eps^2")
        ax.legend()
        return _save(fig, path)


def plot_sharpness(table, path) -> Path:
    """FEM slack/eps^2 for rectangles against the closed form."""
    rows = sorted(table.rows, key=lambda r: r.eps)
    eps = np.array([r.eps for r in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(eps, [r.ratio for r in rows], "o", color="C0", label="FEM")
        e = np.linspace(0.0, max(eps.max(), 0.3), 200)
        ax.plot(e, math.pi**2 / (4 * (4 - e**2)), "k-", lw=0.8, label="closed form")
        ax.set_xlabel("eps")
        ax.set_ylabel("slack / eps^2")
        ax.legend()
        return _save(fig, path)
