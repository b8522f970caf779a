"""SVG figures for each stage.  Presentation only; nothing reads them back."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dynamics import MU_JUPITER_EUROPA  # noqa: E402

# fixed ids and no timestamp keep reruns byte-identical
matplotlib.rcParams["svg.hashsalt"] = "resonant-manifolds"
_META = {"Date": None, "Creator": None}

UNSTABLE_COLOR = "tab:red"
STABLE_COLOR = "tab:blue"


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META, bbox_inches="tight")
    plt.close(fig)


def plot_melnikov(g, M, zeros, label: str, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(g, M, lw=1.2, color="k")
    ax.axhline(0.0, color="0.6", lw=0.6)
    for z in zeros:
        ax.plot([z.g], [0.0], "o", color=UNSTABLE_COLOR, ms=4)
    ax.set_xlabel(r"$g_i$")
    ax.set_ylabel(r"$M(g_i)$")
    ax.set_title(f"Melnikov function, {label}")
    _save(fig, path)


def plot_orbits(orbit_trajectories, path, mu: float = MU_JUPITER_EUROPA, labels=None) -> None:
    """Synodic-frame orbits; ``orbit_trajectories`` is a list of ``(times, states)``."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for i, (_, ys) in enumerate(orbit_trajectories):
        ax.plot(ys[:, 0], ys[:, 1], lw=0.8, label=None if labels is None else labels[i])
    ax.plot([-mu], [0.0], "o", color="orange", ms=6)
    ax.plot([1.0 - mu], [0.0], "o", color="0.4", ms=3)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if labels is not None:
        ax.legend(fontsize=7)
    _save(fig, path)


def plot_section(u_curves, s_curves, path, connections=(), labels=("unstable", "stable")) -> None:
    """``(x, xdot)`` scatter of both manifolds on the section."""
    fig, ax = plt.subplots(figsize=(6, 5))
    for curves, color, label in ((u_curves, UNSTABLE_COLOR, labels[0]), (s_curves, STABLE_COLOR, labels[1])):
        for i, c in enumerate(curves):
            ax.plot(c.x, c.vx, ".", ms=0.8, color=color, label=label if i == 0 else None)
    for c in connections:
        ax.plot([c.state[0]], [c.state[2]], "o", mfc="none", mec="k", ms=8)
    ax.set_xlabel("x")
    ax.set_ylabel(r"$\dot x$")
    ax.legend(markerscale=8, fontsize=8)
    _save(fig, path)


def plot_refinement(u_curves, s_curves, connections, path, half_width: float = 2e-3) -> None:
    """Zoomed panels around each connection, one per column."""
    n = max(len(connections), 1)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.2), squeeze=False)
    for ax, conn in zip(axes[0], connections):
        x0, v0 = conn.state[0], conn.state[2]
        for curves, color in ((u_curves, UNSTABLE_COLOR), (s_curves, STABLE_COLOR)):
            for c in curves:
                near = (np.abs(c.x - x0) < 4 * half_width) & (np.abs(c.vx - v0) < 4 * half_width)
                ax.plot(c.x[near], c.vx[near], ".-", ms=2, lw=0.5, color=color)
        ax.plot([x0], [v0], "o", mfc="none", mec="k", ms=10)
        ax.set_xlim(x0 - half_width, x0 + half_width)
        ax.set_ylim(v0 - half_width, v0 + half_width)
        ax.set_title(f"s_u={conn.s_u:.6g}\ns_s={conn.s_s:.6g}", fontsize=7)
        ax.tick_params(labelsize=6)
    _save(fig, path)


def plot_connection(times, states, u_traj, s_traj, path, mu: float = MU_JUPITER_EUROPA) -> None:
    """A transfer arc with its source (red) and destination (blue) periodic orbits."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(states[:, 0], states[:, 1], lw=0.6, color="k")
    ax.plot(u_traj[1][:, 0], u_traj[1][:, 1], lw=1.0, color=UNSTABLE_COLOR)
    ax.plot(s_traj[1][:, 0], s_traj[1][:, 1], lw=1.0, color=STABLE_COLOR)
    i0 = int(np.argmin(np.abs(times)))
    ax.plot([states[i0, 0]], [states[i0, 1]], "o", color="k", ms=4)
    ax.plot([-mu], [0.0], "o", color="orange", ms=6)
    ax.plot([1.0 - mu], [0.0], "o", color="0.4", ms=3)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    _save(fig, path)
