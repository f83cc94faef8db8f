"""Figure rendering for completed runs.

Saves PNG files next to the delimited outputs: state and input histories,
tracking errors against their thresholds, the terminal-error decay, and
the Lyapunov value when the run supports it.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import DmpcError

_STATE_LABELS = {
    "auv": ("depth", "pitch", "pitch rate"),
    "cav": ("position", "speed", "acceleration"),
}


def _state_labels(log) -> list[str]:
    labels = _STATE_LABELS.get(log.config.model_kind)
    if labels is not None and len(labels) == log.state_dim:
        return list(labels)
    return [f"x{c + 1}" for c in range(log.state_dim)]


def render_run_figures(log, out_dir) -> list[str]:
    """Render all applicable figures; returns the written paths."""
    from .sim_harness import consensus_error_series, lyapunov_series

    written = []
    T, N, n = log.states.shape
    time = np.arange(T) * log.config.dt
    labels = _state_labels(log)

    fig, axes = plt.subplots(n, 1, figsize=(7.0, 2.2 * n), sharex=True)
    axes = np.atleast_1d(axes)
    for c in range(n):
        ax = axes[c]
        ax.plot(time, log.leader_states[:, c], "k--", lw=1.2, label="leader")
        for i in range(N):
            ax.plot(time, log.states[:, i, c], lw=0.9, label=f"agent {i + 1}")
        ax.set_ylabel(labels[c])
        ax.grid(True, alpha=0.3)
    axes[0].legend(loc="best", fontsize=7, ncol=2)
    axes[-1].set_xlabel("time [s]")
    fig.tight_layout()
    path = os.path.join(out_dir, "states.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    m = log.input_dim
    fig, axes = plt.subplots(m, 1, figsize=(7.0, 2.6 * m), sharex=True, squeeze=False)
    for c in range(m):
        ax = axes[c, 0]
        for i in range(N):
            ax.plot(time, log.applied[:, i, c], lw=0.9, label=f"agent {i + 1}")
        lo = log.nominal_model.input_lower[c]
        hi = log.nominal_model.input_upper[c]
        ax.axhline(lo, color="r", ls=":", lw=1.0)
        ax.axhline(hi, color="r", ls=":", lw=1.0)
        ax.set_ylabel(f"u{c + 1}")
        ax.grid(True, alpha=0.3)
    axes[0, 0].legend(loc="best", fontsize=7, ncol=2)
    axes[-1, 0].set_xlabel("time [s]")
    fig.tight_layout()
    path = os.path.join(out_dir, "inputs.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    errors, _ = consensus_error_series(log)
    thresholds = np.asarray(log.config.thresholds, dtype=float)
    fig, axes = plt.subplots(n, 1, figsize=(7.0, 2.2 * n), sharex=True)
    axes = np.atleast_1d(axes)
    for c in range(n):
        ax = axes[c]
        for i in range(N):
            ax.plot(time, errors[:, i, c], lw=0.9, label=f"agent {i + 1}")
        if thresholds.size == n:
            ax.axhline(thresholds[c], color="g", ls=":", lw=1.0)
            ax.axhline(-thresholds[c], color="g", ls=":", lw=1.0)
        ax.set_ylabel(f"error {labels[c]}")
        ax.grid(True, alpha=0.3)
    axes[0].legend(loc="best", fontsize=7, ncol=2)
    axes[-1].set_xlabel("time [s]")
    fig.tight_layout()
    path = os.path.join(out_dir, "errors.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    norms = np.linalg.norm(log.stacked_errors, axis=1)
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    positive = norms > 0.0
    if positive.any():
        ax.semilogy(time[positive], norms[positive], lw=1.1, label="stacked terminal error")
    else:
        ax.plot(time, norms, lw=1.1, label="stacked terminal error")
    rho = None
    try:
        from .terminal_gain import stacked_terminal_matrix

        if log.config.homogeneous_controllers:
            rho = stacked_terminal_matrix(
                log.topology, log.nominal_model, log.gain.gain
            ).spectral_radius
    except DmpcError:
        rho = None
    if rho is not None and 0.0 < rho < 1.0 and norms[0] > 0.0:
        ref = norms[0] * rho ** np.arange(T)
        keep = ref > 0.0
        ax.semilogy(time[keep], ref[keep], "k:", lw=1.0, label="spectral radius rate")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("norm")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    path = os.path.join(out_dir, "terminal_decay.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    if log.config.zero_input_leader and log.config.nominal_dynamics:
        try:
            v, j_sum, q_sum = lyapunov_series(log)
        except DmpcError:
            v = None
        if v is not None:
            fig, ax = plt.subplots(figsize=(7.0, 3.2))
            pos = v > 0.0
            if pos.any():
                ax.semilogy(time[pos], v[pos], lw=1.1, label="V")
                ax.semilogy(
                    time[j_sum > 0.0], j_sum[j_sum > 0.0], lw=0.9, ls="--", label="cost sum"
                )
                ax.semilogy(
                    time[q_sum > 0.0], q_sum[q_sum > 0.0], lw=0.9, ls=":", label="tail sum"
                )
            else:
                ax.plot(time, v, lw=1.1, label="V")
            ax.set_xlabel("time [s]")
            ax.set_ylabel("value")
            ax.grid(True, alpha=0.3)
            ax.legend(loc="best", fontsize=8)
            fig.tight_layout()
            path = os.path.join(out_dir, "lyapunov.png")
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)
    return written
