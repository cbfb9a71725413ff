"""Report figures rendered to image files with a non-interactive backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def loss_curve_figure(path, curves: list[list[float]], title: str = "registration loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    offset = 0
    for k, c in enumerate(curves):
        if c:
            ax.plot(range(offset, offset + len(c)), c, label=f"level {k}")
            offset += len(c)
    ax.set_xlabel("iteration (levels concatenated)")
    ax.set_ylabel("truncated Chamfer (m$^2$)")
    ax.set_yscale("log")
    ax.set_title(title)
    if offset:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def write_figures(out_dir, frames, report: dict) -> list[Path]:
    """Loss curves, per-frame fusion counts, and per-object coverage."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    ran = [f for f in frames if f.loss_curves]
    if ran:
        p = out / "registration_loss.png"
        fig, ax = plt.subplots(figsize=(6, 4))
        for f in ran:
            ax.plot(range(len(f.level_losses)), f.level_losses, marker="o", lw=0.8, alpha=0.6,
                    color="tab:blue" if f.stage == 1 else "tab:orange")
        ax.set_xlabel("pyramid level (0 = before warping)")
        ax.set_ylabel("truncated Chamfer (m$^2$)")
        ax.set_yscale("log")
        ax.set_title("per-frame loss by level (blue: objects, orange: shell)")
        fig.tight_layout()
        fig.savefig(p, dpi=100)
        plt.close(fig)
        written.append(p)

    if frames:
        p = out / "fusion.png"
        idx = [f.index for f in frames]
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.bar(idx, [f.stats.vertices_added for f in frames], label="vertices added")
        ax.bar(idx, [-f.stats.triangles_filtered for f in frames], label="triangles filtered (negated)")
        ax.axhline(0, color="k", lw=0.5)
        ax.set_xlabel("frame")
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(p, dpi=100)
        plt.close(fig)
        written.append(p)

    cov = report.get("coverage") or {}
    if cov:
        p = out / "coverage.png"
        names = [f"{k}: {report['objects'][int(k)]['category']}" for k in sorted(cov, key=int)]
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.barh(names, [cov[k] for k in sorted(cov, key=int)])
        ax.set_xlim(0, 1)
        ax.set_xlabel("observed primitive surface fraction")
        fig.tight_layout()
        fig.savefig(p, dpi=100)
        plt.close(fig)
        written.append(p)
    return written
