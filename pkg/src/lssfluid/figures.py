"""Figure rendering for the CLI report paths, plus raw density image dumps.

Every CSV-writing command renders a companion PNG next to its output; the
PGM dump (8-bit binary, row-major, origin at the domain top) is for quick
visual checks of density frames with any image viewer.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def figure_path(report_path) -> Path:
    return Path(report_path).with_suffix(".png")


def write_pgm(path, density: np.ndarray) -> None:
    """8-bit binary PGM of a density field in [0, 1] (row 0 rendered on top)."""
    data = np.clip(np.asarray(density, dtype=np.float64), 0.0, 1.0)
    img = (255.0 * data[::-1, :]).round().astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def render_rollout_figure(path, steps, psnr_u, psnr_rho, mode: str,
                          density_frames=None) -> None:
    """PSNR-vs-step curves, with an optional density strip under them."""
    n_strip = min(6, len(density_frames)) if density_frames else 0
    fig = plt.figure(figsize=(7.0, 4.5 if n_strip else 3.2))
    if n_strip:
        gs = fig.add_gridspec(2, n_strip, height_ratios=[2.2, 1.0])
        ax = fig.add_subplot(gs[0, :])
    else:
        ax = fig.add_subplot(1, 1, 1)
    ax.plot(steps, psnr_u, label="PSNR u", lw=1.2)
    ax.plot(steps, psnr_rho, label="PSNR rho", lw=1.2)
    ax.set_xlabel("prediction step")
    ax.set_ylabel("PSNR [dB]")
    ax.set_title(f"rollout ({mode})")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    if n_strip:
        picks = np.linspace(0, len(density_frames) - 1, n_strip).astype(int)
        for col, idx in enumerate(picks):
            sub = fig.add_subplot(gs[1, col])
            sub.imshow(density_frames[idx], origin="lower", cmap="gray_r",
                       vmin=0.0, vmax=1.0)
            sub.set_title(f"t={idx}", fontsize=7)
            sub.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_eval_figure(path, rows) -> None:
    """Grouped bars: mean density/velocity PSNR per mode and horizon."""
    combos = sorted({(r.mode, r.horizon) for r in rows})
    labels = [f"{m}@{h}" for m, h in combos]
    mu = [np.mean([r.mean_psnr_u for r in rows if (r.mode, r.horizon) == c])
          for c in combos]
    mr = [np.mean([r.mean_psnr_rho for r in rows if (r.mode, r.horizon) == c])
          for c in combos]
    x = np.arange(len(combos))
    fig, ax = plt.subplots(figsize=(6.4, 3.4))
    ax.bar(x - 0.18, mu, width=0.36, label="u")
    ax.bar(x + 0.18, mr, width=0.36, label="rho")
    ax.set_xticks(x, labels)
    ax.set_ylabel("mean PSNR [dB]")
    ax.set_title("rollout evaluation")
    ax.legend(frameon=False)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_latent_figure(path, rows) -> None:
    """Pairwise scatter of the 3 PCA components, colored per scene."""
    rows = list(rows)
    scenes = sorted({r[0] for r in rows})
    cmap = plt.get_cmap("tab10")
    fig, axes = plt.subplots(1, 3, figsize=(9.6, 3.2))
    pairs = [(0, 1), (0, 2), (1, 2)]
    for ax, (i, j) in zip(axes, pairs):
        for s in scenes:
            pts = np.array([[r[2 + i], r[2 + j]] for r in rows if r[0] == s])
            ax.plot(pts[:, 0], pts[:, 1], "-", lw=0.7, ms=1.5,
                    color=cmap(s % 10), alpha=0.8)
        ax.set_xlabel(f"p{i + 1}")
        ax.set_ylabel(f"p{j + 1}")
        ax.grid(alpha=0.3)
    fig.suptitle("latent trajectories (PCA)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_trace_figure(path, trace, val_trace=None) -> None:
    """Loss curves per term plus total (log scale)."""
    steps = [s for s, _ in trace]
    fig, ax = plt.subplots(figsize=(6.6, 3.6))
    if trace:
        names = ["ae_direct", "sup", "split_vel", "split_den", "ae_pred", "total"]
        series = {n: [] for n in names}
        for _, rep in trace:
            for n, v in zip(names, rep.as_row()):
                series[n].append(v)
        for n in names:
            vals = np.maximum(series[n], 1e-12)
            ax.plot(steps, vals, lw=1.0 if n != "total" else 1.6, label=n)
    if val_trace:
        ax.plot([s for s, _ in val_trace], [max(v, 1e-12) for _, v in val_trace],
                "k--", lw=1.2, label="val_total")
    ax.set_yscale("log")
    ax.set_xlabel("optimizer step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False, fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_bench_figure(path, rows) -> None:
    """Per-scene bars of mean step time, simulation vs prediction."""
    scenes = sorted({r.scene for r in rows})
    sim = [next(r.total_s for r in rows if r.scene == s and r.kind == "simulation")
           for s in scenes]
    pred = [next(r.total_s for r in rows if r.scene == s and r.kind == "prediction")
            for s in scenes]
    x = np.arange(len(scenes))
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    ax.bar(x - 0.18, np.array(sim) * 1e3, width=0.36, label="simulation")
    ax.bar(x + 0.18, np.array(pred) * 1e3, width=0.36, label="prediction (vel)")
    ax.set_xticks(x, [f"scene {s}" for s in scenes])
    ax.set_ylabel("time per step [ms]")
    ax.set_title("timing")
    ax.legend(frameon=False)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_scene_montage(path, frames, n: int = 8) -> None:
    """Density strip of a generated scene."""
    picks = np.linspace(0, len(frames) - 1, min(n, len(frames))).astype(int)
    fig, axes = plt.subplots(1, len(picks), figsize=(1.3 * len(picks), 2.6))
    if len(picks) == 1:
        axes = [axes]
    for ax, idx in zip(axes, picks):
        frame = frames[idx]
        ax.imshow(frame.rho.data, origin="lower", cmap="gray_r", vmin=0, vmax=1)
        solid = np.ma.masked_where(~frame.flags.solid, frame.flags.solid)
        ax.imshow(solid, origin="lower", cmap="Blues", vmin=0, vmax=1.4, alpha=0.7)
        ax.set_title(f"t={idx}", fontsize=7)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
