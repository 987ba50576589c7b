"""Report emission: byte-stable CSV (fixed 9-significant-digit floats) and the
matplotlib figures rendered alongside them."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

INTERNAL_COLUMNS = ("exp", "color_frames", "ir_frames", "combined_frames",
                    "overlap", "tilting", "color_err_px", "ir_err_px",
                    "reproj_err_px", "time_s")
EYEHAND_COLUMNS = ("exp", "cam", "frames", "overlap", "err_cm", "err_x_cm",
                   "err_y_cm", "err_z_cm", "time_s")


def format_value(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        if math.isnan(value):
            return "nan"
        return f"{value:.9g}"
    return str(value)


def write_csv(path, columns, rows, header_comment: str | None = None) -> None:
    """Fixed column order, LF line endings, floats at 9 significant digits:
    byte-stable for identical inputs."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(format_value(row[c]) for c in columns) + "\n")


def _finite(values):
    return [v if math.isfinite(v) else float("nan") for v in values]


def save_internal_figure(rows, path) -> None:
    """Fig.6-style chart: frame counts as bars, per-camera and reprojection
    errors as log-scale lines."""
    exps = [row["exp"] for row in rows]
    fig, ax_frames = plt.subplots(figsize=(8, 4.5))
    width = 0.25
    ax_frames.bar([e - width for e in exps], [r["color_frames"] for r in rows],
                  width, label="color frames", color="#9ecae1")
    ax_frames.bar(exps, [r["ir_frames"] for r in rows],
                  width, label="IR frames", color="#c7e9c0")
    ax_frames.bar([e + width for e in exps], [r["combined_frames"] for r in rows],
                  width, label="combined frames", color="#fdd0a2")
    ax_frames.set_xlabel("experiment")
    ax_frames.set_ylabel("frames used")
    ax_frames.set_xticks(exps)

    ax_err = ax_frames.twinx()
    ax_err.plot(exps, _finite([r["color_err_px"] for r in rows]),
                "o-", color="#08519c", label="color error [px]")
    ax_err.plot(exps, _finite([r["ir_err_px"] for r in rows]),
                "s-", color="#006d2c", label="IR error [px]")
    ax_err.plot(exps, _finite([r["reproj_err_px"] for r in rows]),
                "^-", color="#a63603", label="reprojection error [px]")
    ax_err.set_yscale("log")
    ax_err.set_ylabel("error [px] (log scale)")

    handles1, labels1 = ax_frames.get_legend_handles_labels()
    handles2, labels2 = ax_err.get_legend_handles_labels()
    ax_err.legend(handles1 + handles2, labels1 + labels2, fontsize=8,
                  loc="upper center", ncol=2)
    ax_frames.set_title("Internal calibration error vs. frames used")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_eyehand_figure(rows, path) -> None:
    """Fig.8-style chart: per-camera overall and per-axis errors with dotted
    frame counts per experiment."""
    cams = sorted({row["cam"] for row in rows})
    fig, axes = plt.subplots(1, len(cams), figsize=(4.2 * len(cams), 4.0),
                             squeeze=False, sharey=True)
    for ax, cam in zip(axes[0], cams):
        cam_rows = sorted((r for r in rows if r["cam"] == cam), key=lambda r: r["exp"])
        exps = [r["exp"] for r in cam_rows]
        ax.plot(exps, _finite([r["err_cm"] for r in cam_rows]), "o-", color="black",
                label="overall")
        ax.plot(exps, _finite([r["err_x_cm"] for r in cam_rows]), "s--",
                color="#d62728", label="x")
        ax.plot(exps, _finite([r["err_y_cm"] for r in cam_rows]), "^--",
                color="#2ca02c", label="y")
        ax.plot(exps, _finite([r["err_z_cm"] for r in cam_rows]), "v--",
                color="#1f77b4", label="z")
        ax_frames = ax.twinx()
        ax_frames.plot(exps, [r["frames"] for r in cam_rows], ":", color="gray",
                       label="frames")
        ax_frames.set_ylabel("frames", color="gray")
        ax.set_title(cam)
        ax.set_xlabel("experiment")
        ax.set_xticks(exps)
    axes[0][0].set_ylabel("prediction error [cm]")
    axes[0][0].legend(fontsize=8)
    fig.suptitle("Eye-to-Hand prediction error vs. frames used")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_calibration_figure(outcomes, path) -> None:
    """Per-camera summary: overall and per-axis holdout prediction errors."""
    cams, overall, per_axis = [], [], []
    for camera_id, outcome in sorted(outcomes.items()):
        if outcome.calibration is None or outcome.calibration.prediction is None:
            continue
        cams.append(camera_id)
        pred = outcome.calibration.prediction
        overall.append(pred["rms"] * 100.0)
        per_axis.append([float(v) * 100.0 for v in pred["rms_per_axis"]])
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * max(len(cams), 1), 4.0))
    if cams:
        x = range(len(cams))
        width = 0.2
        ax.bar([i - 1.5 * width for i in x], overall, width, label="overall",
               color="black")
        for axis, (label, color) in enumerate(
                [("x", "#d62728"), ("y", "#2ca02c"), ("z", "#1f77b4")]):
            ax.bar([i + (axis - 0.5) * width for i in x],
                   [pa[axis] for pa in per_axis], width, label=label, color=color)
        ax.set_xticks(list(x))
        ax.set_xticklabels(cams)
        ax.legend(fontsize=8)
    else:
        ax.text(0.5, 0.5, "no calibrated cameras", ha="center", va="center")
    ax.set_ylabel("holdout prediction error [cm]")
    ax.set_title("Eye-to-Hand calibration summary")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
