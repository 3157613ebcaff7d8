"""Figure rendering for report-producing subcommands (PNG, headless Agg)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KW = {"dpi": 120, "metadata": {"Software": "phonekit"}}


def _save(fig, outdir: Path, name: str) -> Path:
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / name
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def score_figures(report: dict, outdir) -> list[Path]:
    """Grouped PER/PFER bars plus per-feature error proportions."""
    outdir = Path(outdir)
    written = []

    groups = report["aggregates"]
    names = sorted(groups)
    per = [groups[g]["per"] or 0.0 for g in names]
    pfer = [groups[g]["pfer"] or 0.0 for g in names]
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(names) + 2), 3.2))
    xs = range(len(names))
    ax.bar([x - 0.2 for x in xs], per, width=0.4, label="PER")
    ax.bar([x + 0.2 for x in xs], pfer, width=0.4, label="PFER")
    ax.set_xticks(list(xs), names, rotation=45, ha="right")
    ax.set_ylabel("% of reference phones")
    ax.legend()
    fig.tight_layout()
    written.append(_save(fig, outdir, "error_rates_by_group.png"))

    feats = report.get("feature_errors") or {}
    if feats:
        written.append(feature_figure(feats, outdir))
    return written


def feature_figure(feature_errors: dict, outdir) -> Path:
    """Horizontal bars of per-feature error proportions, largest first."""
    outdir = Path(outdir)
    items = sorted(feature_errors.items(), key=lambda kv: (-kv[1], kv[0]))
    names = [k for k, _ in items]
    values = [v for _, v in items]
    fig, ax = plt.subplots(figsize=(5, max(2.5, 0.28 * len(names) + 1)))
    ax.barh(range(len(names) - 1, -1, -1), values)
    ax.set_yticks(range(len(names) - 1, -1, -1), names, fontsize=7)
    ax.set_xlabel("error proportion")
    ax.set_xlim(0, 1)
    fig.tight_layout()
    return _save(fig, outdir, "feature_errors.png")


def ablation_figure(rows: list[dict], outdir) -> Path:
    """Train/dev PFER per objective, one bar pair each."""
    outdir = Path(outdir)
    names = [r["objective"] for r in rows]
    train = [r.get("train_pfer") if r.get("train_pfer") is not None else 0.0 for r in rows]
    dev = [r.get("dev_pfer") if r.get("dev_pfer") is not None else 0.0 for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, len(names) + 2), 3.2))
    xs = range(len(names))
    ax.bar([x - 0.2 for x in xs], train, width=0.4, label="train PFER")
    ax.bar([x + 0.2 for x in xs], dev, width=0.4, label="dev PFER")
    for x, row in zip(xs, rows):
        if row.get("status") != "ok":
            ax.annotate("failed", (x, 1.0), ha="center", color="red")
    ax.set_xticks(list(xs), names, rotation=30, ha="right")
    ax.set_ylabel("PFER (%)")
    ax.legend()
    fig.tight_layout()
    return _save(fig, outdir, "ablation_pfer.png")


def correlation_figure(pairs: list[tuple[str, float, float]], rho: float, p: float, outdir) -> Path:
    """Coverage vs PFER scatter with language labels."""
    outdir = Path(outdir)
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    xs = [c for _, c, _ in pairs]
    ys = [e for _, _, e in pairs]
    ax.scatter(xs, ys)
    for lang, x, y in pairs:
        ax.annotate(lang, (x, y), fontsize=7, xytext=(2, 2), textcoords="offset points")
    ax.set_xlabel("similarity-weighted training coverage")
    ax.set_ylabel("PFER (%)")
    ax.set_title(f"rho = {rho:.4f}, p = {p:.4f}", fontsize=9)
    fig.tight_layout()
    return _save(fig, outdir, "coverage_vs_pfer.png")


def training_figure(trace: list[dict], outdir) -> Path:
    """Loss and dev error curves over training steps."""
    outdir = Path(outdir)
    steps = [r["step"] for r in trace]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax1.plot(steps, [r["loss"] for r in trace])
    ax1.set_xlabel("step")
    ax1.set_ylabel("batch loss")
    ax2.plot(steps, [r["dev_per"] for r in trace], label="dev PER")
    ax2.plot(steps, [r["dev_pfer"] for r in trace], label="dev PFER")
    ax2.set_xlabel("step")
    ax2.set_ylabel("%")
    ax2.legend()
    fig.tight_layout()
    return _save(fig, outdir, "training_curves.png")
