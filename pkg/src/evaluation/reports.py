"""
レポートファイルの書き出し・読み込み

表はヘッダ付き CSV、図は PNG（matplotlib の Agg バックエンド）。
同じレポートからは同じ CSV が出力される。
"""
from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from ..data.repository import clear_outputs  # noqa: E402
from ..utils.log import get_logger  # noqa: E402
from .analysis import DiversityReport, UncertaintyReport, uncertainty_from_table  # noqa: E402
from .protocol import MetricReport  # noqa: E402

logger = get_logger("reports")

Report = Union[MetricReport, DiversityReport, UncertaintyReport]

FLOAT_FORMAT = "%.8g"
METRICS_FILE = "metrics.csv"
SELECTION_FILE = "selection.csv"
BEST_OF_K_FILE = "best_of_k.csv"
INTRA_FILE = "intra.csv"
UNCERTAINTY_FILE = "uncertainty.csv"
UNCERTAINTY_SUMMARY_FILE = "uncertainty_summary.csv"
PLOT_FILES = ["best_of_k.png", "intra_ssim.png", "uncertainty.png"]
REPORT_FILES = [
    METRICS_FILE, SELECTION_FILE, BEST_OF_K_FILE, INTRA_FILE,
    UNCERTAINTY_FILE, UNCERTAINTY_SUMMARY_FILE, *PLOT_FILES,
]

# トレース図に描く系列数の上限
MAX_TRACE_PLOTS = 6


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        raise OSError(f"レポートを書き出せません: {path} ({e})") from e
    return path


def _save_figure(fig, path: Path) -> Path:
    try:
        fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    except OSError as e:
        raise OSError(f"図を書き出せません: {path} ({e})") from e
    finally:
        plt.close(fig)
    return path


# ─── 図 ───

def plot_best_of_k(report: DiversityReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(report.best_of_k["k"], report.best_of_k["ssim"], marker="o")
    ax.set_xscale("log")
    ax.set_xlabel("number of futures k")
    ax.set_ylabel("best-of-k SSIM")
    ax.grid(alpha=0.3)
    return _save_figure(fig, path)


def plot_intra(report: DiversityReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(report.intra["step"], report.intra["intra_ssim"], marker=".")
    ax.set_xlabel("predicted step")
    ax.set_ylabel("intra-set SSIM")
    ax.grid(alpha=0.3)
    return _save_figure(fig, path)


def plot_uncertainty(report: UncertaintyReport, path: Path) -> Path:
    videos = sorted(report.table["video"].unique())[:MAX_TRACE_PLOTS]
    fig, axes = plt.subplots(len(videos), 1, figsize=(5, 1.6 * max(len(videos), 1)), sharex=True, squeeze=False)
    for ax, video in zip(axes[:, 0], videos):
        rows = report.table[report.table["video"] == video]
        ax.plot(rows["frame"], rows["u"], color="tab:blue")
        for frame in rows.loc[rows["bounce"], "frame"]:
            ax.axvline(frame, color="tab:red", linestyle="--", linewidth=0.8)
        ax.set_ylim(-0.05, 1.05)
        ax.set_ylabel(f"video {video}")
    axes[-1, 0].set_xlabel("frame")
    fig.suptitle("scaled uncertainty (dashed: bounce)")
    return _save_figure(fig, path)


# ─── 書き出し ───

def _emit_metric(report: MetricReport, out: Path) -> list[Path]:
    aggregate = pd.DataFrame([{
        "video": "mean", "frame": "", "ssim": report.mean_ssim, "psnr": report.mean_psnr,
    }])
    table = pd.concat([report.frames.astype({"video": object, "frame": object}), aggregate], ignore_index=True)
    return [
        _write_csv(table, out / METRICS_FILE),
        _write_csv(report.selection.assign(K=report.K), out / SELECTION_FILE),
    ]


def _emit_diversity(report: DiversityReport, out: Path) -> list[Path]:
    paths = [_write_csv(report.best_of_k, out / BEST_OF_K_FILE), _write_csv(report.intra, out / INTRA_FILE)]
    if len(report.best_of_k):
        paths.append(plot_best_of_k(report, out / PLOT_FILES[0]))
    paths.append(plot_intra(report, out / PLOT_FILES[1]))
    return paths


def _emit_uncertainty(report: UncertaintyReport, out: Path) -> list[Path]:
    summary = report.per_video.astype({"video": object})
    pooled = pd.DataFrame([{
        "video": "pooled", "near_mean": report.pooled_near, "far_mean": report.pooled_far,
        "p_value": report.p_value,
    }])
    summary = pd.concat([summary, pooled], ignore_index=True)
    return [
        _write_csv(report.table, out / UNCERTAINTY_FILE),
        _write_csv(summary, out / UNCERTAINTY_SUMMARY_FILE),
        plot_uncertainty(report, out / PLOT_FILES[2]),
    ]


def emit_reports(reports: Sequence[Report], out_dir: str | Path) -> list[Path]:
    """レポートを out_dir に書き出し、書いたファイルのパスを返す"""
    if not reports:
        logger.warning("レポートが空のため何も書き出しません")
        return []
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"出力ディレクトリを作成できません: {out} ({e})") from e
    # 今回書かないレポートの古いファイルを残さない
    clear_outputs(out, REPORT_FILES)

    paths: list[Path] = []
    for report in reports:
        if isinstance(report, MetricReport):
            paths += _emit_metric(report, out)
        elif isinstance(report, DiversityReport):
            paths += _emit_diversity(report, out)
        elif isinstance(report, UncertaintyReport):
            paths += _emit_uncertainty(report, out)
        else:
            raise TypeError(f"未対応のレポート型です: {type(report).__name__}")
    logger.info("%d 個のファイルを書き出しました: %s", len(paths), out)
    return paths


# ─── 読み込み ───

def _row_to_metric(table: pd.DataFrame, selection: pd.DataFrame) -> MetricReport:
    frames = table[table["video"].astype(str) != "mean"].copy()
    frames = frames.astype({"video": int, "frame": int, "ssim": float, "psnr": float}).reset_index(drop=True)
    # K は selection.csv の K 列から戻す（列がない・行がないときは 0 = 不明）
    k = int(selection["K"].iloc[0]) if "K" in selection.columns and len(selection) else 0
    selection = selection.drop(columns=["K"], errors="ignore")
    return MetricReport(frames=frames, K=k, selection=selection)


def load_reports(in_dir: str | Path) -> list[Report]:
    """emit_reports が書いた CSV からレポートを組み立て直す（存在するものだけ）"""
    src = Path(in_dir)
    if not src.is_dir():
        raise FileNotFoundError(f"レポートディレクトリが見つかりません: {src}")
    reports: list[Report] = []
    if (src / METRICS_FILE).is_file():
        selection = (pd.read_csv(src / SELECTION_FILE) if (src / SELECTION_FILE).is_file()
                     else pd.DataFrame(columns=["video", "future", "score"]))
        reports.append(_row_to_metric(pd.read_csv(src / METRICS_FILE, dtype={"video": str}), selection))
    if (src / INTRA_FILE).is_file():
        curve = (pd.read_csv(src / BEST_OF_K_FILE) if (src / BEST_OF_K_FILE).is_file()
                 else pd.DataFrame(columns=["k", "ssim"]))
        intra = pd.read_csv(src / INTRA_FILE)
        num = int(curve["k"].max()) if len(curve) else 0
        reports.append(DiversityReport(best_of_k=curve, intra=intra, num_futures=num))
    if (src / UNCERTAINTY_FILE).is_file():
        reports.append(uncertainty_from_table(pd.read_csv(src / UNCERTAINTY_FILE)))
    if not reports:
        logger.warning("%s に読み込めるレポートがありません", src)
    return reports
