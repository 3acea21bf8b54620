"""
Round reports
Per-round metrics of the closed loop, their JSON/CSV export, and the
consolidated summary table and plots.
"""

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from src.errors import ReportError  # noqa: E402
from src.logger import get_logger  # noqa: E402

logger = get_logger()

REPORT_FILE = "report.json"
REPORTS_CSV = "reports.csv"
SUMMARY_CSV = "summary.csv"
PLOTTED_METRICS = ("fid", "div", "r_top1", "penetrate_cm", "float_cm", "skate_cm", "succ", "e_mpjpe")


@dataclass
class RoundReport:
    """Metrics of one loop round (round 0 is the pre-loop baseline)"""
    round: int
    r_top1: float
    r_top2: float
    r_top3: float
    fid: float
    div: float
    div_gap: float
    penetrate_cm: float
    float_cm: float
    skate_cm: float
    succ: float  # refined samples
    e_mpjpe: float
    e_mpkpe: float
    succ_raw: float  # raw samples
    e_mpjpe_raw: float
    e_mpkpe_raw: float
    accepted_fraction: float
    finetuned: bool
    n_samples: int

    @property
    def r_precision(self):
        return self.r_top1, self.r_top2, self.r_top3

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "RoundReport":
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in data]
        if missing:
            raise ReportError(f"Round report is missing fields {missing}", field=missing[0])
        return cls(**{n: data[n] for n in names})


def report_columns() -> List[str]:
    return [f.name for f in fields(RoundReport)]


def round_dir(out_dir, round_index: int) -> Path:
    return Path(out_dir) / f"round_{round_index}"


def write_round_report(report: RoundReport, out_dir) -> Path:
    path = round_dir(out_dir, report.round) / REPORT_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(report.to_dict(), f, indent=2)
    return path


def load_round_reports(out_dir) -> List[RoundReport]:
    """
    Read every round_<k>/report.json under out_dir, ordered by round.

    Raises:
        ReportError: no reports, or a report file is corrupt
    """
    out_dir = Path(out_dir)
    paths = sorted(out_dir.glob(f"round_*/{REPORT_FILE}"), key=lambda p: int(p.parent.name.split("_")[1]))
    if not paths:
        raise ReportError(f"No round reports found under {out_dir}", field="out_dir")
    reports = []
    for path in paths:
        try:
            with open(path) as f:
                reports.append(RoundReport.from_dict(json.load(f)))
        except (json.JSONDecodeError, TypeError) as e:
            raise ReportError(f"Corrupt round report {path}: {e}", field=str(path)) from e
    return reports


def reports_frame(reports: List[RoundReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in reports], columns=report_columns())


class ReportTracker:
    """Collects round reports across a loop run"""

    def __init__(self):
        self.reports: List[RoundReport] = []

    def record_round(self, report: RoundReport) -> RoundReport:
        self.reports.append(report)
        return report

    def get_loop_stats(self) -> Dict:
        """Change of the headline metrics from the baseline to the last round"""
        if not self.reports:
            return {}
        first, last = self.reports[0], self.reports[-1]
        return {
            "rounds": len(self.reports) - 1,
            "delta_fid": last.fid - first.fid,
            "delta_penetrate_cm": last.penetrate_cm - first.penetrate_cm,
            "delta_float_cm": last.float_cm - first.float_cm,
            "delta_skate_cm": last.skate_cm - first.skate_cm,
            "delta_succ": last.succ - first.succ,
            "mean_accepted_fraction": sum(r.accepted_fraction for r in self.reports[1:]) / max(len(self.reports) - 1, 1),
        }

    def export_reports(self, out_dir) -> Path:
        """Write every round's report.json and the combined reports.csv"""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for report in self.reports:
            write_round_report(report, out_dir)
        path = out_dir / REPORTS_CSV
        reports_frame(self.reports).to_csv(path, index=False)
        return path

    def print_report(self):
        """Print human-readable loop report"""
        stats = self.get_loop_stats()

        print("\n" + "=" * 80)
        print("CLOSED-LOOP REFINEMENT REPORT")
        print("=" * 80)
        print(f"Rounds: {stats.get('rounds', 0)}")
        print(f"\n{'round':>5} {'fid':>9} {'div':>8} {'top1':>6} {'pen':>7} {'float':>7} {'skate':>7} {'succ':>6} {'acc':>6}")
        for r in self.reports:
            print(
                f"{r.round:>5} {r.fid:>9.4f} {r.div:>8.4f} {r.r_top1:>6.3f} {r.penetrate_cm:>7.3f} "
                f"{r.float_cm:>7.3f} {r.skate_cm:>7.3f} {r.succ:>6.3f} {r.accepted_fraction:>6.3f}"
            )
        if len(self.reports) > 1:
            print(f"\nBaseline → last round:")
            print(f"  Skate: {stats['delta_skate_cm']:+.3f} cm")
            print(f"  Float: {stats['delta_float_cm']:+.3f} cm")
            print(f"  Penetrate: {stats['delta_penetrate_cm']:+.3f} cm")
            print(f"  Success rate: {stats['delta_succ']:+.3f}")
        print("\n" + "=" * 80)


def build_report(out_dir) -> Dict[str, Path]:
    """
    Consolidate round reports into summary.csv and one line plot per metric.

    Returns:
        mapping of artifact name to written path
    """
    out_dir = Path(out_dir)
    frame = reports_frame(load_round_reports(out_dir))
    written = {"summary": out_dir / SUMMARY_CSV}
    frame.to_csv(written["summary"], index=False)

    plot_dir = out_dir / "plots"
    plot_dir.mkdir(parents=True, exist_ok=True)
    for metric in PLOTTED_METRICS:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(frame["round"], frame[metric], marker="o", color="black", linewidth=1.2)
        ax.set_xlabel("round")
        ax.set_ylabel(metric)
        ax.set_xticks(list(frame["round"]))
        ax.spines[["top", "right"]].set_visible(False)
        fig.tight_layout()
        path = plot_dir / f"{metric}.png"
        fig.savefig(path)
        plt.close(fig)
        written[metric] = path
    logger.info(f"Report written for {len(frame)} rounds under {out_dir}")
    return written
