"""Aggregation of trials into per-level statistics, and report files."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .experiment import TrialResult

TABLE_COLUMNS = ["level", "nonzero_pct", "accuracy_mean", "accuracy_std", "defense_mean",
                 "defense_std", "tradeoff_ratio", "defense_significance", "n_trials"]


def tradeoff_ratio(acc: float, defense: float, acc_dense: float, def_dense: float) -> float | None:
    """Relative defense change divided by relative accuracy change.

    ``(|def - def_dense| / def_dense) * (acc_dense / |acc - acc_dense|)``;
    ``None`` when the accuracy is unchanged (ratio undefined).
    """
    if def_dense <= 0:
        raise ConfigurationError("dense defense must be positive")
    d_acc = abs(acc - acc_dense)
    if d_acc == 0:
        return None
    return abs(defense - def_dense) * acc_dense / (def_dense * d_acc)


def significance(mean: float, std: float, base_mean: float, base_std: float) -> str:
    """``"gain"``/``"loss"`` when [mean-std, mean+std] is disjoint from the baseline's."""
    if mean - std > base_mean + base_std:
        return "gain"
    if mean + std < base_mean - base_std:
        return "loss"
    return "none"


def _mean_std(values):
    values = list(values)
    mean = statistics.fmean(values)
    return mean, (statistics.stdev(values) if len(values) > 1 else 0.0)


@dataclass
class LevelSummary:
    level: str
    n_trials: int
    nonzero_pct: float
    accuracy_mean: float
    accuracy_std: float
    defense_mean: float
    defense_std: float
    tradeoff_ratio: float | None = None
    defense_significance: str = "none"
    accuracy_significance: str = "none"
    underpowered: bool = False


@dataclass
class Report:
    name: str
    master_seed: int
    baseline: str | None
    levels: list[LevelSummary]
    trials: list[TrialResult]
    config: dict = field(default_factory=dict)

    def level(self, label: str) -> LevelSummary:
        for lv in self.levels:
            if lv.level == label:
                return lv
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "master_seed": self.master_seed,
            "baseline": self.baseline,
            "levels": [asdict(lv) for lv in self.levels],
            "trials": [t.to_dict() for t in self.trials],
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(d["name"], d["master_seed"], d["baseline"],
                   [LevelSummary(**lv) for lv in d["levels"]],
                   [TrialResult(**t) for t in d["trials"]], d.get("config", {}))


def aggregate(trials, name: str = "experiment", master_seed: int = 0, config: dict | None = None,
              baseline: str | None = None) -> Report:
    """Mean and sample standard deviation per sparsity level.

    The baseline is ``"dense"`` if present, else ``"imp-k0"``; trade-off
    ratios and significance flags are computed against it.
    """
    trials = list(trials)
    if not trials:
        raise ConfigurationError("cannot aggregate an empty list of trials")
    groups: dict[str, list[TrialResult]] = {}
    for t in trials:
        groups.setdefault(t.level, []).append(t)
    if baseline is None:
        baseline = next((b for b in ("dense", "imp-k0") if b in groups), None)
    levels = []
    for label, rows in groups.items():
        acc_m, acc_s = _mean_std(t.accuracy for t in rows)
        def_m, def_s = _mean_std(t.defense for t in rows)
        levels.append(LevelSummary(label, len(rows), statistics.fmean(t.nonzero_pct for t in rows),
                                   acc_m, acc_s, def_m, def_s, underpowered=len(rows) < 2))
    if baseline is not None:
        base = next(lv for lv in levels if lv.level == baseline)
        for lv in levels:
            if lv is base:
                continue
            if base.defense_mean > 0:
                lv.tradeoff_ratio = tradeoff_ratio(lv.accuracy_mean, lv.defense_mean,
                                                   base.accuracy_mean, base.defense_mean)
            lv.defense_significance = significance(lv.defense_mean, lv.defense_std,
                                                   base.defense_mean, base.defense_std)
            lv.accuracy_significance = significance(lv.accuracy_mean, lv.accuracy_std,
                                                    base.accuracy_mean, base.accuracy_std)
    return Report(name, master_seed, baseline, levels, trials, config or {})


def report_table(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for lv in report.levels:
        row = asdict(lv)
        writer.writerow(["" if row[c] is None else row[c] for c in TABLE_COLUMNS])
    return buf.getvalue()


def emit_report(report: Report, path, formats=("json", "csv")) -> list[Path]:
    """Write ``<path>.json`` (full raw data) and/or ``<path>.csv`` (one row per level)."""
    if not report.trials:
        raise ConfigurationError("refusing to emit a report without trials")
    base = Path(path)
    if base.suffix in (".json", ".csv"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        out = base.with_suffix(f".{fmt}")
        if fmt == "json":
            out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        elif fmt == "csv":
            out.write_text(report_table(report))
        else:
            raise ConfigurationError(f"unknown report format {fmt!r}")
        written.append(out)
    return written


def load_report(path) -> Report:
    return Report.from_dict(json.loads(Path(path).read_text()))
