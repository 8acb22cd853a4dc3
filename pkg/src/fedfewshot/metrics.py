"""Confusion accounting, per-class F1 and mean +- std reporting."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput


@dataclass
class ConfusionMatrix:
    labels: tuple
    counts: np.ndarray  # counts[true, predicted]

    @classmethod
    def from_predictions(cls, y_true, y_pred, labels=None):
        if labels is None:
            labels = sorted(set(y_true) | set(y_pred))
        labels = tuple(labels)
        pos = {lab: i for i, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in zip(y_true, y_pred):
            counts[pos[t], pos[p]] += 1
        return cls(labels, counts)


def f1_per_class(cm):
    """``label -> F1``; a class with precision + recall = 0 scores 0."""
    tp = np.diag(cm.counts).astype(np.float64)
    predicted = cm.counts.sum(axis=0)
    actual = cm.counts.sum(axis=1)
    scores = {}
    for i, label in enumerate(cm.labels):
        precision = tp[i] / predicted[i] if predicted[i] else 0.0
        recall = tp[i] / actual[i] if actual[i] else 0.0
        denom = precision + recall
        scores[label] = 2 * precision * recall / denom if denom else 0.0
    return scores


def format_mean_std(mean, std):
    return f"{mean:.2f} ± {std:.2f}"


@dataclass
class LabelScore:
    mean: float
    std: float
    episodes: int

    def __str__(self):
        return format_mean_std(self.mean, self.std)


@dataclass
class MetricSummary:
    scores: dict  # label -> LabelScore
    setting: str = ""
    fold: str = ""

    def mean_f1(self, label):
        return self.scores[label].mean

    def to_dict(self):
        return {
            "setting": self.setting,
            "fold": self.fold,
            "labels": {
                str(lab): {"f1_mean": s.mean, "f1_std": s.std, "episodes": s.episodes}
                for lab, s in self.scores.items()
            },
        }

    def __str__(self):
        return "; ".join(f"{lab}: {s}" for lab, s in self.scores.items())


def summarize(episode_f1s, setting="", fold=""):
    """Mean and population std per label over a list of per-episode F1 maps."""
    episode_f1s = list(episode_f1s)
    if not episode_f1s:
        raise EmptyInput("summarize() needs at least one episode")
    collected = {}
    for scores in episode_f1s:
        for label, value in scores.items():
            collected.setdefault(label, []).append(float(value))
    out = {}
    for label in sorted(collected):
        vals = np.asarray(collected[label])
        mean = float(np.clip(vals.mean(), vals.min(), vals.max()))
        # exact zero when all entries coincide; np.std can leave 1e-17 residue
        std = 0.0 if np.all(vals == vals[0]) else float(vals.std())
        out[label] = LabelScore(mean, std, len(vals))
    return MetricSummary(out, setting=setting, fold=fold)


def render_table(columns, title=""):
    """Plain-text table: one row per label, one ``mean +- std`` column per run.

    ``columns`` maps column name -> MetricSummary.
    """
    names = list(columns)
    labels = []
    for summary in columns.values():
        for lab in summary.scores:
            if lab not in labels:
                labels.append(lab)
    rows = [["Label"] + names]
    for lab in labels:
        row = [str(lab)]
        for name in names:
            score = columns[name].scores.get(lab)
            row.append(str(score) if score else "-")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    lines = [title] if title else []
    lines.append(sep)
    for i, row in enumerate(rows):
        lines.append("| " + " | ".join(cell.ljust(w) for cell, w in zip(row, widths)) + " |")
        if i == 0:
            lines.append(sep)
    lines.append(sep)
    return "\n".join(lines)


@dataclass
class TimingReport:
    """Per-round aggregate and broadcast/update wall-clock times (ms)."""

    aggregate_ms: list = field(default_factory=list)
    update_ms: list = field(default_factory=list)

    def add(self, aggregate_ms, update_ms):
        self.aggregate_ms.append(float(aggregate_ms))
        self.update_ms.append(float(update_ms))

    def rows(self):
        out = []
        for name, vals in (("Average weights", self.aggregate_ms), ("Update weights", self.update_ms)):
            arr = np.asarray(vals, dtype=np.float64)
            if arr.size:
                out.append((name, float(arr.mean()), float(np.percentile(arr, 95)), arr.size))
            else:
                out.append((name, 0.0, 0.0, 0))
        return out

    def render(self):
        lines = [f"{'Type':<16} {'mean (ms)':>10} {'p95 (ms)':>10} {'rounds':>7}"]
        for name, mean, p95, n in self.rows():
            lines.append(f"{name:<16} {mean:>10.3f} {p95:>10.3f} {n:>7d}")
        return "\n".join(lines)

    def per_round_lines(self):
        return [
            f"round={i} aggregate_ms={a:.3f} update_ms={u:.3f}"
            for i, (a, u) in enumerate(zip(self.aggregate_ms, self.update_ms))
        ]


def write_summary_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
