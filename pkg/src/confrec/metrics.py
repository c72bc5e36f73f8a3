"""Top-N quality metrics and ten-bin reliability diagnostics."""

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NoUsers
from .model import ScoreSheet, score_sheet

NUM_BINS = 10
RELIABILITY_MODES = ("item", "user-mean")


@dataclass
class TopKResult:
    user_index: int
    items: np.ndarray
    confidences: np.ndarray
    hits: np.ndarray
    num_targets: int = 0


def top_k(sheet: ScoreSheet, n: int, targets=()) -> TopKResult:
    """Top-``n`` candidates of a sheet by rating (ties broken by lower item index)."""
    cand = sheet.candidates
    order = cand[np.lexsort((cand, -sheet.ratings[cand]))][:n]
    targets = np.asarray(list(targets) if not isinstance(targets, np.ndarray) else targets,
                         dtype=np.int64)
    hits = np.isin(order, targets).astype(np.int64)
    return TopKResult(sheet.user_index, order, sheet.probs[order], hits, int(np.unique(targets).size))


def precision_at_n(results, n: int) -> float:
    """Mean of hits/N over users, in percent."""
    if not results:
        raise NoUsers("no users to evaluate")
    return 100.0 * float(np.mean([r.hits[:n].sum() / n for r in results]))


def accuracy_at_n(results, test_sets=None, n: int = 20) -> float:
    """Mean per-user recall of test items within the top-N, in percent.

    ``test_sets`` maps user index to that user's test items; when omitted
    each result's ``num_targets`` is used.  Users without test items are
    skipped.
    """
    values = []
    for r in results:
        size = len(test_sets[r.user_index]) if test_sets is not None else r.num_targets
        if size:
            values.append(r.hits[:n].sum() / size)
    if not values:
        raise NoUsers("no users with test items")
    return 100.0 * float(np.mean(values))


@dataclass
class ReliabilityReport:
    bin_edges: np.ndarray
    counts: np.ndarray
    mean_confidence: np.ndarray  # NaN for empty bins
    accuracy: np.ndarray  # NaN for empty bins
    ece: float
    mode: str = "item"

    def rows(self):
        """(lo, hi, count, mean_confidence, accuracy) for occupied bins."""
        for b in range(len(self.counts)):
            if self.counts[b]:
                yield (float(self.bin_edges[b]), float(self.bin_edges[b + 1]), int(self.counts[b]),
                       float(self.mean_confidence[b]), float(self.accuracy[b]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "count", "mean_confidence", "accuracy"])
        for lo, hi, count, conf, acc in self.rows():
            writer.writerow([repr(lo), repr(hi), count, repr(conf), repr(acc)])
        writer.writerow(["ece", repr(self.ece)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def bin_edges(num_bins: int = NUM_BINS) -> np.ndarray:
    # k / num_bins is correctly rounded, so 0.3 is exactly the float 0.3
    return np.arange(num_bins + 1) / num_bins


def assign_bins(confidences, num_bins: int = NUM_BINS) -> np.ndarray:
    """Bin index per confidence; bins are [lo, hi) except the last, which includes 1.0."""
    edges = bin_edges(num_bins)
    idx = np.searchsorted(edges, np.asarray(confidences, dtype=np.float64), side="right") - 1
    return np.clip(idx, 0, num_bins - 1)


def reliability_from_arrays(confidences, correct, mode: str = "item",
                            num_bins: int = NUM_BINS) -> ReliabilityReport:
    conf = np.asarray(confidences, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    bins = assign_bins(conf, num_bins)
    counts = np.bincount(bins, minlength=num_bins)
    conf_sum = np.bincount(bins, weights=conf, minlength=num_bins)
    acc_sum = np.bincount(bins, weights=correct, minlength=num_bins)
    occupied = counts > 0
    mean_conf = np.full(num_bins, np.nan)
    acc = np.full(num_bins, np.nan)
    mean_conf[occupied] = conf_sum[occupied] / counts[occupied]
    acc[occupied] = acc_sum[occupied] / counts[occupied]
    total = counts.sum()
    ece = 0.0
    if total:
        gaps = np.abs(acc[occupied] - mean_conf[occupied])
        ece = float(np.sum(counts[occupied] / total * gaps))
    return ReliabilityReport(bin_edges(num_bins), counts, mean_conf, acc, ece, mode)


def reliability(results, mode: str = "item", num_bins: int = NUM_BINS) -> ReliabilityReport:
    """Ten-bin reliability report over top-K results.

    ``item`` bins every recommended item by its confidence, with the hit
    rate as accuracy.  ``user-mean`` bins every user by the mean confidence
    of its top-K list, with that user's precision as accuracy.
    """
    if mode == "item":
        conf = np.concatenate([r.confidences for r in results]) if results else np.empty(0)
        hits = np.concatenate([r.hits for r in results]) if results else np.empty(0)
    elif mode == "user-mean":
        conf = np.array([r.confidences.mean() for r in results if len(r.items)])
        hits = np.array([r.hits.mean() for r in results if len(r.items)])
    else:
        raise ValueError(f"unknown reliability mode {mode!r}; expected one of {RELIABILITY_MODES}")
    return reliability_from_arrays(conf, hits, mode, num_bins)


def collect_topk(state, split, part: str = "test", n: int = 20, calibration=None,
                 threads: int = 1) -> list:
    """Top-N lists for every user with items in ``part``, training items masked.

    ``calibration`` is an optional ``CalibrationParams``; ``state`` must be
    propagated.  Output order is by user index regardless of ``threads``.
    """
    from .calibration import calibrate_sheet

    train_items = split.user_items("train")
    targets = split.user_items(part)
    users = [u for u in range(split.num_users) if targets[u].size]

    def run(u):
        sheet = score_sheet(state, u, train_items[u])
        if calibration is not None:
            sheet = calibrate_sheet(sheet, calibration)
        return top_k(sheet, n, targets[u])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, users))
    return [run(u) for u in users]


def expected_calibration_error(confidences, correct, num_bins: int = NUM_BINS) -> float:
    return reliability_from_arrays(confidences, correct, num_bins=num_bins).ece


def format_percent(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.3f}"


def select_tau(ece_by_tau: dict) -> float:
    """Grid value with the lowest ECE; ties go to the smaller tau."""
    if not ece_by_tau:
        raise ValueError("empty tau grid")
    return min(ece_by_tau, key=lambda t: (ece_by_tau[t], t))


def tune_tau(state, split, grid=None, n: int = 20, mode: str = "item", mean_mode: str = "candidates",
             threads: int = 1):
    """Pick tau on the validation part by reliability ECE.

    Returns ``(best_tau, {tau: ece})``.
    """
    from .calibration import TAU_GRID, CalibrationParams

    grid = TAU_GRID if grid is None else tuple(grid)
    if not split.valid.size:
        raise NoUsers("validation split is empty")
    ece = {}
    for tau in grid:
        results = collect_topk(state, split, "valid", n, CalibrationParams(tau, mean_mode), threads)
        ece[tau] = reliability(results, mode).ece
    return select_tau(ece), ece
