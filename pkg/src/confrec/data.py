"""Dataset loading, id remapping and the per-user 7:1:2 split."""

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyFile, ParseError
from .rng import XorShift64Star

logger = logging.getLogger(__name__)

SPLIT_RATIO = (7, 1, 2)  # train, valid, test


@dataclass
class RawDataset:
    records: list
    user_map: dict = field(default_factory=dict)
    item_map: dict = field(default_factory=dict)

    @classmethod
    def from_pairs(cls, pairs) -> "RawDataset":
        """Build from ``(user_id, item_id)`` pairs; ids are mapped in order of first appearance."""
        ds = cls(records=[])
        for user, item in pairs:
            ds._add(str(user), str(item))
        return ds

    def _add(self, user: str, item: str) -> None:
        self.user_map.setdefault(user, len(self.user_map))
        self.item_map.setdefault(item, len(self.item_map))
        self.records.append((user, item))

    @property
    def num_users(self) -> int:
        return len(self.user_map)

    @property
    def num_items(self) -> int:
        return len(self.item_map)

    def indexed(self) -> np.ndarray:
        """Records as an (R, 2) array of dense indices."""
        out = np.empty((len(self.records), 2), dtype=np.int64)
        for k, (u, i) in enumerate(self.records):
            out[k, 0] = self.user_map[u]
            out[k, 1] = self.item_map[i]
        return out


def load_adjacency_file(path) -> RawDataset:
    """Read a dataset in adjacency-list or tab-separated pair format.

    Adjacency lines look like ``user item item ...``; pair lines like
    ``user<TAB>item``.  The format is fixed by the first data line: a line
    with a tab and exactly two fields selects pair format.  Lines starting
    with ``#`` are comments.
    """
    ds = RawDataset(records=[])
    pair_mode = None
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if pair_mode is None:
                    pair_mode = "\t" in line and len(line.split("\t")) == 2
                if pair_mode:
                    fields = line.split("\t")
                    if len(fields) != 2 or not all(f.strip() for f in fields):
                        raise ParseError("expected `user<TAB>item`", lineno, path)
                    ds._add(fields[0].strip(), fields[1].strip())
                    continue
                fields = line.split()
                if len(fields) < 2:
                    logger.warning("%s:%d: user %r has no items, skipped", path, lineno, fields[0])
                    continue
                for item in fields[1:]:
                    ds._add(fields[0], item)
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8 ({exc.reason})", None, path) from exc
    if not ds.records:
        raise EmptyFile(f"{path}: no interactions found")
    return ds


def apportion(n: int) -> tuple:
    """Split ``n`` interactions into (train, valid, test) counts.

    Largest remainder on the 7:1:2 quotas with at least one test edge.
    Leftover edges go to the largest remaining quota; ties prefer test,
    then train, then valid.
    """
    if n <= 0:
        return (0, 0, 0)
    # quotas in tenths of an edge keep the remainder comparison exact
    tenths = [r * n for r in SPLIT_RATIO]
    counts = [t // 10 for t in tenths]
    counts[2] = max(counts[2], 1)
    leftover = n - sum(counts)
    priority = {2: 0, 0: 1, 1: 2}
    order = sorted(range(3), key=lambda k: (-(tenths[k] - 10 * counts[k]), priority[k]))
    for k in order[:leftover]:
        counts[k] += 1
    return tuple(counts)


@dataclass(eq=False)
class SplitDataset:
    num_users: int
    num_items: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    rng_seed: int

    def user_items(self, part: str) -> list:
        """Per-user sorted item arrays for ``part`` in {train, valid, test}."""
        edges = getattr(self, part)
        bounds = np.searchsorted(edges[:, 0], np.arange(self.num_users + 1))
        return [edges[bounds[u]:bounds[u + 1], 1] for u in range(self.num_users)]


def _sorted_edges(rows: list) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 2)
    return arr[np.lexsort((arr[:, 1], arr[:, 0]))]


def split(dataset: RawDataset, seed: int) -> SplitDataset:
    """Per-user shuffled 7:1:2 split, deterministic in ``seed``.

    Each user's distinct items (first-appearance order) are shuffled with
    an independent xorshift stream keyed by ``(seed, user)``, then cut
    according to :func:`apportion`.
    """
    per_user = [dict() for _ in range(dataset.num_users)]
    for u, i in dataset.indexed():
        per_user[u].setdefault(int(i), None)

    parts = ([], [], [])
    for u, items in enumerate(per_user):
        if not items:
            continue
        items = list(items)
        XorShift64Star(seed, stream=u).shuffle(items)
        n_train, n_valid, _ = apportion(len(items))
        cuts = (items[:n_train], items[n_train:n_train + n_valid], items[n_train + n_valid:])
        for bucket, chosen in zip(parts, cuts):
            bucket.extend((u, i) for i in chosen)

    train, valid, test = (_sorted_edges(p) for p in parts)
    return SplitDataset(dataset.num_users, dataset.num_items, train, valid, test, seed)


def export_split(split_ds: SplitDataset, dataset: RawDataset, out_dir) -> list:
    """Write ``train.txt``, ``valid.txt``, ``test.txt`` in pair format with external ids."""
    users = list(dataset.user_map)
    items = list(dataset.item_map)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name in ("train", "valid", "test"):
        path = os.path.join(out_dir, f"{name}.txt")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for u, i in getattr(split_ds, name):
                fh.write(f"{users[u]}\t{items[i]}\n")
        paths.append(path)
    return paths
