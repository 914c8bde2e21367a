"""Interaction logs, CSV ingestion and the chronological train/validation/test split."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, TextIO

import numpy as np

HEADER = "user_id,item_id,timestamp,click,like"


class LogFormatError(ValueError):
    """Raised for a malformed interaction-log line."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class Interaction(NamedTuple):
    user: int
    item: int
    timestamp: int
    click: int
    like: int


@dataclass
class InteractionLog:
    """Column-oriented interaction records sorted by timestamp.

    ``user_labels[k]`` / ``item_labels[k]`` hold the original id that was
    re-indexed to dense index ``k``.
    """

    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray
    clicks: np.ndarray
    likes: np.ndarray
    num_users: int
    num_items: int
    user_labels: np.ndarray | None = None
    item_labels: np.ndarray | None = None
    rejected_count: int = 0

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.clicks = np.asarray(self.clicks, dtype=np.int8)
        self.likes = np.asarray(self.likes, dtype=np.int8)
        if self.user_labels is None:
            self.user_labels = np.arange(self.num_users, dtype=np.int64)
        if self.item_labels is None:
            self.item_labels = np.arange(self.num_items, dtype=np.int64)
        n = len(self.users)
        for col in (self.items, self.timestamps, self.clicks, self.likes):
            if len(col) != n:
                raise ValueError("interaction columns differ in length")
        if n:
            if self.users.min() < 0 or self.users.max() >= self.num_users:
                raise ValueError("user index out of range")
            if self.items.min() < 0 or self.items.max() >= self.num_items:
                raise ValueError("item index out of range")
            if np.any(self.likes > self.clicks):
                raise ValueError("like without click")

    def __len__(self) -> int:
        return len(self.users)

    def __iter__(self) -> Iterator[Interaction]:
        for row in zip(self.users, self.items, self.timestamps, self.clicks, self.likes):
            yield Interaction(*(int(x) for x in row))

    @property
    def interactions(self) -> list[Interaction]:
        return list(self)

    def subset(self, mask_or_index) -> "InteractionLog":
        return InteractionLog(
            self.users[mask_or_index],
            self.items[mask_or_index],
            self.timestamps[mask_or_index],
            self.clicks[mask_or_index],
            self.likes[mask_or_index],
            self.num_users,
            self.num_items,
            self.user_labels,
            self.item_labels,
        )

    def same_records(self, other: "InteractionLog") -> bool:
        return (
            self.num_users == other.num_users
            and self.num_items == other.num_items
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in ("users", "items", "timestamps", "clicks", "likes")
            )
        )


def _dense_index(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    labels, dense = np.unique(raw, return_inverse=True)
    return labels, dense.astype(np.int64)


def parse_interaction_log(source: str | TextIO) -> InteractionLog:
    """Parse ``user_id,item_id,timestamp,click,like`` rows.

    Ids are re-indexed densely in ascending order of the original integer id.
    Rows with ``like=1, click=0`` are dropped and counted in ``rejected_count``.
    Rows are stably sorted by timestamp.
    """
    stream = io.StringIO(source) if isinstance(source, str) else source
    rows = []
    rejected = 0
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        if lineno == 1 and line.startswith("user_id"):
            continue
        fields = line.split(",")
        if len(fields) != 5:
            raise LogFormatError(lineno, f"expected 5 fields, got {len(fields)}")
        try:
            u, i, t, c, l = (int(f) for f in fields)
        except ValueError:
            raise LogFormatError(lineno, f"non-integer field in {line!r}") from None
        if u < 0 or i < 0 or t < 0:
            raise LogFormatError(lineno, "ids and timestamps must be non-negative")
        if c not in (0, 1) or l not in (0, 1):
            raise LogFormatError(lineno, "click and like must be 0 or 1")
        if l > c:
            rejected += 1
            continue
        rows.append((u, i, t, c, l))

    if rows:
        arr = np.array(rows, dtype=np.int64)
    else:
        arr = np.zeros((0, 5), dtype=np.int64)
    order = np.argsort(arr[:, 2], kind="stable")
    arr = arr[order]
    user_labels, users = _dense_index(arr[:, 0])
    item_labels, items = _dense_index(arr[:, 1])
    return InteractionLog(
        users, items, arr[:, 2], arr[:, 3], arr[:, 4],
        num_users=len(user_labels),
        num_items=len(item_labels),
        user_labels=user_labels,
        item_labels=item_labels,
        rejected_count=rejected,
    )


def serialize_interaction_log(log: InteractionLog, header: bool = True) -> str:
    """Write the log with its dense ids, the inverse of ``parse_interaction_log``."""
    lines = [HEADER] if header else []
    lines.extend(f"{r.user},{r.item},{r.timestamp},{r.click},{r.like}" for r in log)
    return "\n".join(lines) + "\n"


def read_log(path) -> InteractionLog:
    with open(path, encoding="utf-8") as fh:
        return parse_interaction_log(fh)


def write_log(log: InteractionLog, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_interaction_log(log))


@dataclass
class DatasetSplit:
    """Training log plus per-user held-out liked items.

    Held-out items are tuples ordered by the time of their first like, so
    chronological sub-analyses can slice them.
    """

    train: InteractionLog
    validation: dict[int, tuple[int, ...]] = field(default_factory=dict)
    test: dict[int, tuple[int, ...]] = field(default_factory=dict)

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    def train_items(self) -> list[np.ndarray]:
        """Sorted unique items each user interacted with in training."""
        tr = self.train
        order = np.lexsort((tr.items, tr.users))
        users, items = tr.users[order], tr.items[order]
        bounds = np.searchsorted(users, np.arange(tr.num_users + 1))
        return [np.unique(items[bounds[u]:bounds[u + 1]]) for u in range(tr.num_users)]


def chronological_split(log: InteractionLog, train_fraction: float = 0.7) -> DatasetSplit:
    """Earliest ``floor(train_fraction * N)`` records train the model; later likes are held out.

    For every user, items liked after the cutoff and never seen in that
    user's training records are deduplicated, ordered by first like, and
    halved: the earlier half (with the odd item) is validation, the rest test.
    """
    if len(log) == 0:
        raise ValueError("cannot split an empty log")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    if np.any(np.diff(log.timestamps) < 0):
        raise ValueError("log must be sorted by timestamp")

    cut = int(np.floor(train_fraction * len(log)))
    train = log.subset(slice(0, cut))
    seen = set(zip(train.users.tolist(), train.items.tolist()))

    held: dict[int, list[int]] = {}
    rest = slice(cut, len(log))
    for u, i, l in zip(log.users[rest].tolist(), log.items[rest].tolist(), log.likes[rest].tolist()):
        if not l or (u, i) in seen:
            continue
        items = held.setdefault(u, [])
        if i not in items:
            items.append(i)

    validation, test = {}, {}
    for u in sorted(held):
        items = held[u]
        n_val = (len(items) + 1) // 2
        validation[u] = tuple(items[:n_val])
        if len(items) > n_val:
            test[u] = tuple(items[n_val:])
    return DatasetSplit(train, validation, test)
