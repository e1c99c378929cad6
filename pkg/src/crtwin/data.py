"""Core domain types for clustered ordinal trial data and win statistics.

Outcomes are stored as integer ranks ``0..D-1`` where a higher rank is a
better outcome. Labels only exist at the ingestion boundary
(:class:`OrdinalScale`).

Every probability type accepts either ``float`` or
:class:`fractions.Fraction` values; the latter keeps golden computations
exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from fractions import Fraction
from numbers import Real
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateClusterId,
    EmptyArm,
    ParseError,
    UndefinedRatio,
    UnknownLevel,
    ValidationError,
)

TRIPLE_TOL = 1e-12


@dataclass(frozen=True)
class OrdinalScale:
    """Ordered outcome categories, least preferred first."""

    levels: tuple[str, ...]

    def __post_init__(self):
        levels = tuple(str(x) for x in self.levels)
        object.__setattr__(self, "levels", levels)
        if len(levels) < 2:
            raise ValidationError("an ordinal scale needs at least 2 levels")
        if len(set(levels)) != len(levels):
            raise ValidationError(f"duplicate levels in scale: {levels}")

    @property
    def D(self) -> int:
        return len(self.levels)

    def rank(self, label) -> int:
        try:
            return self._index[str(label)]
        except KeyError:
            raise UnknownLevel(f"outcome {label!r} is not a level of {self.levels}") from None

    def label(self, rank: int) -> str:
        return self.levels[rank]

    @cached_property
    def _index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.levels)}

    @classmethod
    def integer(cls, D: int) -> "OrdinalScale":
        """Scale whose labels are the ranks themselves, ``"0"..str(D-1)``."""
        return cls(tuple(str(i) for i in range(D)))

    @classmethod
    def infer(cls, labels: Iterable[str]) -> "OrdinalScale":
        """Sorted distinct labels; numeric labels are sorted numerically."""
        distinct = set(labels)
        try:
            ordered = sorted(distinct, key=float)
        except ValueError:
            ordered = sorted(distinct)
        return cls(tuple(ordered))


@dataclass(frozen=True, eq=False)
class ClusterRecord:
    cluster_id: str
    arm: int
    outcomes: np.ndarray

    def __post_init__(self):
        out = np.asarray(self.outcomes, dtype=np.int64).reshape(-1)
        out.setflags(write=False)
        object.__setattr__(self, "outcomes", out)
        object.__setattr__(self, "cluster_id", str(self.cluster_id))
        if self.arm not in (0, 1):
            raise ValidationError(f"cluster {self.cluster_id}: arm must be 0 or 1, got {self.arm!r}")

    @property
    def size(self) -> int:
        return int(self.outcomes.shape[0])


@dataclass(frozen=True, eq=False)
class TrialDataset:
    scale: OrdinalScale
    clusters: tuple[ClusterRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))

    @property
    def M(self) -> int:
        return len(self.clusters)

    @property
    def treated(self) -> tuple[ClusterRecord, ...]:
        return tuple(c for c in self.clusters if c.arm == 1)

    @property
    def control(self) -> tuple[ClusterRecord, ...]:
        return tuple(c for c in self.clusters if c.arm == 0)

    @property
    def arm_counts(self) -> dict[int, int]:
        n1 = sum(c.arm for c in self.clusters)
        return {1: n1, 0: self.M - n1}

    def without(self, cluster_id: str) -> "TrialDataset":
        return TrialDataset(self.scale, tuple(c for c in self.clusters if c.cluster_id != cluster_id))

    def swap_arms(self) -> "TrialDataset":
        return TrialDataset(
            self.scale,
            tuple(ClusterRecord(c.cluster_id, 1 - c.arm, c.outcomes) for c in self.clusters),
        )

    @classmethod
    def from_ranks(cls, arms: Sequence[int], outcomes: Sequence[Sequence[int]], D: int | None = None,
                   ids: Sequence[str] | None = None) -> "TrialDataset":
        """Convenience constructor from parallel lists of arms and rank vectors."""
        if D is None:
            D = max(2, 1 + max(int(np.max(o)) for o in outcomes))
        if ids is None:
            ids = [f"c{i}" for i in range(len(arms))]
        clusters = tuple(ClusterRecord(i, int(a), o) for i, a, o in zip(ids, arms, outcomes))
        return cls(OrdinalScale.integer(D), clusters)


def validate_dataset(raw: TrialDataset) -> TrialDataset:
    """Check dataset invariants and return it unchanged.

    Raises:
        DuplicateClusterId: two clusters share an id.
        UnknownLevel: a rank falls outside ``0..D-1``.
        ValidationError: a cluster has no individuals.
        EmptyArm: either arm has no clusters.
    """
    seen = set()
    for c in raw.clusters:
        if c.cluster_id in seen:
            raise DuplicateClusterId(f"duplicate cluster id {c.cluster_id!r}")
        seen.add(c.cluster_id)
        if c.size < 1:
            raise ValidationError(f"cluster {c.cluster_id!r} has no individuals")
        if c.outcomes.min() < 0 or c.outcomes.max() >= raw.scale.D:
            raise UnknownLevel(f"cluster {c.cluster_id!r} has an outcome rank outside 0..{raw.scale.D - 1}")
    counts = raw.arm_counts
    if counts[1] == 0 or counts[0] == 0:
        raise EmptyArm(f"need at least one cluster per arm, got {counts[1]} treated and {counts[0]} control")
    return raw


def read_dataset(path, levels: Sequence[str] | None = None) -> TrialDataset:
    """Read a ``cluster_id,arm,outcome`` file with one row per individual.

    The scale comes from ``levels`` (least preferred first), else from a
    sidecar ``<path>.levels`` file holding a comma list, else from the sorted
    distinct outcome labels.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise ParseError(str(exc), path=path) from exc
    with fh:
        sample = fh.read(4096)
        fh.seek(0)
        try:
            dialect = csv.Sniffer().sniff(sample, delimiters=",\t;")
        except csv.Error:
            dialect = csv.excel
        reader = csv.reader(fh, dialect)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", path=path)
        header = [h.strip().lower() for h in header]
        try:
            ci, ai, oi = (header.index(k) for k in ("cluster_id", "arm", "outcome"))
        except ValueError:
            raise ParseError(f"header must contain cluster_id, arm, outcome; got {header}", line=1, path=path) from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) <= max(ci, ai, oi):
                raise ParseError(f"expected at least {max(ci, ai, oi) + 1} fields", line=lineno, path=path)
            arm = row[ai].strip()
            if arm not in ("0", "1"):
                raise ParseError(f"arm must be 0 or 1, got {arm!r}", line=lineno, path=path)
            rows.append((lineno, row[ci].strip(), int(arm), row[oi].strip()))
    if not rows:
        raise ParseError("no data rows", path=path)

    if levels is None:
        sidecar = path.with_name(path.name + ".levels")
        if sidecar.exists():
            levels = [x.strip() for x in sidecar.read_text().strip().split(",")]
    scale = OrdinalScale(tuple(levels)) if levels is not None else OrdinalScale.infer(r[3] for r in rows)

    arms: dict[str, int] = {}
    outcomes: dict[str, list[int]] = {}
    for lineno, cid, arm, label in rows:
        if arms.setdefault(cid, arm) != arm:
            raise ParseError(f"cluster {cid!r} appears in both arms", line=lineno, path=path)
        try:
            outcomes.setdefault(cid, []).append(scale.rank(label))
        except UnknownLevel as exc:
            raise UnknownLevel(f"{path}:{lineno}: {exc}") from None
    clusters = tuple(ClusterRecord(cid, arms[cid], outcomes[cid]) for cid in arms)
    return validate_dataset(TrialDataset(scale, clusters))


def write_dataset(dataset: TrialDataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster_id", "arm", "outcome"])
        for c in dataset.clusters:
            for r in c.outcomes:
                w.writerow([c.cluster_id, c.arm, dataset.scale.label(int(r))])


# ---------------------------------------------------------------------------
# Weight schemes
# ---------------------------------------------------------------------------


class WeightScheme:
    """Weight given to the comparison of a treated and a control cluster."""

    name: str = "scheme"

    def weight(self, ni: int, nj: int):
        raise NotImplementedError

    def weight_matrix(self, ni: np.ndarray, nj: np.ndarray, exact: bool = False) -> np.ndarray:
        ni = np.asarray(ni, dtype=np.int64)
        nj = np.asarray(nj, dtype=np.int64)
        out = np.empty((len(ni), len(nj)), dtype=object if exact else float)
        for a, n in enumerate(ni):
            for b, m in enumerate(nj):
                w = self.weight(int(n), int(m))
                out[a, b] = _exact(w) if exact else float(w)
        _check_weights(out, self.name)
        return out

    def __repr__(self):
        return f"{type(self).__name__}()"


class IndividualPair(WeightScheme):
    name = "individual-pair"

    def weight(self, ni, nj):
        return ni * nj

    def weight_matrix(self, ni, nj, exact=False):
        w = np.outer(np.asarray(ni, dtype=np.int64), np.asarray(nj, dtype=np.int64))
        return w.astype(object) if exact else w


class ClusterPair(WeightScheme):
    name = "cluster-pair"

    def weight(self, ni, nj):
        return 1

    def weight_matrix(self, ni, nj, exact=False):
        w = np.ones((len(ni), len(nj)), dtype=np.int64)
        return w.astype(object) if exact else w


class Custom(WeightScheme):
    """Weight given by ``func(N_i, N_j)``; must be positive and finite."""

    def __init__(self, func: Callable[[int, int], Real], name: str = "custom"):
        self.func = func
        self.name = name

    def weight(self, ni, nj):
        return self.func(ni, nj)

    def __repr__(self):
        return f"Custom(name={self.name!r})"


def _check_weights(w: np.ndarray, name: str) -> None:
    for x in w.flat:
        if not (x > 0) or (isinstance(x, float) and not math.isfinite(x)):
            raise ValidationError(f"{name}: weights must be positive and finite, got {x!r}")


def _exact(x):
    if isinstance(x, (int, np.integer)):
        return int(x)
    return Fraction(x)


# ---------------------------------------------------------------------------
# Win triples and summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WinTriple:
    """Win, loss and tie probabilities from the treated arm's point of view."""

    win: Real
    loss: Real
    tie: Real

    def __post_init__(self):
        vals = (self.win, self.loss, self.tie)
        for v in vals:
            if v < 0 or v > 1:
                raise ValidationError(f"probabilities must lie in [0, 1], got {vals}")
        total = self.win + self.loss + self.tie
        if self.exact:
            if total != 1:
                raise ValidationError(f"win + loss + tie = {total}, expected exactly 1")
        elif abs(total - 1) > TRIPLE_TOL:
            raise ValidationError(f"win + loss + tie = {total!r}, expected 1")

    @property
    def exact(self) -> bool:
        return all(isinstance(v, (int, Fraction)) for v in (self.win, self.loss, self.tie))

    def as_float(self) -> "WinTriple":
        return WinTriple(float(self.win), float(self.loss), float(self.tie))

    def swapped(self) -> "WinTriple":
        return WinTriple(self.loss, self.win, self.tie)

    @classmethod
    def from_counts(cls, wins, losses, ties, exact: bool = True) -> "WinTriple":
        n = wins + losses + ties
        if exact:
            return cls(Fraction(wins, n), Fraction(losses, n), Fraction(ties, n))
        return cls(wins / n, losses / n, ties / n)


@dataclass(frozen=True)
class WinSummary:
    """Win ratio, win odds and win difference.

    ``wr_status`` is ``"infinite"`` when there are wins but no losses, in
    which case ``win_ratio`` is ``math.inf``.
    """

    win_ratio: Real
    win_odds: Real
    win_difference: Real
    wr_status: str = "finite"

    def get(self, estimand: str):
        return {"WR": self.win_ratio, "WO": self.win_odds, "WD": self.win_difference}[estimand]

    def as_float(self) -> "WinSummary":
        return WinSummary(float(self.win_ratio), float(self.win_odds), float(self.win_difference), self.wr_status)

    def as_dict(self) -> dict:
        return {"WR": self.win_ratio, "WO": self.win_odds, "WD": self.win_difference}


ESTIMANDS = ("WR", "WO", "WD")


def summarize(triple: WinTriple) -> WinSummary:
    win, loss, tie = triple.win, triple.loss, triple.tie
    if win == 0 and loss == 0:
        raise UndefinedRatio("all comparisons are ties; win ratio is undefined")
    half = Fraction(1, 2) if triple.exact else 0.5
    if loss == 0:
        wr, status = math.inf, "infinite"
    else:
        wr, status = win / loss, "finite"
    wo = math.inf if loss + half * tie == 0 else (win + half * tie) / (loss + half * tie)
    return WinSummary(wr, wo, win - loss, status)


def summarize_arrays(win: np.ndarray, loss: np.ndarray, tie: np.ndarray) -> dict[str, np.ndarray]:
    """Vectorized :func:`summarize` for float arrays.

    Zero losses give ``inf`` for WR; all-tie entries give ``nan`` for WR
    rather than raising.
    """
    win = np.asarray(win, dtype=float)
    loss = np.asarray(loss, dtype=float)
    tie = np.asarray(tie, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        wr = np.where(loss > 0, win / np.where(loss > 0, loss, 1.0), np.where(win > 0, np.inf, np.nan))
        wo = (win + 0.5 * tie) / (loss + 0.5 * tie)
    return {"WR": wr, "WO": wo, "WD": win - loss}
