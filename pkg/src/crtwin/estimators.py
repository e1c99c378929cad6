"""Individual-pair, cluster-pair and general weighted win estimators.

Every treated/control cluster pair ``(i, j)`` contributes
``w_ij * count_ij / (N_i N_j)`` to the win, loss and tie numerators and
``w_ij`` to the common denominator. The per-pair table is kept so that a
leave-one-cluster-out estimate only needs one row or column sum removed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import (
    ClusterPair,
    IndividualPair,
    TrialDataset,
    WeightScheme,
    WinSummary,
    WinTriple,
    summarize,
    validate_dataset,
)
from .errors import DegenerateDeletion, EmptyArm, UnknownCluster
from .pairs import PairCounts, count_matrices, fast_counts, histograms, pair_fractions


@dataclass(frozen=True)
class PairContribution:
    treated_cluster_id: str
    control_cluster_id: str
    weight: object
    fraction_triple: WinTriple
    sizes: tuple[int, int]


def _require_both_arms(treated_ids, control_ids) -> None:
    if not treated_ids or not control_ids:
        raise EmptyArm("both arms need at least one cluster")


def _total(x: np.ndarray):
    # integer and Fraction sums are exact; floats get a correctly rounded sum
    if x.dtype.kind == "f":
        return math.fsum(x.tolist())
    return sum(x.tolist())


class PairTable:
    """Per cluster-pair counts and weights for one dataset and scheme."""

    def __init__(self, treated_ids, control_ids, hist_treated, hist_control, scheme: WeightScheme,
                 exact: bool = False, cluster_order=None):
        self.scheme = scheme
        self.exact = exact
        self.treated_ids = tuple(treated_ids)
        self.control_ids = tuple(control_ids)
        _require_both_arms(self.treated_ids, self.control_ids)
        hist_treated = np.asarray(hist_treated, dtype=np.int64)
        hist_control = np.asarray(hist_control, dtype=np.int64)
        self.treated_sizes = hist_treated.sum(axis=1)
        self.control_sizes = hist_control.sum(axis=1)
        self.wins, self.losses, self.ties = count_matrices(hist_treated, hist_control)
        self.n_pairs = np.outer(self.treated_sizes, self.control_sizes)
        self.weights = scheme.weight_matrix(self.treated_sizes, self.control_sizes, exact=exact)
        self._index = {cid: (1, k) for k, cid in enumerate(self.treated_ids)}
        self._index.update({cid: (0, k) for k, cid in enumerate(self.control_ids)})
        if cluster_order is None:
            cluster_order = self.treated_ids + self.control_ids
        self.cluster_order = tuple(cluster_order)
        self._build_sums()

    @classmethod
    def from_dataset(cls, dataset: TrialDataset, scheme: WeightScheme, exact: bool = False) -> "PairTable":
        treated, control = dataset.treated, dataset.control
        D = dataset.scale.D
        return cls(
            [c.cluster_id for c in treated],
            [c.cluster_id for c in control],
            histograms([c.outcomes for c in treated], D),
            histograms([c.outcomes for c in control], D),
            scheme,
            exact,
            [c.cluster_id for c in dataset.clusters],
        )

    @classmethod
    def from_histograms(cls, arms, hists, scheme: WeightScheme, exact: bool = False, ids=None) -> "PairTable":
        """Table from per-cluster category counts ``hists`` (shape ``(M, D)``) and 0/1 ``arms``."""
        arms = np.asarray(arms)
        hists = np.asarray(hists)
        ids = [f"c{i}" for i in range(len(arms))] if ids is None else list(ids)
        t = np.flatnonzero(arms == 1)
        c = np.flatnonzero(arms == 0)
        return cls([ids[i] for i in t], [ids[i] for i in c], hists[t], hists[c], scheme, exact, ids)

    def _numerators(self):
        counts = (self.wins, self.losses, self.ties)
        if isinstance(self.scheme, IndividualPair):
            # w_ij / (N_i N_j) == 1, so the numerators are the raw integer counts
            nums = counts
            den = self.n_pairs
            if self.exact:
                nums = tuple(c.astype(object) for c in nums)
                den = den.astype(object)
            return nums, den
        if self.exact:
            nn = self.n_pairs.astype(object)
            w = self.weights
            nums = tuple(
                np.frompyfunc(lambda a, b, c: Fraction(a) * b / c, 3, 1)(w, cnt.astype(object), nn) for cnt in counts
            )
            return nums, w
        w = np.asarray(self.weights, dtype=float)
        nn = self.n_pairs.astype(float)
        return tuple(w * (cnt / nn) for cnt in counts), w

    def _build_sums(self):
        nums, den = self._numerators()
        self._nums = nums
        self._den = den
        # row sums (treated clusters) and column sums (control clusters)
        self._row = [np.sum(x, axis=1) for x in (*nums, den)]
        self._col = [np.sum(x, axis=0) for x in (*nums, den)]
        self._tot = [_total(r) for r in self._row]

    def _triple(self, nw, nl, nt, d) -> WinTriple:
        if self.exact:
            d = Fraction(d)
            return WinTriple(Fraction(nw) / d, Fraction(nl) / d, Fraction(nt) / d)
        d = float(d)
        return WinTriple(float(nw) / d, float(nl) / d, float(nt) / d)

    def triple(self) -> WinTriple:
        return self._triple(*self._tot)

    def contributions(self) -> list[PairContribution]:
        out = []
        for a, ti in enumerate(self.treated_ids):
            for b, cj in enumerate(self.control_ids):
                counts = PairCounts(
                    int(self.wins[a, b]), int(self.losses[a, b]), int(self.ties[a, b]), int(self.n_pairs[a, b])
                )
                out.append(
                    PairContribution(
                        ti,
                        cj,
                        self.weights[a, b],
                        pair_fractions(counts, exact=self.exact),
                        (int(self.treated_sizes[a]), int(self.control_sizes[b])),
                    )
                )
        return out

    def delete(self, cluster_id: str) -> WinTriple:
        """Estimate with every comparison involving ``cluster_id`` removed."""
        try:
            arm, k = self._index[cluster_id]
        except KeyError:
            raise UnknownCluster(f"cluster {cluster_id!r} is not in the dataset") from None
        n_arm = len(self.treated_ids) if arm == 1 else len(self.control_ids)
        if n_arm == 1:
            side = "treated" if arm == 1 else "control"
            raise DegenerateDeletion(f"deleting {cluster_id!r} leaves no {side} clusters")
        part = self._row if arm == 1 else self._col
        return self._triple(*(tot - p[k] for tot, p in zip(self._tot, part)))

    def leave_one_out(self):
        """Leave-one-out win, loss and tie arrays in dataset cluster order.

        Returned arrays are float, or object arrays of Fractions in exact mode.
        """
        if len(self.treated_ids) < 2 or len(self.control_ids) < 2:
            raise DegenerateDeletion("an arm has a single cluster; leave-one-out would empty it")
        dtype = object if self.exact else float
        vals = np.empty((4, len(self.cluster_order)), dtype=dtype)
        where = {cid: p for p, cid in enumerate(self.cluster_order)}
        pos_t = [where[c] for c in self.treated_ids]
        pos_c = [where[c] for c in self.control_ids]
        for q in range(4):
            tot = self._tot[q]
            vals[q, pos_t] = [tot - x for x in self._row[q].tolist()]
            vals[q, pos_c] = [tot - x for x in self._col[q].tolist()]
        if self.exact:
            den = vals[3]
            return tuple(np.array([Fraction(n) / Fraction(d) for n, d in zip(vals[q], den)], dtype=object)
                         for q in range(3))
        return vals[0] / vals[3], vals[1] / vals[3], vals[2] / vals[3]


def estimate_triple(dataset: TrialDataset, scheme: WeightScheme, exact: bool = False):
    """Weighted win/loss/tie estimate and the per-pair table behind it."""
    validate_dataset(dataset)
    table = PairTable.from_dataset(dataset, scheme, exact=exact)
    return table.triple(), table


def estimate_summary(dataset: TrialDataset, scheme: WeightScheme, exact: bool = False):
    triple, _ = estimate_triple(dataset, scheme, exact=exact)
    return summarize(triple), triple


def pooled_individual_triple(dataset: TrialDataset) -> WinTriple:
    """Individual-pair estimate as one pooled double sum over individuals.

    Independent of :class:`PairTable`; used as a cross-check.
    """
    validate_dataset(dataset)
    total = PairCounts(0, 0, 0, 0)
    for ci in dataset.treated:
        for cj in dataset.control:
            total = total + fast_counts(ci.outcomes, cj.outcomes)
    return pair_fractions(total, exact=True)


SCHEMES = {"individual-pair": IndividualPair, "cluster-pair": ClusterPair}


def estimate_all_levels(dataset: TrialDataset, exact: bool = False) -> dict[str, WinSummary]:
    return {name: estimate_summary(dataset, cls(), exact=exact)[0] for name, cls in SCHEMES.items()}


class SeparableTable:
    """Row/column sums for weights of the form ``f(N_i) g(N_j)``, without the pair table.

    For such weights every pair sum factorizes into a treated-side vector
    times a control-side vector, so estimation and all leave-one-out
    replicates cost ``O(M D)`` memory and time. Supports the individual-pair
    and cluster-pair schemes in float mode; exposes the same
    ``triple``/``delete``/``leave_one_out`` interface as :class:`PairTable`.
    """

    exact = False

    def __init__(self, treated_ids, control_ids, hist_treated, hist_control, scheme: WeightScheme,
                 cluster_order=None):
        if not isinstance(scheme, (IndividualPair, ClusterPair)):
            raise TypeError("SeparableTable supports the individual-pair and cluster-pair schemes only")
        self.scheme = scheme
        self.treated_ids = tuple(treated_ids)
        self.control_ids = tuple(control_ids)
        _require_both_arms(self.treated_ids, self.control_ids)
        ht = np.asarray(hist_treated, dtype=np.int64)
        hc = np.asarray(hist_control, dtype=np.int64)
        nt, nc = ht.sum(axis=1), hc.sum(axis=1)
        cum = np.cumsum(hc, axis=1)
        below = np.concatenate([np.zeros((hc.shape[0], 1), dtype=np.int64), cum[:, :-1]], axis=1)
        above = cum[:, -1:] - cum
        control_parts = (below, above, hc)
        if isinstance(scheme, IndividualPair):
            # all integer: f/N == 1 on both sides
            a = ht
            b = [x.sum(axis=0) for x in control_parts]
            A = ht.sum(axis=0)
            f_t, g_c = nt, nc
            rows = [a @ bk for bk in b]
            cols = [x @ A for x in control_parts]
        else:
            a = ht / nt[:, None]
            ctrl = [x / nc[:, None] for x in control_parts]
            b = [np.array([math.fsum(col) for col in x.T]) for x in ctrl]
            A = np.array([math.fsum(col) for col in a.T])
            f_t, g_c = np.ones(len(nt)), np.ones(len(nc))
            rows = [a @ bk for bk in b]
            cols = [x @ A for x in ctrl]
        F, G = _total(f_t), _total(g_c)
        self._row = rows + [f_t * G]
        self._col = cols + [g_c * F]
        self._tot = [_total(r) for r in rows] + [F * G]
        self._index = {cid: (1, k) for k, cid in enumerate(self.treated_ids)}
        self._index.update({cid: (0, k) for k, cid in enumerate(self.control_ids)})
        self.cluster_order = tuple(cluster_order) if cluster_order is not None else self.treated_ids + self.control_ids

    @classmethod
    def from_histograms(cls, arms, hists, scheme: WeightScheme, ids=None) -> "SeparableTable":
        arms = np.asarray(arms)
        hists = np.asarray(hists)
        ids = [f"c{i}" for i in range(len(arms))] if ids is None else list(ids)
        t = np.flatnonzero(arms == 1)
        c = np.flatnonzero(arms == 0)
        return cls([ids[i] for i in t], [ids[i] for i in c], hists[t], hists[c], scheme, ids)

    _triple = PairTable._triple
    triple = PairTable.triple
    delete = PairTable.delete
    leave_one_out = PairTable.leave_one_out


def table_from_histograms(arms, hists, scheme: WeightScheme, max_pairs: int = 4_000_000):
    """:class:`PairTable`, or :class:`SeparableTable` once the pair table would exceed ``max_pairs``."""
    arms = np.asarray(arms)
    n1 = int(arms.sum())
    if n1 * (len(arms) - n1) > max_pairs and isinstance(scheme, (IndividualPair, ClusterPair)):
        return SeparableTable.from_histograms(arms, hists, scheme)
    return PairTable.from_histograms(arms, hists, scheme)
