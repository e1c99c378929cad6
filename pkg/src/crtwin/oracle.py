"""Exact win estimands for a superpopulation of cluster types.

Clusters in a cross-arm pair are drawn independently, so

    tau_win = sum_{a > b} P1(a) * P0(b)

where ``P1``/``P0`` are the treated/control marginals under the chosen
weighting: size-weighted for the individual-pair estimand, unweighted for
the cluster-pair estimand. A non-separable pair weight ``w(N_i, N_j)`` has
no marginal form, so :func:`estimand_triple` also offers a direct sum over
pairs of types and sizes.

Everything is computed with :class:`fractions.Fraction` unless the inputs
are floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import (
    ClusterPair,
    ClusterRecord,
    IndividualPair,
    OrdinalScale,
    TrialDataset,
    WeightScheme,
    WinSummary,
    WinTriple,
    summarize,
)
from .errors import InvalidSpec, ParseError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def as_fraction(x) -> Fraction:
    """Exact value of an int, Fraction, ``"a/b"`` string or decimal float."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def _normalize(vec, field) -> tuple[Fraction, ...]:
    vals = tuple(as_fraction(v) for v in vec)
    if any(v < 0 for v in vals):
        raise InvalidSpec("entries must be nonnegative", field)
    total = sum(vals)
    if total <= 0:
        raise InvalidSpec("entries must not all be zero", field)
    return tuple(v / total for v in vals)


@dataclass(frozen=True)
class ClusterTypeSpec:
    """One cluster type.

    ``size`` is a fixed integer or a mapping ``{size: probability}``.
    ``dist_treated``/``dist_control`` are category counts or probabilities in
    rank order (least preferred first); they are normalized on construction.
    """

    type_id: str
    probability: Fraction
    size: int | Mapping[int, Fraction]
    dist_treated: tuple[Fraction, ...]
    dist_control: tuple[Fraction, ...]

    def __post_init__(self):
        where = f"type[{self.type_id}]"
        p = as_fraction(self.probability)
        if not 0 < p <= 1:
            raise InvalidSpec(f"probability must be in (0, 1], got {p}", f"{where}.probability")
        object.__setattr__(self, "probability", p)
        if isinstance(self.size, Mapping):
            dist = {int(k): as_fraction(v) for k, v in self.size.items()}
            if not dist or any(k < 1 for k in dist) or any(v < 0 for v in dist.values()):
                raise InvalidSpec("size distribution needs positive sizes and nonnegative probabilities", f"{where}.size")
            if sum(dist.values()) != 1:
                raise InvalidSpec(f"size probabilities sum to {sum(dist.values())}, expected 1", f"{where}.size")
            object.__setattr__(self, "size", dist)
        else:
            if int(self.size) != self.size or self.size < 1:
                raise InvalidSpec(f"size must be a positive integer, got {self.size}", f"{where}.size")
            object.__setattr__(self, "size", int(self.size))
        t = _normalize(self.dist_treated, f"{where}.treated")
        c = _normalize(self.dist_control, f"{where}.control")
        if len(t) != len(c):
            raise InvalidSpec("treated and control vectors differ in length", where)
        object.__setattr__(self, "dist_treated", t)
        object.__setattr__(self, "dist_control", c)

    @property
    def size_distribution(self) -> dict[int, Fraction]:
        if isinstance(self.size, int):
            return {self.size: Fraction(1)}
        return dict(self.size)

    @property
    def mean_size(self) -> Fraction:
        return sum(n * q for n, q in self.size_distribution.items())

    def expected(self, f: Callable[[int], Real]) -> Fraction:
        return sum(as_fraction(f(n)) * q for n, q in self.size_distribution.items())


@dataclass(frozen=True)
class SuperpopulationSpec:
    scale: OrdinalScale
    types: tuple[ClusterTypeSpec, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        if not self.types:
            raise InvalidSpec("at least one cluster type is required", "type")
        total = sum(t.probability for t in self.types)
        if total != 1:
            raise InvalidSpec(f"type probabilities sum to {total}, expected 1", "type.probability")
        for t in self.types:
            if len(t.dist_treated) != self.scale.D:
                raise InvalidSpec(f"expected {self.scale.D} categories, got {len(t.dist_treated)}", f"type[{t.type_id}]")
        ids = [t.type_id for t in self.types]
        if len(set(ids)) != len(ids):
            raise InvalidSpec("duplicate type ids", "type.id")


@dataclass(frozen=True)
class MarginalPair:
    treated: tuple
    control: tuple
    weighting: str

    def __post_init__(self):
        for name, m in (("treated", self.treated), ("control", self.control)):
            if abs(sum(m) - 1) > 1e-12:
                raise InvalidSpec(f"{name} marginal sums to {sum(m)}", name)


def _size_weight(weighting) -> tuple[str, Callable[[int], Real]]:
    if weighting in ("individual", "individual-pair") or isinstance(weighting, IndividualPair):
        return "individual", lambda n: n
    if weighting in ("cluster", "cluster-pair") or isinstance(weighting, ClusterPair):
        return "cluster", lambda n: 1
    if callable(weighting) and not isinstance(weighting, WeightScheme):
        return "size-weighted", weighting
    raise InvalidSpec(
        f"marginals need 'individual', 'cluster' or a per-cluster size weight f(N), got {weighting!r}", "weighting"
    )


def marginals(spec: SuperpopulationSpec, weighting="individual") -> MarginalPair:
    """Treated and control category marginals under a separable weighting.

    ``weighting`` is ``"individual"`` (each cluster weighted by ``E[N|t]``),
    ``"cluster"`` (unweighted), or a function ``f(N)`` giving the pair weight
    ``f(N_i) f(N_j)``.
    """
    name, f = _size_weight(weighting)
    wts = [t.probability * t.expected(f) for t in spec.types]
    total = sum(wts)
    if total <= 0:
        raise InvalidSpec("weights sum to zero", "weighting")
    D = spec.scale.D
    treated = tuple(sum(w * t.dist_treated[c] for w, t in zip(wts, spec.types)) / total for c in range(D))
    control = tuple(sum(w * t.dist_control[c] for w, t in zip(wts, spec.types)) / total for c in range(D))
    return MarginalPair(treated, control, name)


def _win_loss_tie(p1: Sequence, p0: Sequence):
    D = len(p1)
    win = sum(p1[a] * p0[b] for a in range(D) for b in range(a))
    loss = sum(p1[a] * p0[b] for a in range(D) for b in range(a + 1, D))
    tie = sum(p1[a] * p0[a] for a in range(D))
    return win, loss, tie


def win_triple_from_marginals(m: MarginalPair) -> WinTriple:
    return WinTriple(*_win_loss_tie(m.treated, m.control))


def estimand_triple(spec: SuperpopulationSpec, scheme: WeightScheme) -> WinTriple:
    """Weighted estimand by direct summation over (type, size) pairs.

    Handles any pair weight ``w(N_i, N_j)``; for separable weights it agrees
    with ``win_triple_from_marginals(marginals(...))``.
    """
    num = [Fraction(0)] * 3
    den = Fraction(0)
    for ti in spec.types:
        for tj in spec.types:
            pair = _win_loss_tie(ti.dist_treated, tj.dist_control)
            for n, qn in ti.size_distribution.items():
                for m, qm in tj.size_distribution.items():
                    w = ti.probability * tj.probability * qn * qm * as_fraction(scheme.weight(n, m))
                    den += w
                    for k in range(3):
                        num[k] += w * pair[k]
    return WinTriple(*(x / den for x in num))


def estimands(spec: SuperpopulationSpec, weighting="individual") -> WinSummary:
    if isinstance(weighting, WeightScheme) and not isinstance(weighting, (IndividualPair, ClusterPair)):
        return summarize(estimand_triple(spec, weighting))
    return summarize(win_triple_from_marginals(marginals(spec, weighting)))


@dataclass(frozen=True)
class CollapseReport:
    ics: str
    sizes_equal: bool
    baseline_depends_on_size: bool
    effect_depends_on_size: bool
    individual: WinSummary
    cluster: WinSummary
    estimands_equal: bool


def _varies_with_size(spec: SuperpopulationSpec, vec: Callable[[ClusterTypeSpec], tuple]) -> bool:
    # average the vector within each mean-size class, then compare classes
    classes: dict[Fraction, list] = {}
    for t in spec.types:
        classes.setdefault(t.mean_size, []).append(t)
    avgs = []
    for members in classes.values():
        p = sum(t.probability for t in members)
        avgs.append(tuple(sum(t.probability * vec(t)[c] for t in members) / p for c in range(spec.scale.D)))
    return len(set(avgs)) > 1


def collapse_check(spec: SuperpopulationSpec) -> CollapseReport:
    """Classify informative cluster size and compare the two estimands.

    Type I: the control-arm distribution differs between size classes.
    Type II: the treated-minus-control distribution shift differs between
    size classes.
    """
    sizes_equal = len({t.mean_size for t in spec.types}) == 1
    base = _varies_with_size(spec, lambda t: t.dist_control)
    eff = _varies_with_size(spec, lambda t: tuple(a - b for a, b in zip(t.dist_treated, t.dist_control)))
    if base and eff:
        ics = "type I and II"
    elif base:
        ics = "type I"
    elif eff:
        ics = "type II"
    else:
        ics = "none"
    ind = estimands(spec, "individual")
    clus = estimands(spec, "cluster")
    return CollapseReport(ics, sizes_equal, base, eff, ind, clus, ind == clus)


def realize(spec: SuperpopulationSpec) -> TrialDataset:
    """Observed dataset with one treated and one control cluster per type.

    Requires fixed sizes and integral category counts. The treated copy of
    type ``t`` is ``"<t>-trt"`` and uses the treated column; the control copy
    ``"<t>-ctl"`` uses the control column. With equal type probabilities the
    estimators on this dataset equal the estimands exactly.
    """
    clusters = []
    for t in spec.types:
        if not isinstance(t.size, int):
            raise InvalidSpec("realize needs a fixed size", f"type[{t.type_id}].size")
        for arm, dist, tag in ((1, t.dist_treated, "trt"), (0, t.dist_control, "ctl")):
            counts = [p * t.size for p in dist]
            if any(c.denominator != 1 for c in counts):
                raise InvalidSpec("category counts are not integers", f"type[{t.type_id}]")
            ranks = np.repeat(np.arange(spec.scale.D), [int(c) for c in counts])
            clusters.append(ClusterRecord(f"{t.type_id}-{tag}", arm, ranks))
    return TrialDataset(spec.scale, tuple(clusters))


# ---------------------------------------------------------------------------
# Spec files
# ---------------------------------------------------------------------------


def parse_spec(doc: Mapping, name: str = "") -> SuperpopulationSpec:
    """Build a spec from a parsed TOML document.

    Layout::

        levels = ["A", "B", "C"]
        preference = "descending"   # first level is best; default "ascending"

        [[type]]
        id = 1
        probability = "1/4"         # optional if omitted for every type
        size = 1000                 # or { "80" = "1/2", "180" = "1/2" }
        treated = [500, 250, 250]   # counts or probabilities, in `levels` order
        control = [300, 200, 500]
    """
    if "levels" not in doc:
        raise InvalidSpec("missing", "levels")
    levels = [str(x) for x in doc["levels"]]
    pref = doc.get("preference", "ascending")
    if pref not in ("ascending", "descending"):
        raise InvalidSpec("must be 'ascending' or 'descending'", "preference")
    flip = pref == "descending"
    scale = OrdinalScale(tuple(reversed(levels)) if flip else tuple(levels))
    raw_types = doc.get("type")
    if not raw_types:
        raise InvalidSpec("at least one [[type]] block is required", "type")
    given = ["probability" in t for t in raw_types]
    if any(given) and not all(given):
        raise InvalidSpec("give probability for every type or for none", "type.probability")
    types = []
    for k, raw in enumerate(raw_types):
        tid = str(raw.get("id", k + 1))
        for key in ("size", "treated", "control"):
            if key not in raw:
                raise InvalidSpec("missing", f"type[{tid}].{key}")
        for key in ("treated", "control"):
            if len(raw[key]) != len(levels):
                raise InvalidSpec(f"expected {len(levels)} entries, got {len(raw[key])}", f"type[{tid}].{key}")
        treated = list(raw["treated"])
        control = list(raw["control"])
        if flip:
            treated.reverse()
            control.reverse()
        try:
            prob = as_fraction(raw["probability"]) if all(given) else Fraction(1, len(raw_types))
            size = raw["size"]
            if isinstance(size, Mapping):
                size = {int(n): as_fraction(q) for n, q in size.items()}
            types.append(ClusterTypeSpec(tid, prob, size, tuple(treated), tuple(control)))
        except (ValueError, ZeroDivisionError, TypeError) as exc:
            raise InvalidSpec(str(exc), f"type[{tid}]") from exc
    return SuperpopulationSpec(scale, tuple(types), name=str(doc.get("name", name)))


def load_spec(path) -> SuperpopulationSpec:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ParseError(str(exc), path=path) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(str(exc), path=path) from exc
    return parse_spec(doc, name=path.stem)
