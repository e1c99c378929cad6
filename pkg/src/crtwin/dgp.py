"""Latent proportional-odds data generator for clustered ordinal trials.

For cluster ``i`` of type ``t`` with random intercept ``alpha_i ~ N(0, sd^2)``,
individual ``k`` has latent outcome

    Y*_ik(z) = mu_t + z * delta_t + alpha_i + eps_ik,   eps_ik ~ Logistic(0, 1)

and ``Y_ik(z) = r`` when ``theta_{r-1} < Y*_ik(z) <= theta_r``. Hence
``P(Y_ik(z) <= r | alpha_i, t) = expit(theta_r - mu_t - z delta_t - alpha_i)``.
Both potential outcomes share ``alpha_i`` and ``eps_ik``.

Cluster sizes are uniform on ``{L_t..U_t}``, then passed through a named
size link that may tie them to ``alpha_i`` through ``gamma``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import ClusterRecord, OrdinalScale, TrialDataset
from .errors import InvalidConfig, ParseError
from .oracle import tomllib


# ---------------------------------------------------------------------------
# Size links
# ---------------------------------------------------------------------------


class SizeLink:
    """Maps a base size drawn from ``{L..U}`` and ``alpha`` to a cluster size."""

    name = "base"

    def sample(self, base: np.ndarray, alpha: np.ndarray, gamma: float, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def expected_size(self, low: int, high: int, alpha: np.ndarray, gamma: float) -> np.ndarray:
        """``E[N | alpha, type]`` for a type with size range ``low..high``."""
        raise NotImplementedError

    def breakpoints(self, low: int, high: int, gamma: float) -> np.ndarray:
        """Values of ``alpha`` where ``expected_size`` is not smooth."""
        return np.empty(0)

    def depends_on_alpha(self, gamma: float) -> bool:
        return False


class NoLink(SizeLink):
    """Sizes ignore ``alpha`` whatever ``gamma`` is."""

    name = "none"

    def sample(self, base, alpha, gamma, rng):
        return np.asarray(base, dtype=np.int64)

    def expected_size(self, low, high, alpha, gamma):
        return np.full(np.shape(alpha), (low + high) / 2)


class MeanScaledLink(SizeLink):
    """``N = max(1, R(base * exp(gamma * alpha)))`` with unbiased stochastic rounding ``R``.

    Stochastic rounding keeps ``E[N | alpha, base] = max(1, base * exp(gamma * alpha))``
    exactly, so truths can be integrated without a rounding staircase.
    """

    name = "mean-scaled"

    def sample(self, base, alpha, gamma, rng):
        x = np.asarray(base, dtype=float) * np.exp(gamma * np.asarray(alpha, dtype=float))
        fl = np.floor(x)
        n = fl + (rng.random(x.shape) < (x - fl))
        return np.maximum(n, 1).astype(np.int64)

    def expected_size(self, low, high, alpha, gamma):
        alpha = np.asarray(alpha, dtype=float)
        scale = np.exp(gamma * alpha)
        n = np.arange(low, high + 1, dtype=float)
        return np.maximum(1.0, n[:, None] * scale[None, :]).mean(axis=0).reshape(alpha.shape)

    def breakpoints(self, low, high, gamma):
        if gamma == 0:
            return np.empty(0)
        n = np.arange(max(low, 2), high + 1, dtype=float)
        return np.sort(-np.log(n) / gamma)

    def depends_on_alpha(self, gamma):
        return gamma != 0


SIZE_LINKS: dict[str, SizeLink] = {link.name: link for link in (MeanScaledLink(), NoLink())}


def get_link(name: str) -> SizeLink:
    try:
        return SIZE_LINKS[name]
    except KeyError:
        raise InvalidConfig(f"unknown size link {name!r}; choose from {sorted(SIZE_LINKS)}", "gamma_link") from None


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterType:
    probability: float
    latent_baseline: float
    latent_effect: float
    size_range: tuple[int, int]

    @property
    def mean_size(self) -> float:
        return (self.size_range[0] + self.size_range[1]) / 2


@dataclass(frozen=True)
class DgpConfig:
    """Simulation settings. ``intercept_sd`` is the SD of ``alpha`` (not its variance)."""

    clusters: int
    cut_points: tuple[float, ...]
    intercept_sd: float
    types: tuple[ClusterType, ...]
    gamma: float = 0.0
    gamma_link: str = "mean-scaled"
    replicates: int = 500
    seed: int = 20240601
    treatment_probability: float = 0.5
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "cut_points", tuple(float(x) for x in self.cut_points))
        object.__setattr__(self, "types", tuple(self.types))
        validate_config(self)

    @property
    def D(self) -> int:
        return len(self.cut_points) + 1

    @property
    def link(self) -> SizeLink:
        return get_link(self.gamma_link)

    def with_(self, **changes) -> "DgpConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cut_points"] = list(self.cut_points)
        d["types"] = [dict(asdict(t), size_range=list(t.size_range)) for t in self.types]
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def validate_config(cfg: DgpConfig) -> None:
    if cfg.clusters < 2:
        raise InvalidConfig(f"need at least 2 clusters, got {cfg.clusters}", "clusters")
    cuts = cfg.cut_points
    if len(cuts) < 1 or any(b <= a for a, b in zip(cuts, cuts[1:])) or not all(map(math.isfinite, cuts)):
        raise InvalidConfig(f"cut points must be finite and strictly increasing, got {cuts}", "cut_points")
    if not (cfg.intercept_sd >= 0 and math.isfinite(cfg.intercept_sd)):
        raise InvalidConfig(f"must be a finite nonnegative number, got {cfg.intercept_sd}", "intercept_sd")
    if not cfg.types:
        raise InvalidConfig("at least one cluster type is required", "type")
    for k, t in enumerate(cfg.types):
        where = f"type[{k}]"
        if not 0 <= t.probability <= 1:
            raise InvalidConfig(f"probability must be in [0, 1], got {t.probability}", f"{where}.probability")
        lo, hi = t.size_range
        if int(lo) != lo or int(hi) != hi or not 1 <= lo <= hi:
            raise InvalidConfig(f"need integers 1 <= L <= U, got {t.size_range}", f"{where}.size_range")
    if abs(sum(t.probability for t in cfg.types) - 1) > 1e-9:
        raise InvalidConfig("type probabilities must sum to 1", "type.probability")
    if not 0 < cfg.treatment_probability < 1:
        raise InvalidConfig("must be in (0, 1)", "treatment_probability")
    if cfg.replicates < 1:
        raise InvalidConfig("must be at least 1", "replicates")
    get_link(cfg.gamma_link)


def parse_config(doc: Mapping, name: str = "") -> DgpConfig:
    """Build a config from a parsed TOML document (see ``presets/*.toml``)."""
    try:
        types = tuple(
            ClusterType(
                probability=float(t["probability"]),
                latent_baseline=float(t["latent_baseline"]),
                latent_effect=float(t["latent_effect"]),
                size_range=(int(t["size_range"][0]), int(t["size_range"][1])),
            )
            for t in doc["type"]
        )
        kwargs = dict(
            clusters=int(doc["clusters"]),
            cut_points=tuple(doc["cut_points"]),
            intercept_sd=float(doc["intercept_sd"]),
            types=types,
            name=str(doc.get("name", name)),
        )
    except KeyError as exc:
        raise InvalidConfig("missing", exc.args[0]) from None
    except (TypeError, ValueError, IndexError) as exc:
        raise InvalidConfig(str(exc)) from None
    for key, cast in (("gamma", float), ("gamma_link", str), ("replicates", int), ("seed", int),
                      ("treatment_probability", float)):
        if key in doc:
            kwargs[key] = cast(doc[key])
    if "categories" in doc and int(doc["categories"]) != len(kwargs["cut_points"]) + 1:
        raise InvalidConfig("must equal len(cut_points) + 1", "categories")
    return DgpConfig(**kwargs)


def load_config(path) -> DgpConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ParseError(str(exc), path=path) from exc
    return parse_config(doc, name=path.stem)


PRESET_DIR = Path(__file__).parent / "presets"


def preset(name: str) -> DgpConfig:
    """Bundled configs: ``"no_ics"`` and ``"ics"``."""
    return load_config(PRESET_DIR / f"{name}.toml")


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Philox stream for one replicate, keyed on ``(seed, replicate)``.

    Streams do not depend on how replicates are scheduled across workers.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replicate)])))


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


@dataclass
class SimulatedTrial:
    """Cluster-level draws plus individual potential outcomes (ranks)."""

    types: np.ndarray
    alpha: np.ndarray
    sizes: np.ndarray
    arms: np.ndarray
    y1: np.ndarray
    y0: np.ndarray
    D: int
    offsets: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.offsets is None:
            self.offsets = np.concatenate(([0], np.cumsum(self.sizes)))

    @property
    def observed(self) -> np.ndarray:
        cluster_of = np.repeat(np.arange(len(self.sizes)), self.sizes)
        return np.where(self.arms[cluster_of] == 1, self.y1, self.y0)

    def histograms(self) -> np.ndarray:
        """Observed-outcome category counts, shape ``(M, D)``."""
        M = len(self.sizes)
        cluster_of = np.repeat(np.arange(M), self.sizes)
        return np.bincount(cluster_of * self.D + self.observed, minlength=M * self.D).reshape(M, self.D)

    def dataset(self, prefix: str = "c") -> TrialDataset:
        obs = self.observed
        clusters = tuple(
            ClusterRecord(f"{prefix}{i}", int(self.arms[i]), obs[self.offsets[i]:self.offsets[i + 1]])
            for i in range(len(self.sizes))
        )
        return TrialDataset(OrdinalScale.integer(self.D), clusters)


def draw_clusters(config: DgpConfig, rng: np.random.Generator, M: int | None = None) -> SimulatedTrial:
    M = config.clusters if M is None else M
    p = np.array([t.probability for t in config.types])
    mu = np.array([t.latent_baseline for t in config.types])
    delta = np.array([t.latent_effect for t in config.types])
    lo = np.array([t.size_range[0] for t in config.types])
    hi = np.array([t.size_range[1] for t in config.types])

    types = rng.choice(len(p), size=M, p=p / p.sum())
    alpha = rng.normal(0.0, config.intercept_sd, size=M)
    base = rng.integers(lo[types], hi[types] + 1)
    sizes = config.link.sample(base, alpha, config.gamma, rng)
    arms = (rng.random(M) < config.treatment_probability).astype(np.int64)

    cluster_of = np.repeat(np.arange(M), sizes)
    eta0 = (mu[types] + alpha)[cluster_of]
    latent = eta0 + rng.logistic(size=cluster_of.shape[0])
    cuts = np.asarray(config.cut_points)
    y0 = np.searchsorted(cuts, latent, side="left")
    y1 = np.searchsorted(cuts, latent + delta[types][cluster_of], side="left")
    return SimulatedTrial(types, alpha, sizes, arms, y1, y0, config.D)


def generate_cluster(config: DgpConfig, rng: np.random.Generator) -> SimulatedTrial:
    """Draw one cluster; the result holds a single cluster with both potential outcome vectors."""
    return draw_clusters(config, rng, M=1)


def generate_trial(config: DgpConfig, seed: int, replicate: int = 0) -> TrialDataset:
    return draw_clusters(config, replicate_rng(seed, replicate)).dataset()
