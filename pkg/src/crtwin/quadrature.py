"""True individual-pair and cluster-pair estimands for a :class:`DgpConfig`.

Two clusters in a cross-arm pair are independent, and given its type and
intercept a cluster's outcomes are iid. So the expected within-pair win
fraction is ``sum_{a>b} pi_i^(1)(a) pi_j^(0)(b)`` with ``pi`` the category
probabilities conditional on ``alpha``, and

* the cluster-pair truth uses the marginals ``sum_t p_t E_alpha[pi_t^(z)]``;
* the individual-pair truth uses the size-weighted marginals
  ``sum_t p_t E_alpha[E[N | alpha, t] pi_t^(z)] / sum_t p_t E_alpha[E[N | alpha, t]]``.

The sharing of ``alpha`` between individuals of one cluster does not enter
either expectation. When sizes do not depend on ``alpha``, ``E[N | alpha, t]``
is the constant ``(L_t + U_t) / 2`` and both marginals only need
``E_alpha[pi_t^(z)]``, computed by Gauss-Hermite quadrature. Otherwise the
size-weighted integrals use composite Gauss-Legendre panels split at the
kinks of ``E[N | alpha, t]``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import expit

from .data import WinSummary, WinTriple, summarize
from .dgp import DgpConfig
from .errors import InvalidConfig
from .oracle import MarginalPair, win_triple_from_marginals

DEFAULT_NODES = 64
_GL_NODES = 24
_TAIL_SDS = 12.0


@lru_cache(maxsize=None)
def _hermite(n: int):
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / w.sum()


@lru_cache(maxsize=None)
def _legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def conditional_probs(eta, cut_points) -> np.ndarray:
    """Category probabilities given the linear predictor; shape ``(len(eta), D)``."""
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    cum = expit(np.asarray(cut_points)[None, :] - eta[:, None])
    ones = np.ones((eta.shape[0], 1))
    return np.diff(np.hstack([np.zeros_like(ones), cum, ones]), axis=1)


def category_probs(config: DgpConfig, t: int, z: int, nodes: int = DEFAULT_NODES) -> np.ndarray:
    """Marginal category probabilities for type ``t`` under arm ``z``, integrated over ``alpha``."""
    if nodes < 16:
        raise InvalidConfig(f"need at least 16 quadrature nodes, got {nodes}", "nodes")
    if not 0 <= t < len(config.types):
        raise InvalidConfig(f"no cluster type {t}", "type")
    typ = config.types[t]
    eta = typ.latent_baseline + z * typ.latent_effect
    if config.intercept_sd == 0:
        return conditional_probs([eta], config.cut_points)[0]
    x, w = _hermite(nodes)
    return w @ conditional_probs(eta + config.intercept_sd * x, config.cut_points)


def _panels(sd: float, kinks: np.ndarray, width: float):
    lo, hi = -_TAIL_SDS * sd, _TAIL_SDS * sd
    edges = np.concatenate([np.linspace(lo, hi, int(np.ceil((hi - lo) / width)) + 1),
                            kinks[(kinks > lo) & (kinks < hi)]])
    edges = np.unique(edges)
    xg, wg = _legendre(_GL_NODES)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (b - a) * xg[None, :] + 0.5 * (a + b)).ravel()
    weights = (0.5 * (b - a) * wg[None, :]).ravel()
    return nodes, weights


def size_weighted_probs(config: DgpConfig, t: int, z: int):
    """``(E[N pi_t^(z)], E[N])`` over ``alpha`` for type ``t`` under the config's size link."""
    typ = config.types[t]
    lo, hi = typ.size_range
    link = config.link
    sd = config.intercept_sd
    eta = typ.latent_baseline + z * typ.latent_effect
    if sd == 0:
        n = float(link.expected_size(lo, hi, np.zeros(1), config.gamma)[0])
        return n * conditional_probs([eta], config.cut_points)[0], n
    alpha, w = _panels(sd, link.breakpoints(lo, hi, config.gamma), width=sd / 4)
    w = w * np.exp(-0.5 * (alpha / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
    wn = w * link.expected_size(lo, hi, alpha, config.gamma)
    return wn @ conditional_probs(eta + alpha, config.cut_points), float(wn.sum())


def true_marginals(config: DgpConfig, nodes: int = DEFAULT_NODES) -> dict[str, MarginalPair]:
    p = [t.probability for t in config.types]
    probs = {(t, z): category_probs(config, t, z, nodes) for t in range(len(p)) for z in (0, 1)}
    out = {}
    clus = [sum(p[t] * probs[t, z] for t in range(len(p))) for z in (1, 0)]
    out["cluster"] = MarginalPair(tuple(clus[0]), tuple(clus[1]), "cluster")

    if config.link.depends_on_alpha(config.gamma):
        ind = []
        for z in (1, 0):
            parts = [size_weighted_probs(config, t, z) for t in range(len(p))]
            num = sum(p[t] * parts[t][0] for t in range(len(p)))
            den = sum(p[t] * parts[t][1] for t in range(len(p)))
            ind.append(num / den)
    else:
        sizes = [t.mean_size for t in config.types]
        den = sum(pt * n for pt, n in zip(p, sizes))
        ind = [sum(p[t] * sizes[t] * probs[t, z] for t in range(len(p))) / den for z in (1, 0)]
    out["individual"] = MarginalPair(tuple(ind[0]), tuple(ind[1]), "individual")
    return out


def _clean(triple: WinTriple) -> WinTriple:
    win, loss = float(triple.win), float(triple.loss)
    return WinTriple(win, loss, 1.0 - win - loss)


def true_triples(config: DgpConfig, nodes: int = DEFAULT_NODES) -> dict[str, WinTriple]:
    return {lvl: _clean(win_triple_from_marginals(m)) for lvl, m in true_marginals(config, nodes).items()}


def true_estimands(config: DgpConfig, nodes: int = DEFAULT_NODES) -> dict[str, WinSummary]:
    """Truths keyed by level, ``"individual"`` and ``"cluster"``."""
    return {lvl: summarize(tr) for lvl, tr in true_triples(config, nodes).items()}
