"""Evaluation of a trained model: synthetic corpora, held-out perplexity,
pattern-regularity matrices and least-squares energy mapping."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import invwishart

from .align import format_value
from .core import (GlobalState, LocalState, ModelConfig, PatternWindow, _ComponentCache,
                   _doc_bound, _local_from_loglik)


@dataclass
class SyntheticCorpus:
    docs: list[PatternWindow]
    true_theta: np.ndarray                     # (D, K)
    true_z: list[np.ndarray]
    true_components: list[tuple[np.ndarray, np.ndarray]]


@dataclass
class PatternMatrix:
    values: np.ndarray          # (K, T), columns sum to one
    window_times: np.ndarray    # (T,)

    def gray_levels(self) -> np.ndarray:
        """8-bit intensities: 0 (black) for probability 0, 255 (white) for 1."""
        return np.rint(255.0 * np.clip(self.values, 0.0, 1.0)).astype(np.uint8)


@dataclass
class EnergyMap:
    w: np.ndarray
    residual_norm: float


def sample_corpus(config: ModelConfig, D: int, n: int, seed: int,
                  components: Sequence[tuple[np.ndarray, np.ndarray]] | None = None,
                  feature_seconds: float = 1.0) -> SyntheticCorpus:
    """Draw a corpus from the GLDA generative process.

    Covariances come from IW(omega, v) and means from N(m, Sigma / s) unless
    ``components`` fixes the ``(mean, covariance)`` pairs.
    """
    if D < 1 or n < 1:
        raise ValueError(f"D and n must be >= 1, got D={D}, n={n}")
    rng = np.random.default_rng(seed)
    K, F = config.K, config.F
    if components is None:
        components = []
        for _ in range(K):
            sigma = np.atleast_2d(invwishart.rvs(df=config.prior_v, scale=config.prior_omega,
                                                 random_state=rng))
            mu = rng.multivariate_normal(config.prior_m, sigma / config.prior_s)
            components.append((mu, sigma))
    else:
        components = [(np.asarray(mu, dtype=float).reshape(F), np.asarray(cov, dtype=float).reshape(F, F))
                      for mu, cov in components]
        if len(components) != K:
            raise ValueError(f"expected {K} fixed components, got {len(components)}")
    chols = [np.linalg.cholesky(cov) for _, cov in components]
    means = np.array([mu for mu, _ in components])
    theta = rng.dirichlet(np.full(K, config.alpha), size=D)
    docs, zs = [], []
    for d in range(D):
        p = theta[d] / theta[d].sum()
        z = rng.choice(K, size=n, p=p)
        eps = rng.standard_normal((n, F))
        X = means[z] + np.einsum("nab,nb->na", np.array(chols)[z], eps)
        docs.append(PatternWindow(X, start_time=d * n * feature_seconds, span=n * feature_seconds))
        zs.append(z)
    return SyntheticCorpus(docs, theta, zs, components)


def infer_locals(docs: Sequence[PatternWindow], state: GlobalState, alpha: float,
                 tol: float = 1e-4, max_iter: int = 100) -> tuple[list[LocalState], list[float]]:
    """Local inference for every window plus each window's bound contribution."""
    cache = _ComponentCache(state)
    locs, bounds = [], []
    for doc in docs:
        if doc.n and doc.F != state.F:
            raise ValueError(f"window has F={doc.F} features but the model has F={state.F}")
        ll = cache.loglik(doc.observations) if doc.n else np.zeros((0, state.K))
        loc = _local_from_loglik(ll, alpha, tol, max_iter)
        locs.append(loc)
        bounds.append(_doc_bound(ll, loc, alpha))
    return locs, bounds


def perplexity_from_bound(bound: float, count: int) -> float:
    return math.exp(-bound / count)


def perplexity(heldout: Sequence[PatternWindow], state: GlobalState, config: ModelConfig,
               tol: float = 1e-4, max_iter: int = 100) -> float:
    """``exp(-B / N)`` with B the summed per-window bound and N the observation count.

    Globals stay frozen and the global KL term is left out, so the value does not
    depend on how many held-out windows there are.
    """
    if not heldout:
        raise ValueError("held-out set is empty")
    count = sum(doc.n for doc in heldout)
    if count == 0:
        raise ValueError("held-out set has no observations")
    _, bounds = infer_locals(heldout, state, config.alpha, tol, max_iter)
    return perplexity_from_bound(sum(bounds), count)


def pattern_matrix(docs: Sequence[PatternWindow], state: GlobalState, alpha: float,
                   tol: float = 1e-4, max_iter: int = 100) -> PatternMatrix:
    if not docs:
        raise ValueError("no pattern windows given")
    locs, _ = infer_locals(docs, state, alpha, tol, max_iter)
    gammas = np.array([loc.gamma for loc in locs])
    values = (gammas / gammas.sum(axis=1, keepdims=True)).T
    return PatternMatrix(values, np.array([doc.start_time for doc in docs], dtype=float))


def fit_energy_map(A, b, rcond: float = 1e-8) -> EnergyMap:
    """Minimum-norm least-squares solution of ``A w = b``.

    Singular values below ``rcond`` times the largest are treated as zero.  A
    component that is never dominant leaves its column a near-multiple of the
    others, and keeping that round-off direction would blow the weights up.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.ndim != 2 or A.shape[0] != b.shape[0]:
        raise ValueError(f"A has shape {A.shape} but b has length {b.shape[0]}")
    w, *_ = np.linalg.lstsq(A, b, rcond=rcond)
    return EnergyMap(w, float(np.linalg.norm(A @ w - b)))


def predict_energy(A, energy_map: EnergyMap) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[1] != energy_map.w.shape[0]:
        raise ValueError(f"A has shape {A.shape} but the map has {energy_map.w.shape[0]} components")
    return A @ energy_map.w


def per_pattern_energy(docs: Sequence[PatternWindow], column: int, feature_seconds: float) -> np.ndarray:
    """Joules per window: active power (column ``column``) times feature-window length, summed."""
    out = np.empty(len(docs))
    for j, doc in enumerate(docs):
        if not 0 <= column < doc.F:
            raise ValueError(f"active-power column {column} missing from a window with F={doc.F}")
        out[j] = doc.observations[:, column].sum() * feature_seconds
    return out


def match_components(learned: np.ndarray, truth: np.ndarray) -> tuple[int, ...]:
    """Permutation ``p`` minimising ``sum_k ||learned[p[k]] - truth[k]||`` by exhaustive search."""
    learned = np.asarray(learned, dtype=float)
    truth = np.asarray(truth, dtype=float)
    K = truth.shape[0]
    best, best_cost = None, math.inf
    for perm in itertools.permutations(range(learned.shape[0]), K):
        cost = float(np.linalg.norm(learned[list(perm)] - truth, axis=1).sum())
        if cost < best_cost:
            best, best_cost = perm, cost
    return best


def write_pgm(pm: PatternMatrix, path) -> None:
    """Binary portable graymap, one row per component and one column per window."""
    levels = pm.gray_levels()
    K, T = levels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{T} {K}\n255\n".encode("ascii"))
        fh.write(levels.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary graymap")
    T, K = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(K, T)


def write_proportions_csv(pm: PatternMatrix, path) -> None:
    K = pm.values.shape[0]
    with open(path, "w") as fh:
        fh.write(",".join(["time", *(f"c{k}" for k in range(K))]) + "\n")
        for j, t in enumerate(pm.window_times):
            fh.write(",".join([format_value(t), *(format_value(x) for x in pm.values[:, j])]) + "\n")


def energy_report(energy_map: EnergyMap, computed: np.ndarray, estimated: np.ndarray,
                  times: Sequence[float], heading: str = "energy map") -> str:
    lines = [f"# {heading}", "", "component  energy_J"]
    lines += [f"c{k:<9d}  {w:.6f}" for k, w in enumerate(energy_map.w)]
    lines += ["", f"residual_norm  {energy_map.residual_norm:.6f}", "",
              "window_time  computed_J  estimated_J"]
    lines += [f"{t:.3f}  {c:.6f}  {e:.6f}" for t, c, e in zip(times, computed, estimated)]
    return "\n".join(lines) + "\n"
