"""Online Gaussian LDA trained with stochastic variational inference.

Each component is a Gaussian over the feature space with a Normal-Inverse-Wishart
variational posterior ``NIW(qm, qomega, qs, qv)``.  Each pattern window (document)
carries a Dirichlet over components (``gamma``) and per-observation assignment
probabilities (``phi``).  Global updates interpolate in the natural-parameter space

    (qs, qv, qs * qm, qomega + qs * qm qm^T)

which is equivalent to the mean-space update formulas.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import digamma, gammaln, logsumexp, multigammaln

CHECKPOINT_FORMAT = "onlineglda-checkpoint"
CHECKPOINT_VERSION = 1

_LOG_2PI = math.log(2.0 * math.pi)


class NumericalError(ArithmeticError):
    """A covariance scale matrix lost positive-definiteness."""


def _as_matrix(a, F: int, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape != (F, F):
        raise ValueError(f"{name} must be {F}x{F}, got shape {a.shape}")
    return a


def _check_spd(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-12:
        raise ValueError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} is not positive-definite") from None


def ensure_pd(a: np.ndarray) -> np.ndarray:
    """Return ``a`` if it is positive-definite, else ``a`` plus a tiny diagonal jitter.

    The jitter is ``1e-10 * trace(a) / F`` and is tried once; it only absorbs
    rounding, so a second failure raises :class:`NumericalError`.
    """
    try:
        np.linalg.cholesky(a)
        return a
    except np.linalg.LinAlgError:
        pass
    F = a.shape[0]
    jittered = a + 1e-10 * abs(np.trace(a)) / F * np.eye(F)
    try:
        np.linalg.cholesky(jittered)
    except np.linalg.LinAlgError:
        raise NumericalError("scale matrix is not positive-definite after jitter") from None
    return jittered


def cholesky_guarded(a: np.ndarray) -> np.ndarray:
    return np.linalg.cholesky(ensure_pd(a))


@dataclass
class ModelConfig:
    K: int
    F: int
    alpha: float
    prior_m: np.ndarray
    prior_omega: np.ndarray
    prior_s: float
    prior_v: float
    corpus_size_D: int

    def __post_init__(self):
        self.prior_m = np.asarray(self.prior_m, dtype=float).reshape(-1)
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")
        if int(self.F) != self.F or self.F < 1:
            raise ValueError(f"F must be a positive integer, got {self.F}")
        self.K, self.F = int(self.K), int(self.F)
        if self.prior_m.shape != (self.F,):
            raise ValueError(f"prior_m must have length F={self.F}, got {self.prior_m.shape[0]}")
        self.prior_omega = _as_matrix(self.prior_omega, self.F, "prior_omega")
        _check_spd(self.prior_omega, "prior_omega")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.prior_s > 0:
            raise ValueError(f"prior_s must be > 0, got {self.prior_s}")
        if not self.prior_v > self.F - 1:
            raise ValueError(f"prior_v must exceed F-1={self.F - 1}, got {self.prior_v}")
        if int(self.corpus_size_D) != self.corpus_size_D or self.corpus_size_D < 1:
            raise ValueError(f"corpus_size_D must be a positive integer, got {self.corpus_size_D}")
        self.corpus_size_D = int(self.corpus_size_D)
        self.alpha = float(self.alpha)
        self.prior_s = float(self.prior_s)
        self.prior_v = float(self.prior_v)

    @classmethod
    def default(cls, K: int, F: int, corpus_size_D: int = 1, **overrides) -> "ModelConfig":
        """Fixed default hyper-parameters: alpha=1/K, m=0, omega=I, s=1, v=F+2."""
        kw = dict(alpha=1.0 / K, prior_m=np.zeros(F), prior_omega=np.eye(F),
                  prior_s=1.0, prior_v=F + 2.0)
        kw.update(overrides)
        return cls(K=K, F=F, corpus_size_D=corpus_size_D, **kw)

    def prior(self) -> "NiwPosterior":
        return NiwPosterior(self.prior_m.copy(), self.prior_omega.copy(), self.prior_s, self.prior_v)

    def to_dict(self) -> dict:
        return {
            "K": self.K, "F": self.F, "alpha": self.alpha,
            "prior_m": self.prior_m.tolist(), "prior_omega": self.prior_omega.tolist(),
            "prior_s": self.prior_s, "prior_v": self.prior_v,
            "corpus_size_D": self.corpus_size_D,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(K=d["K"], F=d["F"], alpha=d["alpha"], prior_m=d["prior_m"],
                   prior_omega=d["prior_omega"], prior_s=d["prior_s"], prior_v=d["prior_v"],
                   corpus_size_D=d["corpus_size_D"])


@dataclass
class NiwPosterior:
    qm: np.ndarray
    qomega: np.ndarray
    qs: float
    qv: float

    def __post_init__(self):
        self.qm = np.asarray(self.qm, dtype=float).reshape(-1)
        self.qomega = np.asarray(self.qomega, dtype=float)
        self.qs = float(self.qs)
        self.qv = float(self.qv)

    @property
    def F(self) -> int:
        return self.qm.shape[0]

    def natural(self) -> tuple[float, float, np.ndarray, np.ndarray]:
        """Natural parameters ``(qs, qv, qs*qm, qomega + qs*qm*qm^T)``."""
        return (self.qs, self.qv, self.qs * self.qm,
                self.qomega + self.qs * np.outer(self.qm, self.qm))

    @classmethod
    def from_natural(cls, s, v, ell, S) -> "NiwPosterior":
        F = len(ell)
        if not s > 0:
            raise NumericalError(f"qs must stay positive, got {s}")
        if not v > F - 1:
            raise NumericalError(f"qv must exceed F-1, got {v}")
        qm = np.asarray(ell, dtype=float) / s
        qomega = S - s * np.outer(qm, qm)
        qomega = 0.5 * (qomega + qomega.T)
        return cls(qm, ensure_pd(qomega), s, v)

    def copy(self) -> "NiwPosterior":
        return NiwPosterior(self.qm.copy(), self.qomega.copy(), self.qs, self.qv)


@dataclass
class GlobalState:
    components: list[NiwPosterior]
    t: int = 0

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def F(self) -> int:
        return self.components[0].F

    def means(self) -> np.ndarray:
        return np.array([c.qm for c in self.components])

    def copy(self) -> "GlobalState":
        return GlobalState([c.copy() for c in self.components], self.t)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "components": [
                {"qm": c.qm.tolist(), "qomega": c.qomega.tolist(), "qs": c.qs, "qv": c.qv}
                for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalState":
        comps = [NiwPosterior(c["qm"], c["qomega"], c["qs"], c["qv"]) for c in d["components"]]
        return cls(comps, int(d["t"]))


@dataclass
class PatternWindow:
    observations: np.ndarray
    start_time: float = 0.0
    span: float = 0.0

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim != 2:
            raise ValueError(f"observations must be an n x F matrix, got ndim={obs.ndim}")
        if not np.all(np.isfinite(obs)):
            raise ValueError("observations must be finite")
        self.observations = obs

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def F(self) -> int:
        return self.observations.shape[1]


@dataclass
class LocalState:
    gamma: np.ndarray
    phi: np.ndarray
    sweeps: int = 0


@dataclass(frozen=True)
class LearningSchedule:
    kappa: float = 0.9
    tau0: float = 1024.0

    def __post_init__(self):
        if not 0.5 < self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in (0.5, 1], got {self.kappa}")
        if not self.tau0 >= 0:
            raise ValueError(f"tau0 must be >= 0, got {self.tau0}")


def learning_rate(t: int, schedule: LearningSchedule | tuple[float, float]) -> float:
    """Step size ``(tau0 + t) ** -kappa``.

    ``schedule`` may also be a bare ``(kappa, tau0)`` pair; the formula itself only
    needs ``tau0 + t > 0``, the kappa range is a training-loop requirement.
    """
    kappa, tau0 = (schedule.kappa, schedule.tau0) if isinstance(schedule, LearningSchedule) else schedule
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    base = tau0 + t
    if base <= 0:
        raise ValueError(f"tau0 + t must be positive, got {base}")
    return float(base ** -kappa)


@dataclass
class NaturalStats:
    """Per-component natural parameters stacked over K components."""

    s: np.ndarray   # (K,)
    v: np.ndarray   # (K,)
    ell: np.ndarray  # (K, F)
    S: np.ndarray   # (K, F, F)

    def component(self, k: int):
        return self.s[k], self.v[k], self.ell[k], self.S[k]


class _ComponentCache:
    """Per-state quantities reused by every observation of a minibatch."""

    def __init__(self, state: GlobalState):
        F = state.F
        self.means = state.means()
        self.chols = []
        self.qv = np.array([c.qv for c in state.components])
        const = np.empty(state.K)
        j = np.arange(1, F + 1)
        for k, c in enumerate(state.components):
            L = cholesky_guarded(c.qomega)
            self.chols.append(L)
            logdet = 2.0 * np.sum(np.log(np.diag(L)))
            e_logdet_prec = np.sum(digamma((c.qv + 1.0 - j) / 2.0)) + F * math.log(2.0) - logdet
            const[k] = 0.5 * e_logdet_prec - 0.5 * F * _LOG_2PI - F / (2.0 * c.qs)
        self.const = const

    def loglik(self, X: np.ndarray) -> np.ndarray:
        """Matrix of E_q[log N(x_i | mu_k, Sigma_k)], shape (n, K)."""
        X = np.atleast_2d(X)
        out = np.empty((X.shape[0], len(self.chols)))
        for k, L in enumerate(self.chols):
            diff = X - self.means[k]
            y = np.linalg.solve(L, diff.T)
            out[:, k] = self.const[k] - 0.5 * self.qv[k] * np.einsum("ij,ij->j", y, y)
        return out


def expected_log_gaussian(x, post: NiwPosterior) -> float | np.ndarray:
    """E_q[log N(x | mu, Sigma)] under ``q = NIW(qm, qomega, qs, qv)``.

    Accepts a single F-vector (returns a float) or an n x F matrix (returns n values).
    """
    x = np.asarray(x, dtype=float)
    cache = _ComponentCache(GlobalState([post]))
    vals = cache.loglik(x.reshape(-1, post.F))[:, 0]
    return float(vals[0]) if x.ndim == 1 else vals


def _dirichlet_elog(gamma: np.ndarray) -> np.ndarray:
    return digamma(gamma) - digamma(np.sum(gamma))


def _local_from_loglik(loglik: np.ndarray, alpha: float, tol: float, max_iter: int,
                       on_sweep: Callable[[LocalState], None] | None = None) -> LocalState:
    n, K = loglik.shape
    if n == 0:
        return LocalState(np.full(K, alpha), np.zeros((0, K)), 0)
    gamma = np.full(K, alpha + n / K)
    phi = np.full((n, K), 1.0 / K)
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        logits = loglik + digamma(gamma)
        phi = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        new_gamma = alpha + phi.sum(axis=0)
        change = np.max(np.abs(new_gamma - gamma)) / n
        gamma = new_gamma
        if on_sweep is not None:
            on_sweep(LocalState(gamma.copy(), phi.copy(), sweeps))
        if change < tol:
            break
    return LocalState(gamma, phi, sweeps)


def _check_doc(doc: PatternWindow, state: GlobalState) -> None:
    if doc.F != state.F and doc.n > 0:
        raise ValueError(f"document has F={doc.F} features but the model has F={state.F}")


def local_step(doc: PatternWindow, state: GlobalState, alpha: float, tol: float = 1e-4,
               max_iter: int = 100, on_sweep: Callable[[LocalState], None] | None = None
               ) -> LocalState:
    """Coordinate ascent on one window's ``gamma`` and ``phi`` with globals held fixed.

    Stops once ``max_k |delta gamma_k| / n < tol`` or after ``max_iter`` sweeps.
    ``on_sweep`` receives a snapshot after every sweep.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    _check_doc(doc, state)
    loglik = _ComponentCache(state).loglik(doc.observations) if doc.n else np.zeros((0, state.K))
    return _local_from_loglik(loglik, alpha, tol, max_iter, on_sweep)


def _doc_bound(loglik: np.ndarray, local: LocalState, alpha: float) -> float:
    """Per-window ELBO terms: E[log p(theta)] - E[log q(theta)] + E[log p(x, z | theta, beta)] - E[log q(z)]."""
    gamma, phi = local.gamma, local.phi
    K = gamma.shape[0]
    elog = _dirichlet_elog(gamma)
    e_log_p_theta = gammaln(K * alpha) - K * gammaln(alpha) + (alpha - 1.0) * np.sum(elog)
    e_log_q_theta = gammaln(np.sum(gamma)) - np.sum(gammaln(gamma)) + np.sum((gamma - 1.0) * elog)
    if phi.shape[0] == 0:
        return float(e_log_p_theta - e_log_q_theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        entropy = -np.sum(np.where(phi > 0, phi * np.log(phi), 0.0))
    assign = np.sum(phi * (loglik + elog))
    return float(e_log_p_theta - e_log_q_theta + assign + entropy)


def doc_elbo(doc: PatternWindow, local: LocalState, state: GlobalState, alpha: float) -> float:
    """One window's contribution to the ELBO (the global KL term excluded)."""
    _check_doc(doc, state)
    loglik = _ComponentCache(state).loglik(doc.observations) if doc.n else np.zeros((0, state.K))
    return _doc_bound(loglik, local, alpha)


def niw_kl(q: NiwPosterior, p: NiwPosterior) -> float:
    """KL(q || p) between two Normal-Inverse-Wishart distributions."""
    F = q.F
    Lq = cholesky_guarded(q.qomega)
    Lp = cholesky_guarded(p.qomega)
    logdet_q = 2.0 * np.sum(np.log(np.diag(Lq)))
    logdet_p = 2.0 * np.sum(np.log(np.diag(Lp)))
    # precision ~ Wishart(inv(qomega), qv)
    qinv_p = np.linalg.solve(Lq, p.qomega)
    tr = np.trace(np.linalg.solve(Lq.T, qinv_p))
    j = np.arange(1, F + 1)
    psi_F = np.sum(digamma((q.qv + 1.0 - j) / 2.0))
    kl_wishart = (0.5 * p.qv * (logdet_q - logdet_p) + 0.5 * q.qv * (tr - F)
                  + multigammaln(p.qv / 2.0, F) - multigammaln(q.qv / 2.0, F)
                  + 0.5 * (q.qv - p.qv) * psi_F)
    d = np.linalg.solve(Lq, p.qm - q.qm)
    kl_normal = 0.5 * (F * p.qs / q.qs - F + F * math.log(q.qs / p.qs) + p.qs * q.qv * float(d @ d))
    return float(kl_wishart + kl_normal)


def elbo(docs: Sequence[PatternWindow], locals_: Sequence[LocalState], state: GlobalState,
         config: ModelConfig) -> float:
    """Full evidence lower bound over ``docs`` with the given local parameters."""
    if len(docs) != len(locals_):
        raise ValueError(f"got {len(docs)} documents but {len(locals_)} local states")
    prior = config.prior()
    total = -sum(niw_kl(c, prior) for c in state.components)
    if docs:
        cache = _ComponentCache(state)
        for doc, loc in zip(docs, locals_):
            _check_doc(doc, state)
            ll = cache.loglik(doc.observations) if doc.n else np.zeros((0, state.K))
            total += _doc_bound(ll, loc, config.alpha)
    return float(total)


def intermediate_global(batch: Sequence[tuple[PatternWindow, LocalState]],
                        config: ModelConfig) -> NaturalStats:
    """Noisy estimate of the optimal natural parameters from one minibatch.

    Sufficient statistics are scaled by ``D / |batch|`` so the estimate is unbiased
    for the full corpus of ``D`` windows.
    """
    if len(batch) == 0:
        raise ValueError("minibatch is empty")
    K, F = config.K, config.F
    N = np.zeros(K)
    sx = np.zeros((K, F))
    sxx = np.zeros((K, F, F))
    for doc, loc in batch:
        if doc.n == 0:
            continue
        if doc.F != F:
            raise ValueError(f"document has F={doc.F} features but the model has F={F}")
        phi, X = loc.phi, doc.observations
        N += phi.sum(axis=0)
        sx += phi.T @ X
        sxx += np.einsum("ik,ia,ib->kab", phi, X, X)
    scale = config.corpus_size_D / len(batch)
    s, v, m, omega = config.prior_s, config.prior_v, config.prior_m, config.prior_omega
    return NaturalStats(
        s=s + scale * N,
        v=v + scale * N,
        ell=s * m + scale * sx,
        S=omega + s * np.outer(m, m) + scale * sxx,
    )


def global_step(state: GlobalState, lambda_hat: NaturalStats, rho: float) -> GlobalState:
    """Move every component a step ``rho`` toward ``lambda_hat`` in natural coordinates."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    comps = []
    for k, c in enumerate(state.components):
        cur = c.natural()
        new = [(1.0 - rho) * a + rho * b for a, b in zip(cur, lambda_hat.component(k))]
        comps.append(NiwPosterior.from_natural(*new))
    return GlobalState(comps, state.t + 1)


def init_state(config: ModelConfig, rng: np.random.Generator, method: str = "prior",
               corpus: Sequence[PatternWindow] | None = None, sample_docs: int = 20) -> GlobalState:
    """Seeded starting point for the global parameters.

    ``method="prior"`` draws each mean from N(m, omega / s).  ``method="data"`` picks
    the means by D^2-weighted seeding over the observations of ``sample_docs``
    random windows of ``corpus``.  Scale, strength and degrees of freedom start at
    the prior in both cases.
    """
    if method == "prior":
        L = np.linalg.cholesky(config.prior_omega / config.prior_s)
        means = [config.prior_m + L @ rng.standard_normal(config.F) for _ in range(config.K)]
    elif method == "data":
        if not corpus:
            raise ValueError("data initialisation needs a non-empty corpus")
        picked = rng.choice(len(corpus), size=min(len(corpus), sample_docs), replace=False)
        X = np.vstack([corpus[i].observations for i in sorted(picked)])
        if X.shape[0] == 0:
            raise ValueError("data initialisation needs at least one observation")
        means = [X[rng.integers(X.shape[0])]]
        for _ in range(config.K - 1):
            d2 = np.min(((X[:, None, :] - np.array(means)[None]) ** 2).sum(axis=-1), axis=1)
            total = d2.sum()
            idx = rng.choice(X.shape[0], p=d2 / total) if total > 0 else rng.integers(X.shape[0])
            means.append(X[idx])
    else:
        raise ValueError(f"unknown initialisation method {method!r}")
    comps = [NiwPosterior(np.array(qm, dtype=float), config.prior_omega.copy(),
                          config.prior_s, config.prior_v) for qm in means]
    return GlobalState(comps, 0)


@dataclass
class IterationRecord:
    t: int
    rho: float
    batch: list[int]
    elbo: float


def _batches(n_docs: int, batch_size: int, rng: np.random.Generator):
    # cycle over the corpus, reshuffling at every epoch
    order = rng.permutation(n_docs)
    pos = 0
    while True:
        batch = []
        while len(batch) < batch_size:
            if pos == n_docs:
                order = rng.permutation(n_docs)
                pos = 0
            batch.append(int(order[pos]))
            pos += 1
        yield batch


def fit_online(corpus: Iterable[PatternWindow], config: ModelConfig, schedule: LearningSchedule,
               batch_size: int, iters: int, seed: int, tol: float = 1e-4, max_iter: int = 100,
               callback: Callable[[IterationRecord], None] | None = None,
               init: GlobalState | str = "data") -> GlobalState:
    """Train online GLDA on ``corpus`` for ``iters`` minibatch updates.

    Initialisation and batch order derive from ``seed`` only, so two runs with the
    same inputs are bit-identical.  When ``callback`` is given it is called after
    every update with the step size, the batch indices, and a noisy ELBO estimate
    computed under the pre-update globals.  ``init`` is an initialisation method
    name (see :func:`init_state`) or an explicit starting state.
    """
    docs = list(corpus)
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if iters < 0:
        raise ValueError(f"iters must be >= 0, got {iters}")
    if not docs:
        raise ValueError("corpus yielded no pattern windows")
    for i, doc in enumerate(docs):
        if doc.F != config.F:
            raise ValueError(f"window {i} has F={doc.F} features but the model has F={config.F}")
    rng = np.random.default_rng(seed)
    if isinstance(init, GlobalState):
        state = init.copy()
    else:
        state = init_state(config, rng, init, docs)
    prior = config.prior()
    batches = _batches(len(docs), batch_size, rng)
    for _ in range(iters):
        batch_ids = next(batches)
        cache = _ComponentCache(state)
        pairs = []
        bound = 0.0
        for i in batch_ids:
            ll = cache.loglik(docs[i].observations)
            loc = _local_from_loglik(ll, config.alpha, tol, max_iter)
            pairs.append((docs[i], loc))
            if callback is not None:
                bound += _doc_bound(ll, loc, config.alpha)
        rho = learning_rate(state.t, schedule)
        record = None
        if callback is not None:
            estimate = (-sum(niw_kl(c, prior) for c in state.components)
                        + config.corpus_size_D / len(pairs) * bound)
            record = IterationRecord(state.t, rho, batch_ids, float(estimate))
        state = global_step(state, intermediate_global(pairs, config), rho)
        if record is not None:
            callback(record)
    return state


def save_checkpoint(path, config: ModelConfig, state: GlobalState, extra: dict | None = None) -> None:
    """Write a JSON checkpoint; float repr makes the round trip bit-exact."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "state": state.to_dict(),
    }
    if extra:
        payload["extra"] = extra
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ModelConfig, GlobalState, dict]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an online GLDA checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    config = ModelConfig.from_dict(payload["config"])
    state = GlobalState.from_dict(payload["state"])
    if state.K != config.K or state.F != config.F:
        raise ValueError(f"{path}: state shape K={state.K}, F={state.F} does not match config")
    return config, state, payload.get("extra", {})
