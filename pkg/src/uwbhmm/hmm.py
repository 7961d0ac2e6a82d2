"""Two-state HMM over KL observation vectors.

State 0 means the person does not affect range bin ``k``; state 1 means it
does. Emissions are log-normal on the observation ``O_k``. Parameters are
initialised from labelled training vectors, refined on unlabelled vectors
by Baum-Welch, and the bistatic delay bin is read off the smoothed
posterior as the first bin where ``P(X_k = 1 | O) > 0.5``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .observe import ObservationVector, log_observations

log = logging.getLogger(__name__)

EPSILON_ESCAPE = 1e-3
SCALE_FLOOR = 1e-6
MAX_ITERS = 15
TOL = 1e-4
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_B_FLOOR = 1e-300


@dataclass(frozen=True)
class HmmParams:
    """Initial distribution, transitions and log-normal emissions.

    ``emit_loc[i]`` and ``emit_scale[i]`` are the mean and standard deviation
    of ``ln O`` in state ``i``.
    """

    pi: np.ndarray
    trans: np.ndarray
    emit_loc: np.ndarray
    emit_scale: np.ndarray
    epsilon_escape: float = EPSILON_ESCAPE

    def __post_init__(self):
        for name, shape in (("pi", (2,)), ("trans", (2, 2)), ("emit_loc", (2,)), ("emit_scale", (2,))):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    def validate(self):
        pi, P = self.pi, self.trans
        if not (np.all(np.isfinite(pi)) and np.all(np.isfinite(P))):
            raise ValueError("probabilities must be finite")
        if np.any(pi < 0) or np.any(pi > 1) or abs(pi.sum() - 1) > 1e-12:
            raise ValueError(f"invalid initial distribution {pi}")
        if np.any(P < 0) or np.any(P > 1) or np.any(np.abs(P.sum(axis=1) - 1) > 1e-12):
            raise ValueError(f"transition rows must be distributions, got {P.tolist()}")
        if not self.epsilon_escape > 0:
            raise ValueError("epsilon_escape must be > 0")
        if P[1, 0] < self.epsilon_escape * (1 - 1e-12):
            raise ValueError(f"P_10={P[1, 0]} below epsilon_escape={self.epsilon_escape}")
        if np.any(self.emit_scale <= 0) or not np.all(np.isfinite(self.emit_loc)):
            raise ValueError("emission scales must be > 0 and locations finite")

    def log_emission(self, values) -> np.ndarray:
        """Log-density of each observation under both states, shape (n, 2)."""
        x = log_observations(values)[..., None]
        z = (x - self.emit_loc) / self.emit_scale
        return -x - np.log(self.emit_scale) - _LOG_SQRT_2PI - 0.5 * z * z

    def to_dict(self) -> dict:
        return {
            "pi": self.pi.tolist(),
            "trans": self.trans.tolist(),
            "emission": {
                "family": "lognormal",
                "loc": self.emit_loc.tolist(),
                "scale": self.emit_scale.tolist(),
            },
            "epsilon_escape": self.epsilon_escape,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmmParams":
        em = d["emission"]
        if em.get("family", "lognormal") != "lognormal":
            raise ValueError(f"unsupported emission family {em.get('family')!r}")
        return cls(d["pi"], d["trans"], em["loc"], em["scale"], float(d["epsilon_escape"]))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "HmmParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PosteriorTrack:
    """Per-bin posterior of the "affected" state for one observation vector."""

    alpha: np.ndarray
    k_star_hat: Optional[int]
    detected: bool
    loglik: float
    link_id: tuple = (0, 1)
    point_id: Optional[int] = None


def estimate_k_star(alpha) -> Optional[int]:
    """First (1-based) bin whose state-1 posterior exceeds 0.5, else None."""
    if isinstance(alpha, PosteriorTrack):
        alpha = alpha.alpha
    hit = np.flatnonzero(np.asarray(alpha) > 0.5)
    return int(hit[0]) + 1 if hit.size else None


def _values(obs) -> np.ndarray:
    v = obs.values if isinstance(obs, ObservationVector) else np.asarray(obs, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("observation vector must be 1-D and nonempty")
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise ValueError("forward-backward needs strictly positive finite observations (apply the floor first)")
    return v


def _scaled_emissions(params: HmmParams, V: np.ndarray):
    """Emission likelihoods rescaled per bin so each row's max is 1."""
    lb = params.log_emission(V)
    peak = lb.max(axis=-1)
    b = np.exp(lb - peak[..., None])
    np.maximum(b, _B_FLOOR, out=b)
    return b, peak.sum(axis=-1)


def posterior_batch(V: np.ndarray, params: HmmParams, backend=None):
    """Forward-backward over equal-length sequences stacked as rows of ``V``.

    Returns ``(gamma, xi, loglik)`` with loglik per sequence.
    """
    fb = kernels.fb_batch if backend is None else kernels.BACKENDS[backend]
    b, offset = _scaled_emissions(params, np.atleast_2d(V))
    gamma, xi, ll = fb(np.ascontiguousarray(b), np.ascontiguousarray(params.pi),
                       np.ascontiguousarray(params.trans))
    return gamma, xi, ll + offset


def forward_backward(obs, params: HmmParams, backend=None) -> PosteriorTrack:
    """Smoothed posteriors ``alpha_k = P(X_k = 1 | O, params)`` for one vector."""
    v = _values(obs)
    gamma, _, ll = posterior_batch(v[None, :], params, backend)
    alpha = np.clip(gamma[0, :, 1], 0.0, 1.0)
    k = estimate_k_star(alpha)
    link = getattr(obs, "link_id", (0, 1))
    pid = getattr(obs, "point_id", None)
    return PosteriorTrack(alpha, k, k is not None, float(ll[0]), link, pid)


def forward_backward_many(obs_set: Sequence, params: HmmParams, backend=None) -> list:
    """Forward-backward on every vector, batching vectors of equal length."""
    tracks: list = [None] * len(obs_set)
    for idx, V in _group_by_length([_values(o) for o in obs_set]):
        gamma, _, ll = posterior_batch(V, params, backend)
        for row, i in enumerate(idx):
            alpha = np.clip(gamma[row, :, 1], 0.0, 1.0)
            k = estimate_k_star(alpha)
            o = obs_set[i]
            tracks[i] = PosteriorTrack(alpha, k, k is not None, float(ll[row]),
                                       getattr(o, "link_id", (0, 1)), getattr(o, "point_id", None))
    return tracks


def _group_by_length(vectors):
    groups: dict = {}
    for i, v in enumerate(vectors):
        groups.setdefault(v.shape[0], []).append(i)
    for n in sorted(groups):
        idx = groups[n]
        yield idx, np.stack([vectors[i] for i in idx])


def fit_lognormal(values) -> tuple:
    """Maximum-likelihood log-normal fit: mean and population std of ``ln O``."""
    x = log_observations(values)
    if x.size == 0:
        raise ValueError("cannot fit a log-normal to an empty set")
    return float(x.mean()), max(float(x.std()), SCALE_FLOOR)


def _labels(n: int, k_star: int) -> np.ndarray:
    return (np.arange(1, n + 1) >= k_star).astype(int)


def init_params(train: Sequence, epsilon_escape: float = EPSILON_ESCAPE) -> HmmParams:
    """Estimate parameters from labelled vectors ``[(obs, k_star), ...]``.

    Each vector is labelled 0 before ``k_star`` and 1 from it on. The initial
    distribution and the 0 -> 1 transition probability are empirical
    frequencies over those label chains; ``P_10`` is pinned to
    ``epsilon_escape``. Emissions are log-normal ML fits to the pooled
    observations of each state.
    """
    if len(train) == 0:
        raise ValueError("no training vectors")
    d0, d1 = [], []
    start1 = 0
    n00 = n01 = 0
    for obs, k_star in train:
        v = obs.values if isinstance(obs, ObservationVector) else np.asarray(obs, float)
        n = v.shape[0]
        if k_star is None or not 1 <= int(k_star) <= n:
            raise ValueError(f"k_star={k_star} out of range [1, {n}]")
        k_star = int(k_star)
        lab = _labels(n, k_star)
        d0.append(v[lab == 0])
        d1.append(v[lab == 1])
        start1 += lab[0]
        prev, nxt = lab[:-1], lab[1:]
        n00 += int(np.sum((prev == 0) & (nxt == 0)))
        n01 += int(np.sum((prev == 0) & (nxt == 1)))
    d0 = np.concatenate(d0)
    d1 = np.concatenate(d1)
    if d0.size == 0 or d1.size == 0:
        raise ValueError("training data leaves a state partition empty "
                         f"(|D0|={d0.size}, |D1|={d1.size})")
    p1 = start1 / len(train)
    p01 = n01 / (n00 + n01) if (n00 + n01) else 0.5
    trans = [[1 - p01, p01], [epsilon_escape, 1 - epsilon_escape]]
    m0, s0 = fit_lognormal(d0)
    m1, s1 = fit_lognormal(d1)
    return HmmParams([1 - p1, p1], trans, [m0, m1], [s0, s1], epsilon_escape)


@dataclass
class BaumWelchResult:
    params: HmmParams
    logliks: list
    history: list = field(default_factory=list)
    rejected: int = 0

    @property
    def iterations(self) -> int:
        return len(self.logliks) - 1

    def __iter__(self):
        # allows ``params, logliks = baum_welch(...)``
        return iter((self.params, self.logliks))


def _e_step(batches, params, backend):
    total = 0.0
    gam = []
    xi = np.zeros((2, 2))
    for idx, V in batches:
        g, x, ll = posterior_batch(V, params, backend)
        gam.append((idx, V, g))
        xi += x.sum(axis=0)
        total += float(ll.sum())
    return total, gam, xi


def _m_step(params: HmmParams, gam, xi, soft: bool) -> HmmParams:
    eps = params.epsilon_escape
    starts = np.concatenate([g[:, 0, :] for _, _, g in gam])
    pi = starts.mean(axis=0)
    pi = pi / pi.sum()

    rows = xi.sum(axis=1)
    trans = np.array(params.trans, copy=True)
    for i in range(2):
        if rows[i] > 0:
            trans[i] = xi[i] / rows[i]
    if trans[1, 0] < eps:
        trans[1] = [eps, 1 - eps]

    logv = np.concatenate([log_observations(V).ravel() for _, V, _ in gam])
    post = np.concatenate([g.reshape(-1, 2) for _, _, g in gam])
    loc = np.array(params.emit_loc, copy=True)
    scale = np.array(params.emit_scale, copy=True)
    if soft:
        w = post
    else:
        hard = (post[:, 1] > post[:, 0]).astype(int)
        w = np.stack([hard == 0, hard == 1], axis=1).astype(float)
    for i in range(2):
        wi = w[:, i]
        tot = wi.sum()
        if tot <= 0:
            log.debug("state %d partition empty; keeping previous emission", i)
            continue
        mu = float(np.dot(wi, logv) / tot)
        var = float(np.dot(wi, (logv - mu) ** 2) / tot)
        loc[i] = mu
        scale[i] = max(np.sqrt(var), SCALE_FLOOR)
    return HmmParams(pi, trans, loc, scale, eps)


def baum_welch(obs_set: Sequence, params0: HmmParams, max_iters: int = MAX_ITERS,
               tol: float = TOL, safeguard: bool = True, backend=None,
               callback=None) -> BaumWelchResult:
    """Multi-sequence Baum-Welch with hard-partition log-normal refits.

    Each iteration runs forward-backward on every vector, re-estimates the
    initial distribution and transitions from expected counts (``P_10`` is
    floored at ``epsilon_escape``), and refits each state's log-normal
    emission on the observations whose posterior argmax is that state.

    With ``safeguard`` on, a hard-partition candidate that would lower the
    total log-likelihood by more than 1e-6 is replaced by the soft-weighted
    emission refit for that iteration, which cannot decrease it; such
    iterations are counted in ``rejected``. Iteration stops after
    ``max_iters`` or once the log-likelihood gain drops below ``tol``.

    ``callback(iteration, params, loglik)`` is invoked for the starting
    parameters and after every iteration.
    """
    if len(obs_set) == 0:
        raise ValueError("empty observation set")
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")
    params0.validate()
    vectors = [_values(o) for o in obs_set]
    batches = list(_group_by_length(vectors))

    params = params0
    ll, gam, xi = _e_step(batches, params, backend)
    result = BaumWelchResult(params, [ll])
    if callback:
        callback(0, params, ll)
    for it in range(1, max_iters + 1):
        cand = _m_step(params, gam, xi, soft=False)
        ll_c, gam_c, xi_c = _e_step(batches, cand, backend)
        if safeguard and ll_c < ll - 1e-6:
            log.debug("iteration %d: hard refit lowers loglik by %.3g; using soft refit", it, ll - ll_c)
            result.rejected += 1
            result.history.append({"iteration": it, "hard_loglik": ll_c, "previous": ll})
            cand = _m_step(params, gam, xi, soft=True)
            ll_c, gam_c, xi_c = _e_step(batches, cand, backend)
        gain = ll_c - ll
        params, ll, gam, xi = cand, ll_c, gam_c, xi_c
        result.params = params
        result.logliks.append(ll)
        if callback:
            callback(it, params, ll)
        if gain < tol:
            break
    return result
