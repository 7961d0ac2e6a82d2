"""Threshold baselines: first threshold crossing and adaptive background subtraction."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .observe import ObservationVector, zetik_background_update


@dataclass(frozen=True)
class SweepResult:
    gammas: np.ndarray
    rmse_per_gamma: np.ndarray
    best_gamma: float
    fn_count: np.ndarray

    @property
    def best_rmse(self) -> float:
        return float(self.rmse_per_gamma.min())

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gamma", "rmse", "fn_count"])
            for g, r, f in zip(self.gammas, self.rmse_per_gamma, self.fn_count):
                w.writerow([repr(float(g)), repr(float(r)), int(f)])
        return path


def _vals(obs) -> np.ndarray:
    return obs.values if isinstance(obs, ObservationVector) else np.asarray(obs, dtype=np.float64)


def ftc_estimate(obs, gamma: float) -> Optional[int]:
    """First (1-based) bin with ``O_k > gamma``; None when never crossed."""
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    hit = np.flatnonzero(_vals(obs) > gamma)
    return int(hit[0]) + 1 if hit.size else None


def ftc_estimates(values: np.ndarray, gammas) -> np.ndarray:
    """First-crossing bins for every (vector, gamma); 0 marks no crossing.

    ``values`` has shape (m, n). Uses the running maximum, which is
    nondecreasing, so each crossing is a binary search.
    """
    V = np.atleast_2d(np.asarray(values, dtype=np.float64))
    g = np.atleast_1d(np.asarray(gammas, dtype=np.float64))
    runmax = np.maximum.accumulate(V, axis=1)
    n = V.shape[1]
    out = np.empty((V.shape[0], g.size), dtype=int)
    for i, row in enumerate(runmax):
        idx = np.searchsorted(row, g, side="right")
        out[i] = np.where(idx < n, idx + 1, 0)
    return out


def delay_errors(k_hat, k_true, n_bins, bin_width: float = 1e-9, fn_penalty_bins=None) -> np.ndarray:
    """Signed delay errors in nanoseconds; a missed detection (None or 0)
    costs the full window length ``n_bins * bin_width`` unless overridden."""
    k_true = np.asarray(k_true, dtype=float)
    kh = np.array([0 if k is None else k for k in np.ravel(k_hat)], dtype=float).reshape(np.shape(k_hat))
    pen = np.asarray(n_bins if fn_penalty_bins is None else fn_penalty_bins, dtype=float)
    err = np.where(kh > 0, kh - k_true, pen)
    return err * bin_width * 1e9


def rmse(errors) -> float:
    e = np.asarray(errors, dtype=float)
    return float(np.sqrt(np.mean(e * e))) if e.size else float("nan")


def default_gamma_grid(values, count: int = 100) -> np.ndarray:
    """``count`` log-spaced thresholds spanning the 1st-99th percentile of all O_k."""
    v = np.concatenate([np.ravel(_vals(x)) for x in values]) if isinstance(values, (list, tuple)) else np.ravel(values)
    v = v[v > 0]
    if v.size == 0:
        raise ValueError("no positive observations to build a threshold grid from")
    lo, hi = np.percentile(v, [1, 99])
    if hi <= lo:
        hi = lo * 10
    return np.geomspace(lo, hi, count)


def _dataset(dataset):
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    V = np.stack([_vals(o) for o, _ in dataset])
    k = np.array([int(k) for _, k in dataset])
    return V, k


def ftc_sweep(dataset: Sequence, gamma_grid=None, bin_width: float = 1e-9) -> SweepResult:
    """RMSE of first threshold crossing against truth for each threshold.

    ``dataset`` is ``[(observation, k_star), ...]`` with equal-length vectors.
    """
    V, k = _dataset(dataset)
    gammas = default_gamma_grid(V) if gamma_grid is None else np.asarray(gamma_grid, dtype=float)
    if gammas.size == 0:
        raise ValueError("empty threshold grid")
    est = ftc_estimates(V, gammas)
    err = delay_errors(est, k[:, None], V.shape[1], bin_width)
    r = np.sqrt(np.mean(err ** 2, axis=0))
    fn = (est == 0).sum(axis=0)
    return SweepResult(gammas, r, float(gammas[int(np.argmin(r))]), fn)


def ftc_rmse(dataset: Sequence, gamma: float, bin_width: float = 1e-9) -> tuple:
    """(RMSE ns, false-negative count) at a single threshold."""
    res = ftc_sweep(dataset, [gamma], bin_width)
    return float(res.rmse_per_gamma[0]), int(res.fn_count[0])


def zetik_threshold(s, noise_peak: float) -> float:
    """``(0.3 + 0.7 n / |s|_inf) |s|_inf``, i.e. ``0.3 |s|_inf + 0.7 n``."""
    peak = float(np.max(np.abs(s))) if np.size(s) else 0.0
    if peak == 0.0:
        return 0.0
    return (0.3 + 0.7 * noise_peak / peak) * peak


def lead_noise_peak(lead_bins: int) -> Callable:
    """Peak absolute amplitude over the first ``lead_bins`` (pre-LOS) bins."""
    def fn(m):
        return float(np.max(np.abs(m[:lead_bins]))) if lead_bins > 0 else 0.0
    return fn


def zetik_estimate(stream: Sequence, noise_peak_fn: Callable, smoothing: float = 0.9,
                   lead_bins: int = 0, background=None) -> list:
    """Per-measurement first crossing of ``|s|`` over the adaptive threshold.

    The background starts at ``background`` (defaults to the first
    measurement). Returned bins are 1-based and counted from the first
    in-window bin (after ``lead_bins``); crossings inside the lead window are
    ignored.
    """
    if len(stream) == 0:
        raise ValueError("empty measurement stream")
    b = np.asarray(stream[0] if background is None else background, dtype=np.float64)
    out = []
    for m in stream:
        m = np.asarray(m, dtype=np.float64)
        b, s = zetik_background_update(b, m, smoothing)
        peak = float(np.max(np.abs(s)))
        if peak == 0.0:
            out.append(None)
            continue
        t = zetik_threshold(s, noise_peak_fn(m))
        hit = np.flatnonzero(np.abs(s[lead_bins:]) > t)
        out.append(int(hit[0]) + 1 if hit.size else None)
    return out
