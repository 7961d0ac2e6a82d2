"""Range-bin statistics and the symmetric-KL observation vector.

Calibration (empty-room) and test sample sets of per-bin energies are
reduced to Gaussian moments per bin, and each bin's change is quantified by
the closed-form symmetric Kullback-Leibler divergence between the two
Gaussians.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

VARIANCE_FLOOR_REL = 1e-12
OBS_FLOOR = 1e-12


@dataclass(frozen=True)
class SampleSet:
    """Repeated range-bin energy measurements for one link and condition.

    ``samples`` has shape (realizations, bins).
    """

    samples: np.ndarray
    condition: str = "calibration"
    link_id: tuple = (0, 1)

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"samples must be 2-D (realization x bin), got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise ValueError(f"need at least 2 realizations to estimate variance, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("sample energies must be finite and nonnegative")
        if self.condition not in ("calibration", "test"):
            raise ValueError(f"condition must be 'calibration' or 'test', got {self.condition!r}")
        object.__setattr__(self, "samples", arr)

    @property
    def n_bins(self) -> int:
        return self.samples.shape[1]

    @property
    def n_realizations(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class BinStats:
    mu: np.ndarray
    sigma2: np.ndarray


@dataclass(frozen=True)
class ObservationVector:
    values: np.ndarray
    link_id: tuple = (0, 1)
    point_id: Optional[int] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("observation values must be 1-D")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("observations must be finite and nonnegative")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]

    def floored(self, floor: float = None) -> "ObservationVector":
        """Copy with values raised to ``floor`` (default ``OBS_FLOOR``) so it can
        enter the HMM, whose emissions live on ``ln O``."""
        f = OBS_FLOOR if floor is None else floor
        return ObservationVector(np.maximum(self.values, f), self.link_id, self.point_id)


def variance_floor(samples: np.ndarray) -> float:
    """Floor applied to per-bin variances: 1e-12 times the squared global mean.

    Falls back to the smallest normal double for an all-zero set.
    """
    g = float(np.mean(samples))
    return max(VARIANCE_FLOOR_REL * g * g, np.finfo(float).tiny)


def bin_stats(sample_set: SampleSet) -> BinStats:
    """Per-bin mean and unbiased variance, with the variance floored."""
    x = sample_set.samples if isinstance(sample_set, SampleSet) else np.asarray(sample_set, float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("bin_stats needs at least 2 realizations")
    mu = x.mean(axis=0)
    sigma2 = x.var(axis=0, ddof=1)
    return BinStats(mu=mu, sigma2=np.maximum(sigma2, variance_floor(x)))


def symmetric_kl(p: BinStats, q: BinStats, link_id=(0, 1), point_id=None) -> ObservationVector:
    """Closed-form symmetric KL divergence between per-bin Gaussians.

    ``O_k = 0.5 * (vp/vq + vq/vp + (mp - mq)^2 (vp + vq) / (vp vq)) - 1``

    Round-off below zero is clipped, so equal moments give exactly 0.
    """
    mp, vp = np.asarray(p.mu, float), np.asarray(p.sigma2, float)
    mq, vq = np.asarray(q.mu, float), np.asarray(q.sigma2, float)
    if mp.shape != mq.shape:
        raise ValueError(f"bin count mismatch: {mp.shape[0]} vs {mq.shape[0]}")
    if np.any(vp <= 0) or np.any(vq <= 0):
        raise ValueError("variances must be strictly positive")
    d2 = (mp - mq) ** 2
    o = 0.5 * (vp / vq + vq / vp + d2 * (vp + vq) / (vp * vq)) - 1.0
    return ObservationVector(np.maximum(o, 0.0), link_id=link_id, point_id=point_id)


def observe(calibration: SampleSet, test: SampleSet, point_id=None) -> ObservationVector:
    """Observation vector for one test set against its link's calibration set."""
    if calibration.link_id != test.link_id:
        raise ValueError(f"link mismatch: {calibration.link_id} vs {test.link_id}")
    return symmetric_kl(bin_stats(calibration), bin_stats(test), calibration.link_id, point_id)


def log_observations(values) -> np.ndarray:
    """Natural log of observations after raising them to ``OBS_FLOOR``."""
    return np.log(np.maximum(np.asarray(values, dtype=np.float64), OBS_FLOOR))


def normalize_bins(samples: np.ndarray) -> np.ndarray:
    """Scale each bin's samples to zero mean and unit (population) variance."""
    x = np.asarray(samples, dtype=np.float64)
    sd = x.std(axis=0)
    if np.any(sd <= 0):
        raise ValueError("cannot normalize a bin with zero sample variance")
    return (x - x.mean(axis=0)) / sd


def ks_normality_stat(sets: Sequence) -> tuple:
    """One-sample KS test of pooled, per-bin-normalized samples against N(0, 1).

    Each element of ``sets`` is a SampleSet (or a realization x bin array);
    every bin of every set is normalized on its own, then all values are
    aggregated. Raises ValueError on empty input or a zero-variance bin.
    """
    if len(sets) == 0:
        raise ValueError("no sample sets given")
    pooled = []
    for s in sets:
        x = s.samples if isinstance(s, SampleSet) else np.asarray(s, float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] < 2:
            raise ValueError("each bin needs at least 2 samples")
        pooled.append(normalize_bins(x).ravel())
    z = np.concatenate(pooled)
    res = stats.kstest(z, "norm")
    return float(res.statistic), float(res.pvalue)


def zetik_background_update(b_prev, m, smoothing: float = 0.9):
    """One step of exponential background tracking.

    Returns ``(b, s)`` with ``b = smoothing * b_prev + (1 - smoothing) * m``
    and the background-subtracted signal ``s = m - b``.
    """
    if not 0.0 < smoothing < 1.0:
        raise ValueError(f"smoothing must lie in (0, 1), got {smoothing}")
    b_prev = np.asarray(b_prev, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if b_prev.shape != m.shape:
        raise ValueError(f"length mismatch: {b_prev.shape} vs {m.shape}")
    b = smoothing * b_prev + (1.0 - smoothing) * m
    return b, m - b


# -- CSV interchange ---------------------------------------------------------

def _link_str(link) -> str:
    return f"{link[0]}-{link[1]}"


def parse_link(text: str) -> tuple:
    a, b = text.split("-")
    return int(a), int(b)


def write_observations_csv(path, observations: Iterable[ObservationVector]) -> Path:
    """Write observation vectors as long-format rows ``point,link,bin,value``.

    Bins are 1-based.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point", "link", "bin", "value"])
        for ov in observations:
            pid = "" if ov.point_id is None else ov.point_id
            for k, v in enumerate(ov.values, start=1):
                w.writerow([pid, _link_str(ov.link_id), k, repr(float(v))])
    return path


def read_observations_csv(path) -> list:
    rows: dict = {}
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            pid = None if r["point"] == "" else int(r["point"])
            key = (pid, parse_link(r["link"]))
            rows.setdefault(key, []).append((int(r["bin"]), float(r["value"])))
    out = []
    for (pid, link), kv in rows.items():
        kv.sort()
        bins = [k for k, _ in kv]
        if bins != list(range(1, len(bins) + 1)):
            raise ValueError(f"non-contiguous bins for point {pid} link {link}")
        out.append(ObservationVector(np.array([v for _, v in kv]), link_id=link, point_id=pid))
    return out
