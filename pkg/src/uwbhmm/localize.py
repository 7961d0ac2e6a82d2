"""Presence imaging from per-link posteriors, and a least-squares range baseline.

Each pixel is mapped, per link, to the delay bin a single-bounce echo from
that pixel would land in. The pixel's evidence on a link is the rise of the
link's state-1 posterior at that bin; evidence is fused across links with a
p-norm, the image is Gaussian-smoothed, and its peak is the estimate.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage, optimize

from .hmm import PosteriorTrack
from .sim import excess_path

log = logging.getLogger(__name__)

PIXEL_PITCH = 0.10
SMOOTHING_SIGMA = 0.20
P_NORM = 0.2


class NoEstimateError(ValueError):
    """Raised when there is no evidence to produce a location."""


@dataclass(frozen=True)
class PixelGrid:
    """Pixel centers covering a rectangle, row-major (y outer, x inner)."""

    xs: np.ndarray
    ys: np.ndarray
    pitch: float

    @classmethod
    def covering(cls, bounds, pitch: float = PIXEL_PITCH) -> "PixelGrid":
        x0, y0, x1, y1 = bounds
        nx = max(int(np.ceil((x1 - x0) / pitch - 1e-9)), 1)
        ny = max(int(np.ceil((y1 - y0) / pitch - 1e-9)), 1)
        return cls(x0 + (np.arange(nx) + 0.5) * pitch, y0 + (np.arange(ny) + 0.5) * pitch, pitch)

    @property
    def shape(self) -> tuple:
        return (self.ys.size, self.xs.size)

    @property
    def centers(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def __len__(self):
        return self.xs.size * self.ys.size


@dataclass(frozen=True)
class LinkTrack:
    """One link's posterior (or point estimate) with its radio positions."""

    tx: tuple
    rx: tuple
    alpha: Optional[np.ndarray] = None
    k_star_hat: Optional[int] = None
    bin_width: float = 1e-9

    @classmethod
    def from_track(cls, track: PosteriorTrack, tx, rx, bin_width: float = 1e-9) -> "LinkTrack":
        return cls(tuple(tx), tuple(rx), np.asarray(track.alpha), track.k_star_hat, bin_width)


@dataclass(frozen=True)
class PresenceImage:
    values: np.ndarray        # (P,), row-major over grid
    grid: PixelGrid
    p_norm: float
    smoothing_sigma: float = SMOOTHING_SIGMA

    def as_matrix(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def normalized(self) -> np.ndarray:
        """Image matrix scaled to [0, 1] (all-zero stays zero)."""
        m = self.as_matrix()
        top = m.max()
        return m / top if top > 0 else m.copy()

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "value"])
            for (x, y), v in zip(self.grid.centers, self.values):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
        return path


def pixel_bin_map(tx, rx, centers, bin_distance: float, n_bins: int):
    """Delay bin of each pixel for one link, clamped to [1, n_bins].

    Returns ``(bins, out_of_window)``; the mask flags pixels whose unclamped
    bin exceeds ``n_bins``.
    """
    k = np.ceil(excess_path(tx, rx, centers) / bin_distance - 1e-9).astype(int)
    k = np.maximum(k, 1)
    out = k > n_bins
    return np.minimum(k, n_bins), out


def posterior_increments(alpha) -> np.ndarray:
    """``(alpha_k - alpha_{k-1})^+`` with ``alpha_0 = 0``; index 0 is bin 1."""
    a = np.asarray(alpha, dtype=np.float64)
    return np.maximum(np.diff(a, prepend=0.0), 0.0)


def _check_bin_width(links) -> float:
    widths = {float(l.bin_width) for l in links}
    if len(widths) > 1:
        raise ValueError(f"links disagree on bin width: {sorted(widths)}")
    return widths.pop()


def _fuse(per_link: list, p: float, count_nonzero: bool) -> np.ndarray:
    A = np.stack(per_link)
    if count_nonzero:
        return (A > 0).sum(axis=0).astype(float)
    if not p > 0:
        raise ValueError("p must be > 0 (use count_nonzero for the counting variant)")
    with np.errstate(divide="ignore"):
        return np.power(np.power(A, p).sum(axis=0), 1.0 / p)


def _warn_few(links):
    if len(links) < 3:
        warnings.warn(f"only {len(links)} link(s); at least 3 are needed for a unique 2-D fix",
                      stacklevel=3)


def presence_image_soft(links: Sequence[LinkTrack], grid: PixelGrid, p: float = P_NORM,
                        count_nonzero: bool = False,
                        smoothing_sigma: float = SMOOTHING_SIGMA) -> PresenceImage:
    """Fuse per-link posterior increments at each pixel's bin with a p-norm.

    Pixels that fall beyond a link's window get zero evidence from it.
    ``count_nonzero`` replaces the p-norm by a count of links with nonzero
    evidence.
    """
    if len(links) == 0:
        raise ValueError("no links given")
    T = _check_bin_width(links)
    _warn_few(links)
    d = 299_792_458.0 * T
    centers = grid.centers
    per_link = []
    for l in links:
        inc = posterior_increments(l.alpha)
        k, out = pixel_bin_map(l.tx, l.rx, centers, d, inc.size)
        a = inc[k - 1]
        a[out] = 0.0
        per_link.append(a)
    return PresenceImage(_fuse(per_link, p, count_nonzero), grid, p, smoothing_sigma)


def presence_image_hard(links: Sequence[LinkTrack], grid: PixelGrid, p: float = P_NORM,
                        n_bins: Optional[int] = None, count_nonzero: bool = False,
                        smoothing_sigma: float = SMOOTHING_SIGMA) -> PresenceImage:
    """Range-only variant: unit evidence on pixels whose bin equals the link's estimate.

    Links without a detection contribute nothing.
    """
    if len(links) == 0:
        raise ValueError("no links given")
    T = _check_bin_width(links)
    _warn_few(links)
    d = 299_792_458.0 * T
    centers = grid.centers
    per_link = []
    for l in links:
        if l.k_star_hat is None:
            per_link.append(np.zeros(len(grid)))
            continue
        n = n_bins if n_bins is not None else (l.alpha.size if l.alpha is not None else 10**9)
        k, out = pixel_bin_map(l.tx, l.rx, centers, d, n)
        per_link.append(((k == l.k_star_hat) & ~out).astype(float))
    return PresenceImage(_fuse(per_link, p, count_nonzero), grid, p, smoothing_sigma)


def smooth(image: PresenceImage) -> np.ndarray:
    """Gaussian-filtered image matrix (reflective boundary)."""
    sig = image.smoothing_sigma / image.grid.pitch
    m = image.as_matrix()
    if sig <= 0:
        return m.copy()
    return ndimage.gaussian_filter(m, sigma=sig, mode="reflect")


def locate(image: PresenceImage, rtol: float = 1e-12) -> np.ndarray:
    """Center of the peak pixel of the smoothed image.

    Values within ``rtol`` of the maximum count as ties; the lowest
    row-major pixel index wins.
    """
    if not np.any(image.values > 0):
        raise NoEstimateError("presence image is zero everywhere")
    s = smooth(image).ravel()
    top = s.max()
    idx = int(np.flatnonzero(s >= top - rtol * abs(top))[0])
    return image.grid.centers[idx]


@dataclass(frozen=True)
class SlaResult:
    position: np.ndarray
    converged: bool
    iterations: int
    cost: float


def sla_locate(estimates: Sequence, radios: Sequence, bin_distance: float,
               bin_offset: float = 0.0, max_iter: int = 100, start=None) -> SlaResult:
    """Least-squares fit of the bistatic range ellipses of detected links.

    ``estimates[m]`` is link ``m``'s bin estimate (None when undetected) and
    ``radios[m]`` its ``(tx, rx)``. The bistatic excess of bin ``k`` is
    taken at the bin center, ``(k - bin_offset) * bin_distance``. Solved by
    Levenberg-Marquardt from the centroid of the participating radios.
    """
    used = [(k, tr) for k, tr in zip(estimates, radios) if k is not None]
    if len(used) < 3:
        raise ValueError(f"need at least 3 detections for a 2-D fix, got {len(used)}")
    tx = np.array([np.asarray(tr[0], float) for _, tr in used])
    rx = np.array([np.asarray(tr[1], float) for _, tr in used])
    rng = np.array([(k - bin_offset) * bin_distance for k, _ in used]) + np.linalg.norm(tx - rx, axis=1)

    def resid(z):
        return np.linalg.norm(z - tx, axis=1) + np.linalg.norm(z - rx, axis=1) - rng

    def jac(z):
        ut = (z - tx) / np.maximum(np.linalg.norm(z - tx, axis=1), 1e-12)[:, None]
        ur = (z - rx) / np.maximum(np.linalg.norm(z - rx, axis=1), 1e-12)[:, None]
        return ut + ur

    z0 = np.mean(np.vstack([tx, rx]), axis=0) if start is None else np.asarray(start, float)
    sol = optimize.least_squares(resid, z0, jac=jac, method="lm", max_nfev=max_iter * 3)
    converged = bool(sol.success and sol.status > 0)
    if not converged:
        log.warning("SLA did not converge (%s); returning best iterate", sol.message)
    return SlaResult(sol.x, converged, int(sol.nfev), float(sol.cost))
