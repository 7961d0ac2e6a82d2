"""Synthetic cluttered UWB range-bin energies with a known bistatic delay.

The static channel of each link is a dense set of specular paths with
exponentially decaying power and Rayleigh magnitudes, binned directly into
per-bin energies. Every capture adds a thermal noise floor with Gaussian
fluctuation. A person adds an energy bump at their bin ``k*`` and perturbs
the energy of all later bins with a log-normal factor that is partly fixed
for the standing position and partly redrawn per capture.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class SceneGeometry:
    """Radio and person coordinates in meters.

    ``links`` lists (tx index, rx index) pairs; when omitted every
    combination of distinct tx/rx positions is used. ``allowed_bounds``
    optionally replaces ``room_bounds`` as the region person points may
    occupy (through-wall scenes put the person in the adjacent room).
    Rectangles are ``(xmin, ymin, xmax, ymax)``.
    """

    tx_positions: tuple
    rx_positions: tuple
    person_points: tuple = ()
    room_bounds: tuple = (0.0, 0.0, 5.0, 5.0)
    bin_width: float = 1e-9
    links: Optional[tuple] = None
    allowed_bounds: Optional[tuple] = None

    def __post_init__(self):
        tx = tuple(tuple(map(float, p)) for p in self.tx_positions)
        rx = tuple(tuple(map(float, p)) for p in self.rx_positions)
        pts = tuple(tuple(map(float, p)) for p in self.person_points)
        object.__setattr__(self, "tx_positions", tx)
        object.__setattr__(self, "rx_positions", rx)
        object.__setattr__(self, "person_points", pts)
        object.__setattr__(self, "room_bounds", tuple(map(float, self.room_bounds)))
        if self.allowed_bounds is not None:
            object.__setattr__(self, "allowed_bounds", tuple(map(float, self.allowed_bounds)))
        if self.links is None:
            if tx == rx:
                # transceivers: each unordered pair once
                links = tuple((i, j) for i in range(len(tx)) for j in range(i + 1, len(rx)))
            else:
                links = tuple((i, j) for i in range(len(tx)) for j in range(len(rx))
                              if tx[i] != rx[j])
            object.__setattr__(self, "links", links)
        else:
            object.__setattr__(self, "links", tuple(tuple(map(int, l)) for l in self.links))
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")
        for p in tx + rx:
            if not _inside(p, self.room_bounds):
                raise ValueError(f"radio at {p} lies outside room bounds {self.room_bounds}")
        for p in pts:
            self.check_person_point(p)
        for link in self.links:
            self.link_positions(link)

    @property
    def bin_distance(self) -> float:
        return SPEED_OF_LIGHT * self.bin_width

    def link_positions(self, link) -> tuple:
        i, j = link
        if not (0 <= i < len(self.tx_positions) and 0 <= j < len(self.rx_positions)):
            raise ValueError(f"invalid link {link}: have {len(self.tx_positions)} tx, "
                             f"{len(self.rx_positions)} rx")
        return np.array(self.tx_positions[i]), np.array(self.rx_positions[j])

    def check_person_point(self, p):
        region = self.allowed_bounds or self.room_bounds
        if not _inside(p, region):
            raise ValueError(f"person point {tuple(p)} outside allowed region {region}")


def _inside(p, r) -> bool:
    return r[0] <= p[0] <= r[2] and r[1] <= p[1] <= r[3]


def excess_path(tx, rx, z) -> np.ndarray:
    """Bistatic excess path length ``|t - z| + |z - r| - |t - r|`` (meters).

    ``z`` may be a single point or an (N, 2) array.
    """
    tx = np.asarray(tx, float)
    rx = np.asarray(rx, float)
    z = np.asarray(z, float)
    return (np.linalg.norm(z - tx, axis=-1) + np.linalg.norm(z - rx, axis=-1)
            - np.linalg.norm(tx - rx))


def delay_bin(tx, rx, z, bin_distance: float):
    """Ceiling bin of the excess path, clamped below at 1 (unclamped above)."""
    k = np.ceil(excess_path(tx, rx, z) / bin_distance - 1e-9)
    return np.maximum(k, 1).astype(int)


@dataclass(frozen=True)
class ClutterModel:
    """Channel and noise parameters (energies in arbitrary units).

    ``noise_floor_sigmas`` sets the mean thermal energy per bin in units of
    ``noise_std``; it keeps simulated energies positive and near-Gaussian.
    ``attenuation_db`` scales all path energies (wall penetration).
    """

    path_count: int = 200
    decay_constant: float = 40e-9
    path_amplitude_scale: float = 1.0
    noise_std: float = 0.08
    person_path_gain: float = 0.3
    person_tail_perturbation: float = 0.2
    integration_factor: int = 1
    los_gain: float = 1.0
    jitter_ratio: float = 1.0
    noise_floor_sigmas: float = 6.0
    attenuation_db: float = 0.0

    def __post_init__(self):
        if int(self.path_count) < 1:
            raise ValueError("path_count must be a positive integer")
        if int(self.integration_factor) < 1:
            raise ValueError("integration_factor must be a positive integer")
        for name in ("decay_constant", "path_amplitude_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("noise_std", "person_path_gain", "los_gain", "jitter_ratio", "noise_floor_sigmas"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.person_tail_perturbation <= 1.0:
            raise ValueError("person_tail_perturbation must lie in [0, 1]")

    @property
    def attenuation(self) -> float:
        return 10.0 ** (-self.attenuation_db / 10.0)

    @property
    def noise_floor(self) -> float:
        return self.noise_floor_sigmas * self.noise_std

    @property
    def effective_noise_std(self) -> float:
        return self.noise_std / math.sqrt(self.integration_factor)


def expected_profile(clutter: ClutterModel, n_bins: int, bin_width: float = 1e-9) -> np.ndarray:
    """Analytic mean path energy per bin, averaged over channel draws.

    Paths have delays uniform over the window and mean energy
    ``scale * exp(-delay / decay)``; the line-of-sight path sits in bin 1.
    Excludes the noise floor.
    """
    T, tau, W = bin_width, clutter.decay_constant, n_bins * bin_width
    edges = np.arange(n_bins + 1) * T
    per_bin = tau * (np.exp(-edges[:-1] / tau) - np.exp(-edges[1:] / tau)) / W
    prof = clutter.path_count * clutter.path_amplitude_scale * per_bin
    prof[0] += clutter.los_gain * clutter.path_amplitude_scale
    return prof * clutter.attenuation


@dataclass(frozen=True)
class CirTrace:
    """One capture: per-bin energies for bins 1..n of a link.

    ``lead`` holds energies of noise-only bins preceding the line-of-sight
    bin, used to estimate the peak noise level of the amplitude view.
    """

    energies: np.ndarray
    link_id: tuple
    truth_k_star: Optional[int] = None
    lead: np.ndarray = field(default_factory=lambda: np.zeros(0))
    signs: Optional[np.ndarray] = None
    noise_floor: float = 0.0

    def amplitudes(self) -> np.ndarray:
        """Signed amplitude view over lead + window bins.

        ``sign_k * sqrt(max(r_k - floor, 0))``: the floor-corrected energy
        with the channel's per-bin polarity.
        """
        r = np.concatenate([self.lead, self.energies])
        signs = self.signs if self.signs is not None else np.ones_like(r)
        return signs * np.sqrt(np.maximum(r - self.noise_floor, 0.0))


def _rng(seed, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


_STREAM_CHANNEL = 0
_STREAM_PERSON_POSE = 1
_STREAM_CAPTURE = 2


class LinkChannel:
    """Static channel of one link, fixed by (scene seed, link)."""

    def __init__(self, geom: SceneGeometry, clutter: ClutterModel, link, seed: int,
                 n_bins: int = 48, lead_bins: int = 5):
        if n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        self.geom = geom
        self.clutter = clutter
        self.link = tuple(link)
        self.tx, self.rx = geom.link_positions(link)
        self.seed = int(seed)
        self.n_bins = int(n_bins)
        self.lead_bins = int(lead_bins)
        rng = _rng(seed, _STREAM_CHANNEL, *self.link)
        T = geom.bin_width
        W = n_bins * T
        delays = rng.uniform(0.0, W, clutter.path_count)
        mean_e = clutter.path_amplitude_scale * np.exp(-delays / clutter.decay_constant)
        # Rayleigh magnitude -> exponentially distributed energy
        energies = rng.exponential(mean_e)
        bins = np.clip(np.ceil(delays / T).astype(int), 1, n_bins)
        mu = np.bincount(bins - 1, weights=energies, minlength=n_bins)
        mu[0] += clutter.los_gain * clutter.path_amplitude_scale
        self.mu = mu * clutter.attenuation
        self.signs = rng.choice([-1.0, 1.0], size=self.lead_bins + n_bins)

    @property
    def noise_floor(self) -> float:
        return self.clutter.noise_floor

    def k_star(self, point) -> int:
        return int(delay_bin(self.tx, self.rx, point, self.geom.bin_distance))

    def _noise(self, mean: np.ndarray, rng) -> np.ndarray:
        c = self.clutter
        if c.noise_std == 0:
            return np.maximum(mean, 0.0)
        floor = c.noise_floor
        sd = c.effective_noise_std
        if floor > 0:
            # fluctuation grows with the signal riding on the floor
            sd = sd * np.sqrt(1.0 + mean / floor)
        return np.maximum(mean + floor + sd * rng.standard_normal(mean.shape), 0.0)

    def _lead(self, count: int, rng) -> np.ndarray:
        return self._noise(np.zeros((count, self.lead_bins)), rng)

    def sample_static(self, count: int, stream: int = 0) -> tuple:
        """(window energies, lead energies) for ``count`` empty-room captures."""
        if count < 1:
            raise ValueError("sample count must be positive")
        rng = _rng(self.seed, _STREAM_CAPTURE, *self.link, 0, stream)
        mean = np.broadcast_to(self.mu, (count, self.n_bins))
        return self._noise(mean, rng), self._lead(count, rng)

    def sample_person(self, point, count: int, stream: int = 0, point_index: int = 0) -> tuple:
        """(window energies, lead energies, k*) for captures with a person at ``point``.

        The fixed part of the person's perturbation depends only on the scene
        seed, link and ``point_index``; ``stream`` selects fresh capture noise.
        """
        if count < 1:
            raise ValueError("sample count must be positive")
        self.geom.check_person_point(point)
        k_star = self.k_star(point)
        if k_star > self.n_bins:
            raise ValueError(f"person at {tuple(point)} maps to bin {k_star} beyond the "
                             f"{self.n_bins}-bin window")
        c = self.clutter
        pose = _rng(self.seed, _STREAM_PERSON_POSE, *self.link, point_index)
        rng = _rng(self.seed, _STREAM_CAPTURE, *self.link, 1 + point_index, stream)
        tail = slice(k_star - 1, None)
        n_tail = self.n_bins - k_star + 1
        shift = c.person_tail_perturbation * pose.standard_normal(n_tail)
        jitter = c.person_tail_perturbation * c.jitter_ratio
        mean = np.repeat(self.mu[None, :], count, axis=0)
        mean[:, tail] *= np.exp(shift + jitter * rng.standard_normal((count, n_tail)))
        bump = (c.person_path_gain * c.path_amplitude_scale * c.attenuation
                * math.exp(-(k_star - 1) * self.geom.bin_width / c.decay_constant))
        mean[:, k_star - 1] += bump * np.maximum(1.0 + 0.1 * rng.standard_normal(count), 0.0)
        return self._noise(mean, rng), self._lead(count, rng), k_star

    def traces(self, energies, lead, k_star=None) -> list:
        return [CirTrace(e, self.link, k_star, l, self.signs, self.noise_floor)
                for e, l in zip(energies, lead)]


def make_static_scene(geom: SceneGeometry, clutter: ClutterModel, link, seed: int,
                      count: int = 10, n_bins: int = 48, stream: int = 0) -> list:
    """Independent empty-room captures of one link's static channel."""
    ch = LinkChannel(geom, clutter, link, seed, n_bins)
    e, lead = ch.sample_static(count, stream)
    return ch.traces(e, lead)


def make_person_scene(geom: SceneGeometry, clutter: ClutterModel, link, person_point,
                      seed: int, count: int = 10, n_bins: int = 48, stream: int = 0,
                      point_index: int = 0) -> list:
    """Captures of one link with a person standing at ``person_point``.

    Every trace carries ``truth_k_star``, the ceiling bin of the person's
    excess path (clamped to 1).
    """
    ch = LinkChannel(geom, clutter, link, seed, n_bins)
    e, lead, k = ch.sample_person(person_point, count, stream, point_index)
    return ch.traces(e, lead, k)


def grid_points(x0: float, y0: float, nx: int, ny: int, dx: float, dy: Optional[float] = None) -> tuple:
    dy = dx if dy is None else dy
    return tuple((x0 + i * dx, y0 + j * dy) for j in range(ny) for i in range(nx))
