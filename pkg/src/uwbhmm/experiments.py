"""Experiment protocols on synthetic scenes: room swaps, false-positive
trials, calibration-window studies and localization comparisons."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import baselines
from .hmm import (EPSILON_ESCAPE, MAX_ITERS, TOL, HmmParams, baum_welch,
                  forward_backward_many, init_params, posterior_batch)
from .localize import (P_NORM, PIXEL_PITCH, SMOOTHING_SIGMA, LinkTrack, NoEstimateError,
                       PixelGrid, locate, presence_image_hard, presence_image_soft, sla_locate)
from .observe import SampleSet, bin_stats, observe, symmetric_kl
from .scenes import Scene, SceneData, load_scene, realize

log = logging.getLogger(__name__)

METHODS = ("hmm", "ftc", "zetik")


def derive_seeds(master: int, count: int) -> list:
    """Independent integer seeds spawned from ``master``."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(int(master)).spawn(count)]


def pool_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """``map`` with an optional process pool; results keep input order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@dataclass
class ExperimentConfig:
    """Train on one scene, evaluate on another.

    ``repeats`` independent realization pairs are drawn; the training
    realizations are pooled to fit the initial model and the transferred
    threshold, and each test realization is adapted separately.
    """

    train: object = "room-A"
    test: object = "room-B"
    methods: tuple = METHODS
    calib_samples: Optional[int] = None
    test_samples: Optional[int] = None
    seed: int = 0
    repeats: int = 1
    max_iters: int = MAX_ITERS
    tol: float = TOL
    epsilon_escape: float = EPSILON_ESCAPE
    zetik_smoothing: float = 0.9
    gamma_grid_size: int = 100
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.methods, str):
            self.methods = METHODS if self.methods == "all" else (self.methods,)
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method(s) {bad}; choose from {METHODS} or 'all'")
        for name in ("calib_samples", "test_samples"):
            v = getattr(self, name)
            if v is not None and v < 2:
                raise ValueError(f"{name} must be >= 2")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    def scenes(self) -> tuple:
        return load_scene(self.train), load_scene(self.test)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("train", "test"):
            v = getattr(self, key)
            d[key] = v.name if isinstance(v, Scene) else str(v)
        d["methods"] = list(self.methods)
        return d


@dataclass
class Trial:
    repeat: int
    point: int
    link: tuple
    k_star: int
    k_hat: Optional[int]
    error_ns: float


@dataclass
class MetricsReport:
    method: str
    trials: list
    metadata: dict = field(default_factory=dict)
    fp_rate: Optional[float] = None

    @property
    def errors(self) -> np.ndarray:
        return np.array([t.error_ns for t in self.trials], dtype=float)

    @property
    def rmse_ns(self) -> float:
        return baselines.rmse(self.errors)

    @property
    def bias_ns(self) -> float:
        return float(np.mean(self.errors)) if self.trials else float("nan")

    @property
    def fn_rate(self) -> float:
        return float(np.mean([t.k_hat is None for t in self.trials])) if self.trials else float("nan")

    def summary(self) -> dict:
        return {"method": self.method, "rmse_ns": self.rmse_ns, "bias_ns": self.bias_ns,
                "fn_rate": self.fn_rate, "fp_rate": self.fp_rate, "trials": len(self.trials),
                **self.metadata}

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["repeat", "point", "link", "k_star", "k_hat", "error_ns"])
            for t in self.trials:
                w.writerow([t.repeat, t.point, f"{t.link[0]}-{t.link[1]}", t.k_star,
                            "" if t.k_hat is None else t.k_hat, repr(t.error_ns)])
        return path


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: dict
    trajectory: list            # per repeat: [{"iteration", "loglik", "rmse_ns"}]
    params0: HmmParams
    adapted: list               # per repeat final HmmParams

    def summary(self) -> dict:
        return {"config": self.config.to_dict(),
                "reports": {m: r.summary() for m, r in self.reports.items()},
                "initial_params": self.params0.to_dict(),
                "adapted_params": [p.to_dict() for p in self.adapted]}

    def write(self, out_dir) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = []
        for m, r in self.reports.items():
            files.append(r.write_csv(out / f"trials_{m}.csv"))
        traj = out / "bw_trajectory.csv"
        with traj.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["repeat", "iteration", "loglik", "rmse_ns"])
            for rep, rows in enumerate(self.trajectory):
                for row in rows:
                    w.writerow([rep, row["iteration"], repr(row["loglik"]), repr(row["rmse_ns"])])
        files.append(traj)
        summ = out / "summary.json"
        summ.write_text(json.dumps(self.summary(), indent=2))
        files.append(summ)
        return files


def _labelled(data: SceneData, calib_rows=None) -> list:
    return data.observations(calib_rows)


def _trials(rep, data_obs, k_hat, n_bins, bin_width) -> list:
    err = baselines.delay_errors(k_hat, [k for _, k in data_obs], n_bins, bin_width)
    return [Trial(rep, o.point_id, o.link_id, int(k), kh, float(e))
            for (o, k), kh, e in zip(data_obs, k_hat, err)]


def zetik_point_estimates(data: SceneData, smoothing: float = 0.9) -> list:
    """Per (link, point) Zetik estimate, ordered like :meth:`SceneData.observations`.

    The background is warmed up on the link's calibration captures, then
    run over the point's captures; the estimate is the median of the
    per-capture detections (None if no capture detects).
    """
    lead = data.scene.lead_bins
    noise = baselines.lead_noise_peak(lead)
    out = []
    for ld in data.links:
        ch = ld.channel
        cal = ch.traces(ld.calib.reshape(-1, ld.calib.shape[-1]),
                        ld.calib_lead.reshape(-1, ld.calib_lead.shape[-1]))
        cal_amp = [t.amplitudes() for t in cal]
        b0 = np.mean(cal_amp, axis=0)
        for j in range(len(ld.tests)):
            amps = [t.amplitudes() for t in ch.traces(ld.tests[j], ld.test_leads[j])]
            ests = baselines.zetik_estimate(cal_amp + amps, noise, smoothing, lead, background=b0)
            hits = [k for k in ests[len(cal_amp):] if k is not None]
            out.append(int(np.floor(np.median(hits))) if hits else None)
    return out


def _realize_pair(args):
    train, test, s_train, s_test, nc, nt = args
    return realize(train, s_train, nc, nt), realize(test, s_test, nc, nt)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Train on ``config.train`` and evaluate every selected method on ``config.test``.

    HMM: the initial model is fit on labelled training data and then
    adapted by Baum-Welch on each unlabelled test realization. FTC is
    reported twice, with the threshold that is best on the training data
    (``ftc``) and with the best threshold for the test data (``ftc-oracle``).
    """
    train, test = config.scenes()
    if abs(train.geometry.bin_width - test.geometry.bin_width) > 0:
        raise ValueError("train and test scenes use different bin widths")
    T = test.geometry.bin_width
    seeds = derive_seeds(config.seed, 2 * config.repeats)
    jobs = [(train, test, seeds[2 * r], seeds[2 * r + 1], config.calib_samples, config.test_samples)
            for r in range(config.repeats)]
    pairs = pool_map(_realize_pair, jobs, config.workers)
    train_obs = [x for tr, _ in pairs for x in _labelled(tr)]
    test_obs = [_labelled(te) for _, te in pairs]
    n = test.n_bins

    reports, trajectory, adapted = {}, [], []
    params0 = init_params(train_obs, config.epsilon_escape)

    if "hmm" in config.methods:
        trials, iters, rejected = [], [], 0
        for rep, obs in enumerate(test_obs):
            vecs = [o for o, _ in obs]
            rows = []

            def track(it, params, ll, vecs=vecs, obs=obs, rows=rows):
                k = [t.k_star_hat for t in forward_backward_many(vecs, params)]
                e = baselines.delay_errors(k, [kk for _, kk in obs], n, T)
                rows.append({"iteration": it, "loglik": float(ll), "rmse_ns": baselines.rmse(e)})

            res = baum_welch(vecs, params0, config.max_iters, config.tol, callback=track)
            trajectory.append(rows)
            adapted.append(res.params)
            iters.append(res.iterations)
            rejected += res.rejected
            k_hat = [t.k_star_hat for t in forward_backward_many(vecs, res.params)]
            trials += _trials(rep, obs, k_hat, n, T)
        reports["hmm"] = MetricsReport("hmm", trials, {
            "params": "initial fit on training scene, Baum-Welch per test realization",
            "iterations": iters, "safeguarded_iterations": rejected,
            "epsilon_escape": config.epsilon_escape})

    if "ftc" in config.methods:
        grid = baselines.default_gamma_grid(
            [o for o, _ in train_obs] + [o for obs in test_obs for o, _ in obs],
            config.gamma_grid_size)
        g_train = baselines.ftc_sweep(train_obs, grid, T).best_gamma
        pooled = [x for obs in test_obs for x in obs]
        sweep = baselines.ftc_sweep(pooled, grid, T)
        for name, g in (("ftc", g_train), ("ftc-oracle", sweep.best_gamma)):
            trials = []
            for rep, obs in enumerate(test_obs):
                k_hat = [baselines.ftc_estimate(o, g) for o, _ in obs]
                trials += _trials(rep, obs, k_hat, n, T)
            reports[name] = MetricsReport(name, trials, {"gamma": g, "gamma_source":
                                          "training scene" if name == "ftc" else "test scene"})
        reports["ftc-oracle"].metadata["sweep"] = {
            "gammas": sweep.gammas.tolist(), "rmse": sweep.rmse_per_gamma.tolist()}

    if "zetik" in config.methods:
        trials = []
        for rep, ((_, te), obs) in enumerate(zip(pairs, test_obs)):
            trials += _trials(rep, obs, zetik_point_estimates(te, config.zetik_smoothing), n, T)
        reports["zetik"] = MetricsReport("zetik", trials, {"smoothing": config.zetik_smoothing,
                                                           "lead_bins": test.lead_bins})
    return ExperimentResult(config, reports, trajectory, params0, adapted)


# -- false positives ---------------------------------------------------------

def false_positive_trials(pools: Sequence, params: HmmParams, trials: int, seed: int = 0,
                          half: Optional[int] = None, batch: int = 2000) -> dict:
    """Detection rate of the HMM on empty-room captures split at random.

    Each trial picks a pool (round robin), draws a random permutation and
    uses the first ``half`` captures as calibration and the next ``half`` as
    the test set; no Baum-Welch adaptation. ``half`` defaults to half the
    pool. Returns ``{"fp_rate", "detections", "trials", "half"}``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if len(pools) == 0:
        raise ValueError("no empty-room pools given")
    mats = [p.samples if isinstance(p, SampleSet) else np.asarray(p, dtype=float) for p in pools]
    size = min(m.shape[0] for m in mats)
    h = size // 2 if half is None else int(half)
    if h < 2 or 2 * h > size:
        raise ValueError(f"pool of {size} captures cannot be split into two sets of {h} (need >= 2 each)")
    rng = np.random.default_rng(seed)
    detections = 0
    for start in range(0, trials, batch):
        V = []
        for t in range(start, min(start + batch, trials)):
            m = mats[t % len(mats)]
            idx = rng.permutation(m.shape[0])
            p = bin_stats(SampleSet(m[idx[:h]], "calibration"))
            q = bin_stats(SampleSet(m[idx[h:2 * h]], "test"))
            V.append(symmetric_kl(p, q).floored().values)
        gamma, _, _ = posterior_batch(np.stack(V), params)
        detections += int(np.sum(np.any(gamma[:, :, 1] > 0.5, axis=1)))
    return {"fp_rate": detections / trials, "detections": detections, "trials": trials, "half": h}


def empty_room_pools(scene, seed: int, samples: int, blocks: int = 1) -> list:
    """Empty-room capture pools, one per link and block."""
    scene = load_scene(scene)
    data = realize(scene.with_(calib_blocks=blocks), seed, calib_samples=samples)
    return [ld.calib[b] for ld in data.links for b in range(blocks)]


# -- calibration window study -----------------------------------------------

def window_count(pool_len: int, size: int, blocks: int = 1, step: int = 1) -> int:
    """Number of sequential windows of ``size`` per block, summed over blocks."""
    if size < 2 or size > pool_len:
        raise ValueError(f"window size must be in [2, {pool_len}]")
    return blocks * ((pool_len - size) // step + 1)


def empty_room_subset_study(scene, subset_size: int, params0: HmmParams, seed: int = 0,
                            step: int = 1, max_iters: int = MAX_ITERS) -> dict:
    """Pipeline RMSE for every window of sequential calibration captures.

    Windows slide by ``step`` inside each calibration block. Returns
    ``{"rmse": per-window array, "cdf": (sorted rmse, probabilities), "windows"}``.
    """
    scene = load_scene(scene)
    data = realize(scene, seed)
    pool_len = scene.calib_samples
    count = window_count(pool_len, subset_size, scene.calib_blocks, step)
    if scene.calib_blocks * pool_len < 2 * subset_size and count > 1:
        raise ValueError("scene does not provide two windows' worth of calibration captures")
    n, T = scene.n_bins, scene.geometry.bin_width
    out = []
    for b in range(scene.calib_blocks):
        for s in range(0, pool_len - subset_size + 1, step):
            obs = data.observations(slice(s, s + subset_size), block=b)
            vecs = [o for o, _ in obs]
            params = baum_welch(vecs, params0, max_iters).params if max_iters else params0
            k = [t.k_star_hat for t in forward_backward_many(vecs, params)]
            out.append(baselines.rmse(baselines.delay_errors(k, [kk for _, kk in obs], n, T)))
    rm = np.array(out)
    assert rm.size == count
    srt = np.sort(rm)
    return {"rmse": rm, "cdf": (srt, np.arange(1, srt.size + 1) / srt.size), "windows": count}


# -- localization -------------------------------------------------------------

LOCALIZATION_METHODS = ("forward-soft", "forward-hard", "sla")


def localization_errors(data: SceneData, params: HmmParams, p: float = P_NORM,
                        pitch: float = PIXEL_PITCH, smoothing_sigma: float = SMOOTHING_SIGMA,
                        adapt: bool = True, max_iters: int = MAX_ITERS) -> dict:
    """Per-point location errors (meters) of every method on one realization.

    Points with no estimate get NaN.
    """
    scene = data.scene
    geom = scene.geometry
    if len(geom.links) < 3:
        raise ValueError("localization needs at least 3 links")
    obs = data.observations()
    vecs = [o for o, _ in obs]
    if adapt:
        params = baum_welch(vecs, params, max_iters).params
    tracks = forward_backward_many(vecs, params)
    grid = PixelGrid.covering(geom.allowed_bounds or geom.room_bounds, pitch)
    T = geom.bin_width
    by_point: dict = {}
    for (o, _), tr in zip(obs, tracks):
        tx, rx = geom.link_positions(o.link_id)
        by_point.setdefault(o.point_id, []).append(LinkTrack.from_track(tr, tx, rx, T))
    errs = {m: [] for m in LOCALIZATION_METHODS}
    for j, pt in enumerate(data.points):
        links = by_point[j]
        truth = np.asarray(pt)
        for m in LOCALIZATION_METHODS:
            try:
                if m == "forward-soft":
                    z = locate(presence_image_soft(links, grid, p, smoothing_sigma=smoothing_sigma))
                elif m == "forward-hard":
                    z = locate(presence_image_hard(links, grid, p, n_bins=scene.n_bins,
                                                   smoothing_sigma=smoothing_sigma))
                else:
                    z = sla_locate([l.k_star_hat for l in links], [(l.tx, l.rx) for l in links],
                                   geom.bin_distance).position
                errs[m].append(float(np.linalg.norm(z - truth)))
            except (NoEstimateError, ValueError):
                errs[m].append(float("nan"))
    return {m: np.array(v) for m, v in errs.items()}


def localization_report(scene, params: HmmParams, seeds: Sequence, **kw) -> dict:
    """RMS and median error (cm) per method, pooled over realizations.

    Missing estimates are excluded from both statistics and counted.
    Returns ``{"table": {method: {"rms_cm", "median_cm", "missing"}},
    "per_seed_median_cm": {method: array}}``.
    """
    scene = load_scene(scene)
    pooled = {m: [] for m in LOCALIZATION_METHODS}
    per_seed = {m: [] for m in LOCALIZATION_METHODS}
    for s in seeds:
        e = localization_errors(realize(scene, s), params, **kw)
        for m, v in e.items():
            pooled[m].append(v)
            per_seed[m].append(np.nanmedian(v) * 100 if np.any(np.isfinite(v)) else np.nan)
    table = {}
    for m, parts in pooled.items():
        v = np.concatenate(parts)
        ok = v[np.isfinite(v)]
        table[m] = {"rms_cm": float(np.sqrt(np.mean(ok ** 2)) * 100) if ok.size else float("nan"),
                    "median_cm": float(np.median(ok) * 100) if ok.size else float("nan"),
                    "missing": int(np.sum(~np.isfinite(v)))}
    return {"table": table, "per_seed_median_cm": {m: np.array(v) for m, v in per_seed.items()}}
