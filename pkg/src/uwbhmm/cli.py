"""Command-line harness: ``uwbhmm <subcommand> --out DIR ...``.

Every subcommand writes its outputs under ``--out`` together with a
``manifest.json`` recording the arguments, backend and files produced.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, baselines, experiments, kernels
from .hmm import EPSILON_ESCAPE, MAX_ITERS, TOL, HmmParams, baum_welch, forward_backward_many, init_params
from .localize import (P_NORM, PIXEL_PITCH, SMOOTHING_SIGMA, LinkTrack, NoEstimateError, PixelGrid,
                       locate, presence_image_hard, presence_image_soft, sla_locate)
from .observe import read_observations_csv, write_observations_csv
from .scenes import (PRESETS, Scene, load_scene, observations_from_traces, read_truth_csv, realize,
                     write_traces)

log = logging.getLogger("uwbhmm")


class CliError(Exception):
    pass


# -- shared helpers -------------------------------------------------------------

def _write_manifest(out: Path, args, files, extra=None) -> Path:
    d = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {"command": args.command, "version": __version__, "backend": kernels.BACKEND,
                "arguments": {k: (str(v) if isinstance(v, Path) else v) for k, v in d.items()},
                "files": sorted(str(Path(f).relative_to(out)) for f in files)}
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str))
    return path


def _scene(args) -> Scene:
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k] = json.loads(v)
    try:
        return load_scene(args.scene).with_(**overrides)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad scene override: {exc}") from exc


def _labelled(args) -> tuple:
    """Labelled observations, n_bins and bin width from --traces or --scene."""
    if getattr(args, "traces", None):
        tdir = Path(args.traces)
        if not (tdir / "calibration.csv").exists():
            raise CliError(f"{tdir} has no calibration.csv (run 'simulate' first)")
        obs = observations_from_traces(tdir)
        truth = read_truth_csv(tdir / "truth.csv") if (tdir / "truth.csv").exists() else {}
        bw = args.bin_width
        if (tdir / "scene.json").exists():
            bw = Scene.from_dict(json.loads((tdir / "scene.json").read_text())).geometry.bin_width
        pairs = [(o, truth.get((o.point_id, o.link_id))) for o in obs]
        return pairs, len(obs[0]), bw
    scene = _scene(args)
    data = realize(scene, args.seed, args.calib_samples, args.test_samples)
    return data.observations(), scene.n_bins, scene.geometry.bin_width


def _need_truth(pairs):
    if any(k is None for _, k in pairs):
        raise CliError("ground truth k* is missing for some observations (truth.csv)")


def _load_params(path) -> HmmParams:
    try:
        return HmmParams.load(path)
    except FileNotFoundError as exc:
        raise CliError(f"parameter file {path} not found") from exc


def _add_source(p):
    g = p.add_argument_group("data source (simulated scene or exported traces)")
    g.add_argument("--scene", default="room-A", help=f"preset ({', '.join(PRESETS)}) or scene JSON")
    g.add_argument("--set", action="append", metavar="KEY=JSON",
                   help="override a scene field, e.g. clutter.noise_std=0.1 (repeatable)")
    g.add_argument("--seed", type=int, default=None, help="realization seed (default: scene seed)")
    g.add_argument("--calib-samples", type=int, default=None)
    g.add_argument("--test-samples", type=int, default=None)
    g.add_argument("--traces", type=Path, default=None, help="directory written by 'simulate'")
    g.add_argument("--bin-width", type=float, default=1e-9, help="seconds, for traces without scene.json")


def _add_hmm(p, epsilon=True):
    g = p.add_argument_group("model")
    if epsilon:
        g.add_argument("--epsilon", type=float, default=EPSILON_ESCAPE, help="P_10 floor")
    g.add_argument("--max-iters", type=int, default=MAX_ITERS)
    g.add_argument("--tol", type=float, default=TOL)
    g.add_argument("--no-safeguard", action="store_true",
                   help="always accept the hard-partition refit even if likelihood drops")


def _write_rows(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _link(l) -> str:
    return f"{l[0]}-{l[1]}"


# -- subcommands --------------------------------------------------------------

def cmd_simulate(args, out: Path) -> list:
    scene = _scene(args)
    data = realize(scene, args.seed, args.calib_samples, args.test_samples)
    files = write_traces(data, out)
    files.append(scene.with_(seed=data.seed).save(out / "scene.json"))
    return files


def cmd_observe(args, out: Path) -> list:
    pairs, _, _ = _labelled(args)
    return [write_observations_csv(out / "observations.csv", [o for o, _ in pairs])]


def cmd_train(args, out: Path) -> list:
    pairs, _, _ = _labelled(args)
    _need_truth(pairs)
    params = init_params(pairs, args.epsilon)
    return [params.save(out / "params.json")]


def _observations_for_estimate(args):
    if args.observations:
        obs = read_observations_csv(args.observations)
        return [(o, None) for o in obs], len(obs[0]), args.bin_width
    return _labelled(args)


def cmd_estimate(args, out: Path) -> list:
    params = _load_params(args.params)
    pairs, n, T = _observations_for_estimate(args)
    vecs = [o.floored() for o, _ in pairs]
    files = []
    if args.max_iters > 0:
        res = baum_welch(vecs, params, args.max_iters, args.tol, safeguard=not args.no_safeguard)
        params = res.params
        files.append(_write_rows(out / "bw_trajectory.csv", ["iteration", "loglik"],
                                 [[i, repr(ll)] for i, ll in enumerate(res.logliks)]))
        files.append(params.save(out / "params_adapted.json"))
    tracks = forward_backward_many(vecs, params)
    rows, post = [], []
    for (o, k), t in zip(pairs, tracks):
        err = "" if k is None else repr(float(baselines.delay_errors([t.k_star_hat], [k], n, T)[0]))
        rows.append([o.point_id, _link(o.link_id), "" if t.k_star_hat is None else t.k_star_hat,
                     "" if k is None else k, err])
        post += [[o.point_id, _link(o.link_id), b + 1, repr(float(a))] for b, a in enumerate(t.alpha)]
    files.append(_write_rows(out / "estimates.csv", ["point", "link", "k_hat", "k_star", "error_ns"], rows))
    files.append(_write_rows(out / "posteriors.csv", ["point", "link", "bin", "alpha"], post))
    if all(k is not None for _, k in pairs):
        e = baselines.delay_errors([t.k_star_hat for t in tracks], [k for _, k in pairs], n, T)
        summary = {"rmse_ns": baselines.rmse(e), "bias_ns": float(np.mean(e)),
                   "fn_rate": float(np.mean([t.k_star_hat is None for t in tracks]))}
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
        files.append(out / "summary.json")
        print(json.dumps(summary))
    return files


def cmd_sweep(args, out: Path) -> list:
    pairs, n, T = _labelled(args)
    _need_truth(pairs)
    grid = None
    if args.gamma_min is not None or args.gamma_max is not None:
        if args.gamma_min is None or args.gamma_max is None:
            raise CliError("--gamma-min and --gamma-max go together")
        grid = np.geomspace(args.gamma_min, args.gamma_max, args.gamma_count)
    else:
        grid = baselines.default_gamma_grid([o for o, _ in pairs], args.gamma_count)
    res = baselines.ftc_sweep(pairs, grid, T)
    print(json.dumps({"best_gamma": res.best_gamma, "best_rmse_ns": res.best_rmse}))
    return [res.write_csv(out / "sweep.csv")]


def cmd_fp_trials(args, out: Path) -> list:
    scene = _scene(args)
    if args.params:
        params = _load_params(args.params)
    else:
        params = init_params(realize(load_scene(args.train_scene), args.train_seed).observations(),
                             args.epsilon)
    seed = scene.seed if args.seed is None else args.seed
    pools = experiments.empty_room_pools(scene, seed, args.pool_size)
    rows = []
    for h in args.half:
        r = experiments.false_positive_trials(pools, params, args.trials, seed=seed, half=h)
        rows.append([h, r["trials"], r["detections"], repr(r["fp_rate"])])
        print(json.dumps(r))
    return [_write_rows(out / "fp_trials.csv", ["calib_samples", "trials", "detections", "fp_rate"], rows)]


def cmd_localize(args, out: Path) -> list:
    scene = _scene(args)
    if len(scene.links) < 3:
        raise CliError(f"scene {scene.name!r} has {len(scene.links)} link(s); localization needs >= 3")
    params = _load_params(args.params)
    data = realize(scene, args.seed, args.calib_samples, args.test_samples)
    obs = data.observations()
    vecs = [o for o, _ in obs]
    if args.max_iters > 0:
        params = baum_welch(vecs, params, args.max_iters, args.tol).params
    tracks = forward_backward_many(vecs, params)
    geom = scene.geometry
    grid = PixelGrid.covering(geom.allowed_bounds or geom.room_bounds, args.pitch)
    by_point: dict = {}
    for (o, _), t in zip(obs, tracks):
        tx, rx = geom.link_positions(o.link_id)
        by_point.setdefault(o.point_id, []).append(LinkTrack.from_track(t, tx, rx, geom.bin_width))
    rows, files = [], []
    img_dir = out / "images"
    if args.images:
        img_dir.mkdir(exist_ok=True)
    errs = {m: [] for m in args.methods}
    for j, pt in enumerate(data.points):
        links = by_point[j]
        for m in args.methods:
            try:
                if m == "sla":
                    z = sla_locate([l.k_star_hat for l in links], [(l.tx, l.rx) for l in links],
                                   geom.bin_distance, args.sla_offset).position
                else:
                    fn = presence_image_soft if m == "forward-soft" else presence_image_hard
                    img = fn(links, grid, args.p, count_nonzero=args.count_nonzero,
                             smoothing_sigma=args.sigma)
                    if args.images:
                        files.append(img.write_csv(img_dir / f"{m}_point_{j:03d}.csv"))
                    z = locate(img)
                e = float(np.linalg.norm(np.asarray(z) - np.asarray(pt)))
                rows.append([j, m, repr(float(z[0])), repr(float(z[1])), repr(e)])
                errs[m].append(e)
            except (NoEstimateError, ValueError) as exc:
                log.warning("point %d, %s: %s", j, m, exc)
                rows.append([j, m, "", "", ""])
    files.append(_write_rows(out / "locations.csv", ["point", "method", "x", "y", "error_m"], rows))
    table = [[m, repr(float(np.sqrt(np.mean(np.square(v))) * 100)) if v else "",
              repr(float(np.median(v) * 100)) if v else "", len(data.points) - len(v)]
             for m, v in errs.items()]
    files.append(_write_rows(out / "localization_table.csv", ["method", "rms_cm", "median_cm", "missing"], table))
    for r in table:
        print(",".join(str(x) for x in r))
    return files


def cmd_report(args, out: Path) -> list:
    cfg = experiments.ExperimentConfig(
        train=args.train_scene, test=args.test_scene, methods=tuple(args.methods) if
        "all" not in args.methods else "all", calib_samples=args.calib_samples,
        test_samples=args.test_samples, seed=args.seed if args.seed is not None else 0,
        repeats=args.repeats, max_iters=args.max_iters, tol=args.tol, epsilon_escape=args.epsilon,
        zetik_smoothing=args.zetik_smoothing, gamma_grid_size=args.gamma_count, workers=args.workers)
    try:
        cfg.scenes()
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from exc
    res = experiments.run_experiment(cfg)
    files = res.write(out)
    for m, r in res.reports.items():
        print(f"{m:11s} rmse={r.rmse_ns:.3f} ns bias={r.bias_ns:+.3f} ns fn_rate={r.fn_rate:.4f}")
    if args.window_sizes:
        scene = load_scene(args.window_scene)
        params0 = init_params(realize(scene, args.window_train_seed).observations(block=0), args.epsilon)
        rows = []
        for size in args.window_sizes:
            st = experiments.empty_room_subset_study(scene, size, params0, seed=cfg.seed,
                                                     max_iters=args.max_iters)
            x, p = st["cdf"]
            rows += [[size, repr(float(a)), repr(float(b))] for a, b in zip(x, p)]
            print(f"window {size}: {st['windows']} windows, median rmse {np.median(st['rmse']):.3f} ns")
        files.append(_write_rows(out / "window_study_cdf.csv", ["window", "rmse_ns", "cdf"], rows))
    return files


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uwbhmm", description="Bistatic delay estimation experiments.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.set_defaults(func=fn)
        return p

    p = add("simulate", cmd_simulate, "simulate a scene and export traces")
    _add_source(p)

    p = add("observe", cmd_observe, "compute observation vectors")
    _add_source(p)

    p = add("train", cmd_train, "fit initial model parameters from labelled data")
    _add_source(p)
    p.add_argument("--epsilon", type=float, default=EPSILON_ESCAPE)

    p = add("estimate", cmd_estimate, "adapt a model and estimate delays")
    _add_source(p)
    _add_hmm(p, epsilon=False)
    p.add_argument("--params", type=Path, required=True, help="params JSON from 'train'")
    p.add_argument("--observations", type=Path, default=None, help="observations CSV from 'observe'")

    p = add("sweep", cmd_sweep, "threshold sweep for first-crossing detection")
    _add_source(p)
    p.add_argument("--gamma-count", type=int, default=100)
    p.add_argument("--gamma-min", type=float, default=None)
    p.add_argument("--gamma-max", type=float, default=None)

    p = add("fp-trials", cmd_fp_trials, "false-positive rate on empty-room captures")
    _add_source(p)
    p.add_argument("--params", type=Path, default=None, help="params JSON (default: train on --train-scene)")
    p.add_argument("--train-scene", default="room-B")
    p.add_argument("--train-seed", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=EPSILON_ESCAPE)
    p.add_argument("--trials", type=int, default=12000)
    p.add_argument("--pool-size", type=int, default=200, help="empty-room captures per link")
    p.add_argument("--half", type=int, nargs="+", default=[10],
                   help="captures per split half (one run per value)")

    p = add("localize", cmd_localize, "presence imaging and least-squares localization")
    _add_source(p)
    p.add_argument("--params", type=Path, required=True)
    p.add_argument("--max-iters", type=int, default=MAX_ITERS)
    p.add_argument("--tol", type=float, default=TOL)
    p.add_argument("--methods", nargs="+", default=list(experiments.LOCALIZATION_METHODS),
                   choices=experiments.LOCALIZATION_METHODS)
    p.add_argument("--p", type=float, default=P_NORM, help="p-norm exponent")
    p.add_argument("--count-nonzero", action="store_true", help="fuse by counting links with evidence")
    p.add_argument("--pitch", type=float, default=PIXEL_PITCH, help="pixel pitch (m)")
    p.add_argument("--sigma", type=float, default=SMOOTHING_SIGMA, help="smoothing std (m)")
    p.add_argument("--sla-offset", type=float, default=0.0,
                   help="bins subtracted from k_hat when converting to range")
    p.add_argument("--images", action="store_true", help="also write per-point image CSVs")

    p = add("report", cmd_report, "train/test room experiment with all methods")
    p.add_argument("--train-scene", default="room-A")
    p.add_argument("--test-scene", default="room-B")
    p.add_argument("--methods", nargs="+", default=["all"], choices=["all", *experiments.METHODS])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=4)
    p.add_argument("--calib-samples", type=int, default=None)
    p.add_argument("--test-samples", type=int, default=None)
    p.add_argument("--zetik-smoothing", type=float, default=0.9)
    p.add_argument("--gamma-count", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--window-sizes", type=int, nargs="*", default=[],
                   help="also run the calibration-window study for these sizes")
    p.add_argument("--window-scene", default="through-wall")
    p.add_argument("--window-train-seed", type=int, default=1000)
    _add_hmm(p)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        if getattr(args, "train_seed", "unset") is None:
            args.train_seed = load_scene(args.train_scene).seed
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            files = args.func(args, out)
        _write_manifest(out, args, files)
    except (CliError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"uwbhmm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
