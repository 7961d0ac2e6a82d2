"""Scene descriptions, shipped presets and whole-scene realization.

A scene file is a JSON document::

    {
      "name": "room-A",
      "seed": 1,
      "n_bins": 48,
      "lead_bins": 5,
      "calibration": {"samples": 10, "blocks": 1},
      "test_samples": 10,
      "geometry": {
        "tx_positions": [[x, y], ...],
        "rx_positions": [[x, y], ...],
        "links": [[tx_index, rx_index], ...],        # optional
        "person_points": [[x, y], ...],
        "room_bounds": [xmin, ymin, xmax, ymax],
        "allowed_bounds": [xmin, ymin, xmax, ymax],  # optional
        "bin_width": 1e-9
      },
      "clutter": {"path_count": 200, "decay_constant": 2e-8, ...}
    }

Any ClutterModel field may appear under ``clutter``; omitted ones take
their defaults. Coordinates are meters, times seconds.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .observe import ObservationVector, SampleSet, observe
from .sim import ClutterModel, LinkChannel, SceneGeometry, grid_points


@dataclass(frozen=True)
class Scene:
    name: str
    geometry: SceneGeometry
    clutter: ClutterModel = field(default_factory=ClutterModel)
    n_bins: int = 48
    lead_bins: int = 5
    calib_samples: int = 10
    calib_blocks: int = 1
    test_samples: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.calib_samples < 2 or self.test_samples < 2:
            raise ValueError("calibration and test sample counts must be >= 2")
        if self.calib_blocks < 1:
            raise ValueError("calib_blocks must be >= 1")

    @property
    def links(self) -> tuple:
        return self.geometry.links

    def with_(self, **kw) -> "Scene":
        clutter_kw = {k[len("clutter."):]: v for k, v in kw.items() if k.startswith("clutter.")}
        kw = {k: v for k, v in kw.items() if not k.startswith("clutter.")}
        scene = replace(self, **kw)
        if clutter_kw:
            scene = replace(scene, clutter=replace(scene.clutter, **clutter_kw))
        return scene

    def to_dict(self) -> dict:
        g = self.geometry
        geo = {
            "tx_positions": [list(p) for p in g.tx_positions],
            "rx_positions": [list(p) for p in g.rx_positions],
            "links": [list(l) for l in g.links],
            "person_points": [list(p) for p in g.person_points],
            "room_bounds": list(g.room_bounds),
            "bin_width": g.bin_width,
        }
        if g.allowed_bounds is not None:
            geo["allowed_bounds"] = list(g.allowed_bounds)
        return {
            "name": self.name,
            "seed": self.seed,
            "n_bins": self.n_bins,
            "lead_bins": self.lead_bins,
            "calibration": {"samples": self.calib_samples, "blocks": self.calib_blocks},
            "test_samples": self.test_samples,
            "geometry": geo,
            "clutter": asdict(self.clutter),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        geo = dict(d["geometry"])
        for key in ("room_bounds", "allowed_bounds"):
            if geo.get(key) is not None:
                geo[key] = tuple(geo[key])
        for key in ("tx_positions", "rx_positions", "person_points", "links"):
            if geo.get(key) is not None:
                geo[key] = tuple(tuple(p) for p in geo[key])
        cal = d.get("calibration", {})
        return cls(
            name=d.get("name", "scene"),
            geometry=SceneGeometry(**geo),
            clutter=ClutterModel(**d.get("clutter", {})),
            n_bins=int(d.get("n_bins", 48)),
            lead_bins=int(d.get("lead_bins", 5)),
            calib_samples=int(cal.get("samples", 10)),
            calib_blocks=int(cal.get("blocks", 1)),
            test_samples=int(d.get("test_samples", 10)),
            seed=int(d.get("seed", 0)),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


def _room_a() -> Scene:
    radios = ((0.2, 0.4), (4.8, 0.2), (4.7, 4.3), (0.3, 4.1))
    geom = SceneGeometry(radios, radios, grid_points(1.02, 0.81, 4, 4, 0.9),
                         room_bounds=(0.0, 0.0, 5.0, 4.5))
    return Scene("room-A", geom, ClutterModel(noise_std=0.15), n_bins=32, seed=1)


def _room_b() -> Scene:
    radios = ((0.3, 0.3), (7.7, 0.5), (7.5, 6.7), (0.4, 6.6))
    geom = SceneGeometry(radios, radios, grid_points(2.2, 2.15, 5, 4, 0.9),
                         room_bounds=(0.0, 0.0, 8.0, 7.0))
    clutter = ClutterModel(path_count=120, decay_constant=30e-9)
    return Scene("room-B", geom, clutter, n_bins=32, seed=2)


def _through_wall() -> Scene:
    tx, rx = (-0.5, -0.18), (0.5, -0.18)
    pts = grid_points(-1.5, 0.6, 6, 5, 0.6, 1.2)
    geom = SceneGeometry((tx,), (rx,), pts, room_bounds=(-3.0, -2.0, 3.0, 0.0),
                         allowed_bounds=(-3.0, 0.0, 3.0, 6.0))
    clutter = ClutterModel(integration_factor=8, attenuation_db=5.0)
    return Scene("through-wall", geom, clutter, calib_samples=100, calib_blocks=2,
                 test_samples=20, seed=3)


PRESETS = {"room-A": _room_a, "room-B": _room_b, "through-wall": _through_wall}


def load_scene(source) -> Scene:
    """Preset name or path to a scene JSON file."""
    if isinstance(source, Scene):
        return source
    if str(source) in PRESETS:
        return PRESETS[str(source)]()
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"scene {source!r} is neither a preset ({', '.join(PRESETS)}) "
                                "nor an existing file")
    return Scene.from_dict(json.loads(path.read_text()))


@dataclass
class LinkData:
    channel: LinkChannel
    calib: np.ndarray           # (blocks, samples, n)
    calib_lead: np.ndarray      # (blocks, samples, lead)
    tests: list                 # per point (samples, n)
    test_leads: list
    k_star: list

    @property
    def link(self) -> tuple:
        return self.channel.link

    def calibration_set(self, rows: Optional[slice] = None, block: Optional[int] = None) -> SampleSet:
        x = self.calib.reshape(-1, self.calib.shape[-1]) if block is None else self.calib[block]
        if rows is not None:
            x = x[rows]
        return SampleSet(x, "calibration", self.link)

    def test_set(self, j: int) -> SampleSet:
        return SampleSet(self.tests[j], "test", self.link)


@dataclass
class SceneData:
    """One realization of a scene: every link's captures and ground truth."""

    scene: Scene
    seed: int
    links: list

    @property
    def points(self) -> tuple:
        return self.scene.geometry.person_points

    def observations(self, calib_rows: Optional[slice] = None, block: Optional[int] = None) -> list:
        """Observation vectors ordered link-major, with truth k* per entry.

        Returns a list of ``(ObservationVector, k_star)``; values are
        floored so they can go straight into the HMM.
        """
        out = []
        for ld in self.links:
            cal = ld.calibration_set(calib_rows, block)
            for j in range(len(ld.tests)):
                out.append((observe(cal, ld.test_set(j), point_id=j).floored(), ld.k_star[j]))
        return out

    def truth_table(self) -> list:
        return [(j, ld.link, ld.k_star[j], *self.points[j])
                for ld in self.links for j in range(len(ld.tests))]


def realize(scene: Scene, seed: Optional[int] = None, calib_samples: Optional[int] = None,
            test_samples: Optional[int] = None) -> SceneData:
    """Draw calibration and person captures for every link and point."""
    seed = scene.seed if seed is None else int(seed)
    nc = scene.calib_samples if calib_samples is None else int(calib_samples)
    nt = scene.test_samples if test_samples is None else int(test_samples)
    links = []
    for link in scene.links:
        ch = LinkChannel(scene.geometry, scene.clutter, link, seed, scene.n_bins, scene.lead_bins)
        cal, lead = [], []
        for b in range(scene.calib_blocks):
            e, l = ch.sample_static(nc, stream=b)
            cal.append(e)
            lead.append(l)
        tests, tleads, ks = [], [], []
        for j, p in enumerate(scene.geometry.person_points):
            e, l, k = ch.sample_person(p, nt, stream=0, point_index=j)
            tests.append(e)
            tleads.append(l)
            ks.append(k)
        links.append(LinkData(ch, np.stack(cal), np.stack(lead), tests, tleads, ks))
    return SceneData(scene, seed, links)


def write_traces(data: SceneData, out_dir) -> list:
    """Export captures as CSV files with columns ``link,realization,bin,energy``.

    Writes ``calibration.csv`` (realizations numbered across blocks),
    ``point_NNN.csv`` per person point and ``truth.csv``. Bins are 1-based.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def dump(path, blocks):
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["link", "realization", "bin", "energy"])
            for link, mat in blocks:
                tag = f"{link[0]}-{link[1]}"
                for r, row in enumerate(mat):
                    for k, e in enumerate(row, start=1):
                        w.writerow([tag, r, k, repr(float(e))])
        written.append(path)

    dump(out / "calibration.csv",
         [(ld.link, ld.calib.reshape(-1, ld.calib.shape[-1])) for ld in data.links])
    for j in range(len(data.points)):
        dump(out / f"point_{j:03d}.csv", [(ld.link, ld.tests[j]) for ld in data.links])
    truth = out / "truth.csv"
    with truth.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point", "link", "k_star", "x", "y"])
        for j, link, k, x, y in data.truth_table():
            w.writerow([j, f"{link[0]}-{link[1]}", k, x, y])
    written.append(truth)
    return written


def read_trace_csv(path) -> dict:
    """``{link: (realizations x bins) array}`` from a trace CSV."""
    acc: dict = {}
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            a, b = r["link"].split("-")
            acc.setdefault((int(a), int(b)), {}).setdefault(int(r["realization"]), {})[int(r["bin"])] = float(r["energy"])
    out = {}
    for link, reals in acc.items():
        n = max(max(v) for v in reals.values())
        out[link] = np.array([[reals[i][k] for k in range(1, n + 1)] for i in sorted(reals)])
    return out


def read_truth_csv(path) -> dict:
    """``{(point, link): k_star}``."""
    out = {}
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            a, b = r["link"].split("-")
            out[(int(r["point"]), (int(a), int(b)))] = int(r["k_star"])
    return out


def observations_from_traces(trace_dir) -> list:
    """Observation vectors from a directory written by :func:`write_traces`."""
    trace_dir = Path(trace_dir)
    cal = read_trace_csv(trace_dir / "calibration.csv")
    out = []
    for f in sorted(trace_dir.glob("point_*.csv")):
        j = int(f.stem.split("_")[1])
        for link, mat in read_trace_csv(f).items():
            out.append(observe(SampleSet(cal[link], "calibration", link),
                               SampleSet(mat, "test", link), point_id=j).floored())
    return out


def observation_matrix(obs: list) -> np.ndarray:
    return np.stack([o.values if isinstance(o, ObservationVector) else o for o in obs])
