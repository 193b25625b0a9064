"""Synthetic grid cities with district-correlated road labels.

Intersections sit on a rows x cols lattice (optionally jittered); every
lattice segment is a road placed at its midpoint, and two roads are
adjacent iff their segments share an intersection.  The lattice is split
into D rectangular districts, and each road draws its labels from its
district's distribution.

Two default label plans exist.  ``distinct`` gives district k the modal
class ``k mod C``.  ``checkerboard`` alternates two classes across the
district grid like a chessboard, so diagonal districts share a label; no
function of the form f(x) + g(y) separates that layout.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .roadnet import AttributeSchema, RoadNetwork, RoadRecord, save_network, save_schema

LABEL_CARDINALITIES = {"road_type": 5, "speed": 6, "lanes": 6, "oneway": 2}
LABEL_PLANS = ("distinct", "checkerboard")


@dataclass
class GridCitySpec:
    rows: int = 10
    cols: int = 10
    spacing: float = 0.001
    districts: int = 4
    purity: float = 0.8
    label_plan: str = "distinct"
    distributions: dict[str, list[list[float]]] | None = None
    perturbation: float = 0.0
    origin: tuple[float, float] = (103.8, 1.3)
    node_attributes: list[str] = field(default_factory=list)
    missing_rate: float = 0.0
    seed: int = 0

    def validate(self) -> "GridCitySpec":
        if self.rows < 3 or self.cols < 3:
            raise ConfigError("rows and cols must be >= 3")
        if self.districts < 1:
            raise ConfigError("districts must be >= 1")
        if not 0 <= self.perturbation < 0.4:
            raise ConfigError("perturbation must lie in [0, 0.4) of the block spacing")
        if self.spacing <= 0:
            raise ConfigError("spacing must be > 0")
        if self.label_plan not in LABEL_PLANS:
            raise ConfigError(f"label_plan must be one of {LABEL_PLANS}")
        if not 0 <= self.purity <= 1:
            raise ConfigError("purity must lie in [0, 1]")
        if not 0 <= self.missing_rate < 1:
            raise ConfigError("missing_rate must lie in [0, 1)")
        for name in self.node_attributes:
            if name not in LABEL_CARDINALITIES:
                raise ConfigError(f"unknown attribute {name!r}")
        for name, dists in (self.distributions or {}).items():
            if name not in LABEL_CARDINALITIES:
                raise ConfigError(f"unknown attribute {name!r}")
            if len(dists) != self.districts:
                raise ConfigError(f"{name}: need one distribution per district")
            for p in dists:
                if len(p) != LABEL_CARDINALITIES[name] or min(p) < 0 or not math.isclose(sum(p), 1.0):
                    raise ConfigError(f"{name}: each distribution needs {LABEL_CARDINALITIES[name]} "
                                      "non-negative probabilities summing to 1")
        return self

    def district_distribution(self, name: str, district: int) -> np.ndarray:
        """Label distribution of one district for attribute ``name``.

        distinct: modal class ``district mod C`` with probability ``purity``,
        the rest spread uniformly.  checkerboard: class ``(di + dj) mod 2``
        with probability ``purity``, the other of the two classes otherwise.
        """
        if self.distributions and name in self.distributions:
            return np.asarray(self.distributions[name][district], dtype=np.float64)
        c = LABEL_CARDINALITIES[name]
        if self.label_plan == "checkerboard":
            _, dc = district_layout(self.districts)
            modal = (district // dc + district % dc) % 2
            p = np.zeros(c)
            p[modal] = self.purity
            p[1 - modal] = 1.0 - self.purity
            return p
        p = np.full(c, (1.0 - self.purity) / (c - 1))
        p[district % c] = self.purity
        return p

    @classmethod
    def from_json(cls, doc: dict) -> "GridCitySpec":
        try:
            doc = dict(doc)
            if "origin" in doc:
                doc["origin"] = tuple(doc["origin"])
            return cls(**doc).validate()
        except TypeError as exc:
            raise ConfigError(f"grid city spec: {exc}") from exc

    def to_json(self) -> dict:
        return asdict(self)


def district_layout(d: int) -> tuple[int, int]:
    """Most square (district rows, district cols) factorisation of ``d``."""
    best = (1, d)
    for r in range(1, int(math.isqrt(d)) + 1):
        if d % r == 0:
            best = (r, d // r)
    return best


@dataclass
class GridCity:
    network: RoadNetwork
    labels: dict[str, list[int]]
    districts: list[int]
    segments: list[tuple[tuple[int, int], tuple[int, int]]]


def generate(spec: GridCitySpec) -> GridCity:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    r, c = spec.rows, spec.cols
    jitter = rng.uniform(-spec.perturbation, spec.perturbation, size=(r, c, 2)) * spec.spacing
    lon0, lat0 = spec.origin
    pts = np.empty((r, c, 2))
    for i in range(r):
        for j in range(c):
            pts[i, j] = (lon0 + j * spec.spacing + jitter[i, j, 0], lat0 + i * spec.spacing + jitter[i, j, 1])

    segments = []
    for i in range(r):
        for j in range(c):
            if j + 1 < c:
                segments.append(((i, j), (i, j + 1)))
            if i + 1 < r:
                segments.append(((i, j), (i + 1, j)))

    at: dict[tuple[int, int], list[int]] = {}
    for k, (a, b) in enumerate(segments):
        at.setdefault(a, []).append(k)
        at.setdefault(b, []).append(k)
    edges = set()
    for roads in at.values():
        for x in roads:
            for y in roads:
                if x != y:
                    edges.add((x, y))

    dr, dc = district_layout(spec.districts)
    districts = []
    for (a, b) in segments:
        mi, mj = (a[0] + b[0]) / 2, (a[1] + b[1]) / 2
        di = min(int(mi / (r - 1) * dr), dr - 1)
        dj = min(int(mj / (c - 1) * dc), dc - 1)
        districts.append(di * dc + dj)

    labels: dict[str, list[int]] = {}
    for name, card in LABEL_CARDINALITIES.items():
        labels[name] = [int(rng.choice(card, p=spec.district_distribution(name, dk))) for dk in districts]

    attrs = list(spec.node_attributes)
    schema = AttributeSchema(tuple(attrs), tuple(LABEL_CARDINALITIES[a] for a in attrs)) if attrs else None
    roads = []
    for k, (a, b) in enumerate(segments):
        mid = (pts[a] + pts[b]) / 2
        vals = []
        for name in attrs:
            missing = spec.missing_rate > 0 and rng.random() < spec.missing_rate
            vals.append(None if missing else labels[name][k])
        roads.append(RoadRecord(f"r{k}", (float(mid[0]), float(mid[1])), tuple(vals)))
    net = RoadNetwork(tuple(roads), frozenset(edges), schema)
    return GridCity(net, labels, districts, segments)


def write_labels(city: GridCity, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = list(LABEL_CARDINALITIES)
        w.writerow(["id", *names])
        for k, road in enumerate(city.network.roads):
            w.writerow([road.id, *(city.labels[n][k] for n in names)])


def read_labels(path) -> tuple[list[str], dict[str, list[int | None]]]:
    """Gold label CSV: ``id`` then one integer column per task; blanks are missing."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    if not rows or rows[0][:1] != ["id"]:
        raise InputError(f"{path}:1: header must start with id")
    header = rows[0]
    ids: list[str] = []
    cols: dict[str, list[int | None]] = {h: [] for h in header[1:]}
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise InputError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        ids.append(row[0])
        for h, v in zip(header[1:], row[1:]):
            try:
                cols[h].append(int(v) if v.strip() else None)
            except ValueError as exc:
                raise InputError(f"{path}:{line}: {h} value {v!r} is not an integer") from exc
    return ids, cols


def write_city(city: GridCity, out_dir) -> dict[str, str]:
    """Write nodes.csv, edges.csv, labels.csv (and schema.json when attributed)."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f) for k, f in
             (("nodes", "nodes.csv"), ("edges", "edges.csv"), ("labels", "labels.csv"))}
    save_network(city.network, paths["nodes"], paths["edges"])
    write_labels(city, paths["labels"])
    if city.network.schema is not None:
        paths["schema"] = os.path.join(out_dir, "schema.json")
        save_schema(city.network.schema, paths["schema"])
    return paths


def load_spec(path) -> GridCitySpec:
    try:
        with open(path, encoding="utf-8") as fh:
            return GridCitySpec.from_json(json.load(fh))
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc.msg})") from exc
