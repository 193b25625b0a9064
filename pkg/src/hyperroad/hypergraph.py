"""Region hypergraph: block faces of the planar road map become hyperedges.

Faces are traced on the symmetrized road graph embedded at road positions.
At every road the incident half-edges are sorted by bearing; a walk that
arrives at ``b`` from ``a`` leaves along the neighbour that follows ``a``
counterclockwise around ``b``.  The walk with the largest absolute area is
the unbounded face.

Because roads are nodes, every intersection where k roads meet shows up as a
k-clique, and the straight-line drawing of that clique produces small
"junction faces" that are not regions.  Those are recognised and dropped:
a face whose distinct roads are pairwise adjacent is a junction when it has
four or more roads (a 4-clique of a line graph is always a star), and for a
triangle when some outside road touches exactly one of the three (a true
triangular block is touched at its corners, i.e. by two roads at a time).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import sparse

from .errors import ConfigError, GeometryError, InputError
from .geo import project_positions
from .roadnet import RoadNetwork, symmetrize_neighbors

CLUSTER_FEATURES = ("geometric", "size_only")
_BEARING_TOL = 1e-12


@dataclass(frozen=True)
class FaceFeatures:
    size: int
    area: float
    sides: int


@dataclass(frozen=True)
class Hypergraph:
    n_roads: int
    hyperedges: tuple[tuple[int, ...], ...]
    cluster_labels: np.ndarray
    features: tuple[FaceFeatures, ...]
    k: int
    cluster_features: str = "geometric"

    def __post_init__(self):
        for j, roads in enumerate(self.hyperedges):
            if len(set(roads)) < 3:
                raise InputError(f"hyperedge {j} has fewer than 3 distinct roads")
            if any(not 0 <= r < self.n_roads for r in roads):
                raise InputError(f"hyperedge {j} references a road outside 0..{self.n_roads - 1}")
        labels = np.asarray(self.cluster_labels, dtype=np.int64)
        object.__setattr__(self, "cluster_labels", labels)
        if len(labels) != len(self.hyperedges):
            raise InputError("one cluster label per hyperedge required")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.k):
            raise InputError(f"cluster labels must lie in [0, {self.k})")

    @property
    def n_hyperedges(self) -> int:
        return len(self.hyperedges)

    @property
    def hyperedge_to_roads(self) -> tuple[tuple[int, ...], ...]:
        return self.hyperedges

    @property
    def road_to_hyperedges(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.n_roads)]
        for j, roads in enumerate(self.hyperedges):
            for r in roads:
                out[r].append(j)
        return tuple(tuple(x) for x in out)

    @property
    def incidence(self) -> sparse.csr_matrix:
        """Boolean N x M matrix with H[i, j] = 1 iff road i is in hyperedge j."""
        rows = [r for roads in self.hyperedges for r in roads]
        cols = [j for j, roads in enumerate(self.hyperedges) for _ in roads]
        data = np.ones(len(rows), dtype=bool)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n_roads, self.n_hyperedges))

    def to_json(self, road_ids: list[str]) -> dict:
        names = ["size", "log_area", "sides"] if self.cluster_features == "geometric" else ["size"]
        return {
            "k": self.k,
            "cluster_features": self.cluster_features,
            "features": names,
            "hyperedges": [
                {"roads": [road_ids[r] for r in roads], "cluster": int(c),
                 "size": f.size, "area": f.area, "sides": f.sides}
                for roads, c, f in zip(self.hyperedges, self.cluster_labels, self.features)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict, net: RoadNetwork) -> "Hypergraph":
        index = {rid: k for k, rid in enumerate(net.ids())}
        try:
            edges, labels, feats = [], [], []
            for j, he in enumerate(doc["hyperedges"]):
                try:
                    edges.append(tuple(sorted(index[rid] for rid in he["roads"])))
                except KeyError as exc:
                    raise InputError(f"hyperedge {j}: unknown road id {exc.args[0]!r}") from exc
                labels.append(int(he["cluster"]))
                feats.append(FaceFeatures(int(he["size"]), float(he["area"]), int(he["sides"])))
            return cls(net.n_roads, tuple(edges), np.array(labels, dtype=np.int64), tuple(feats),
                       int(doc["k"]), doc.get("cluster_features", "geometric"))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"hypergraph: malformed document ({exc})") from exc


def save_hypergraph(hg: Hypergraph, net: RoadNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(hg.to_json(net.ids()), fh, indent=1)
        fh.write("\n")


def load_hypergraph(path, net: RoadNetwork) -> Hypergraph:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc.msg})") from exc
    return Hypergraph.from_json(doc, net)


def polygon_area(coords) -> float:
    """Absolute shoelace area of the closed polygon through ``coords``."""
    pts = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3:
        raise ValueError("polygon needs at least 3 vertices")
    return abs(_signed_area(pts))


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _rotation_system(net: RoadNetwork, xy: np.ndarray) -> list[list[int]]:
    order = []
    for v, nbrs in enumerate(net.out_neighbors):
        bearings = [math.atan2(xy[u, 1] - xy[v, 1], xy[u, 0] - xy[v, 0]) for u in nbrs]
        ranked = sorted(zip(bearings, nbrs))
        for (b1, u1), (b2, u2) in zip(ranked, ranked[1:]):
            if b2 - b1 <= _BEARING_TOL:
                raise GeometryError(
                    f"degenerate geometry at road {net.roads[v].id!r}: neighbours "
                    f"{net.roads[u1].id!r} and {net.roads[u2].id!r} share a bearing")
        order.append([u for _, u in ranked])
    return order


def trace_faces(net: RoadNetwork) -> list[list[int]]:
    """Every face walk of the embedding, the unbounded one and junction faces included.

    Each directed half-edge is used by exactly one walk.
    """
    net = symmetrize_neighbors(net)
    xy = project_positions(net.positions())
    order = _rotation_system(net, xy)
    slot = [{u: k for k, u in enumerate(nbrs)} for nbrs in order]
    used: set[tuple[int, int]] = set()
    walks = []
    for v in range(net.n_roads):
        for u in order[v]:
            if (v, u) in used:
                continue
            walk = []
            a, b = v, u
            while (a, b) not in used:
                used.add((a, b))
                walk.append(a)
                nbrs = order[b]
                a, b = b, nbrs[(slot[b][a] + 1) % len(nbrs)]
            walks.append(walk)
    return walks


def _is_junction(roads: set[int], adj: list[set[int]]) -> bool:
    if any(b not in adj[a] for a, b in combinations(roads, 2)):
        return False
    if len(roads) >= 4:
        return True
    touching: dict[int, int] = {}
    for r in roads:
        for u in adj[r]:
            if u not in roads:
                touching[u] = touching.get(u, 0) + 1
    return not touching or any(c == 1 for c in touching.values())


def extract_faces(net: RoadNetwork) -> list[list[int]]:
    """Bounded region faces as cyclic road sequences.

    Drops the unbounded face (and the outer walk of any further component),
    junction faces, and walks with fewer than three distinct roads.  An acyclic network yields an empty list.
    """
    if net.n_roads < 3:
        raise InputError("face extraction needs at least 3 roads")
    sym = symmetrize_neighbors(net)
    walks = trace_faces(sym)
    if not walks:
        return []
    xy = project_positions(sym.positions())
    signed = [_signed_area(xy[w]) if len(w) >= 3 else 0.0 for w in walks]
    outer = int(np.argmax(np.abs(signed)))
    # outer faces of every component wind opposite to bounded faces
    outer_sign = math.copysign(1.0, signed[outer])
    adj = [set(n) for n in sym.out_neighbors]
    faces = []
    for k, w in enumerate(walks):
        roads = set(w)
        if k == outer or len(roads) < 3 or signed[k] == 0.0 or signed[k] * outer_sign > 0:
            continue
        if _is_junction(roads, adj):
            continue
        faces.append(w)
    return faces


def face_features(net: RoadNetwork, face: list[int], xy: np.ndarray | None = None) -> FaceFeatures:
    if xy is None:
        xy = project_positions(net.positions())
    return FaceFeatures(size=len(set(face)), area=polygon_area(xy[face]), sides=len(face))


def feature_matrix(features, mode: str = "geometric") -> np.ndarray:
    """Z-scored clustering features; constant columns become zero."""
    if mode not in CLUSTER_FEATURES:
        raise ConfigError(f"cluster_features must be one of {CLUSTER_FEATURES}, got {mode!r}")
    if mode == "size_only":
        x = np.array([[f.size] for f in features], dtype=np.float64)
    else:
        x = np.array([[f.size, math.log(f.area), f.sides] for f in features], dtype=np.float64)
    x = x.reshape(len(features), -1)
    if len(x) == 0:
        return x
    std = x.std(axis=0)
    std[std == 0] = 1.0
    return (x - x.mean(axis=0)) / std


def kmeans(x: np.ndarray, k: int, seed: int, max_iter: int = 300) -> tuple[np.ndarray, list[float]]:
    """Lloyd's algorithm with farthest-point seeding.

    Returns labels and the within-cluster sum of squares after each
    iteration.  The first centre is a seeded random point; each further
    centre is the point farthest from those already chosen (lowest index on
    ties).  Empty clusters keep their previous centre.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if k < 1:
        raise ConfigError("k must be >= 1")
    if k > n:
        raise ConfigError(f"k={k} exceeds the number of points ({n})")
    if k == n:
        # every point is its own cluster
        return np.arange(n, dtype=np.int64), [0.0]
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    mind = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        masked = mind.copy()
        masked[chosen] = -1.0
        nxt = int(np.argmax(masked))
        chosen.append(nxt)
        mind = np.minimum(mind, ((x - x[nxt]) ** 2).sum(axis=1))
    centers = x[chosen].copy()

    labels = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        changed = not np.array_equal(new, labels)
        labels = new
        for c in range(k):
            members = x[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
        history.append(float(((x - centers[labels]) ** 2).sum()))
        if not changed:
            break
    return labels, history


def cluster_hyperedges(features, k: int, seed: int, mode: str = "geometric") -> np.ndarray:
    if k > len(features):
        raise ConfigError(f"k={k} exceeds the number of hyperedges ({len(features)})")
    labels, _ = kmeans(feature_matrix(features, mode), k, seed)
    return labels


def build_hypergraph(net: RoadNetwork, faces, k: int, seed: int = 0,
                     cluster_features: str = "geometric") -> Hypergraph:
    """One hyperedge per face with its road set, geometry and cluster label."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    xy = project_positions(net.positions())
    edges: list[tuple[int, ...]] = []
    feats: list[FaceFeatures] = []
    seen: set[tuple[int, ...]] = set()
    for face in faces:
        roads = tuple(sorted(set(face)))
        if len(roads) < 3 or roads in seen:
            continue
        seen.add(roads)
        edges.append(roads)
        feats.append(face_features(net, list(face), xy))
    labels = cluster_hyperedges(feats, k, seed, cluster_features)
    return Hypergraph(net.n_roads, tuple(edges), labels, tuple(feats), k, cluster_features)
