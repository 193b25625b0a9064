"""Road network data model and CSV ingestion.

Roads are the nodes of the graph; an edge (i, j) means road i leads into or
touches road j.  Row order of the nodes file fixes road indices.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from .errors import InputError

MISSING = None


@dataclass(frozen=True)
class AttributeSchema:
    names: tuple[str, ...]
    cardinalities: tuple[int, ...]

    def __post_init__(self):
        if len(self.names) != len(self.cardinalities):
            raise InputError("schema: names and cardinalities differ in length")
        for name, card in zip(self.names, self.cardinalities):
            if card < 2:
                raise InputError(f"schema: attribute {name!r} has cardinality {card} < 2")

    def __len__(self) -> int:
        return len(self.names)

    def to_json(self) -> dict:
        return {"attributes": [{"name": n, "cardinality": c}
                               for n, c in zip(self.names, self.cardinalities)]}

    @classmethod
    def from_json(cls, doc: dict) -> "AttributeSchema":
        try:
            attrs = doc["attributes"]
            return cls(tuple(str(a["name"]) for a in attrs),
                       tuple(int(a["cardinality"]) for a in attrs))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"schema: malformed document ({exc})") from exc


@dataclass(frozen=True)
class RoadRecord:
    id: str
    position: tuple[float, float]  # (lon, lat) in degrees
    attributes: tuple[int | None, ...] = ()


@dataclass(frozen=True)
class RoadNetwork:
    roads: tuple[RoadRecord, ...]
    edges: frozenset[tuple[int, int]]
    schema: AttributeSchema | None = None
    out_neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.roads)
        nbrs: list[list[int]] = [[] for _ in range(n)]
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise InputError(f"edge ({i}, {j}) references a road outside 0..{n - 1}")
            if i == j:
                raise InputError(f"self-loop on road {self.roads[i].id!r}")
            nbrs[i].append(j)
        object.__setattr__(self, "out_neighbors", tuple(tuple(sorted(x)) for x in nbrs))
        m = len(self.schema) if self.schema is not None else 0
        for r in self.roads:
            if not all(math.isfinite(c) for c in r.position):
                raise InputError(f"road {r.id!r}: non-finite coordinate")
            if len(r.attributes) != m:
                raise InputError(f"road {r.id!r}: expected {m} attribute slots, got {len(r.attributes)}")

    @property
    def n_roads(self) -> int:
        return len(self.roads)

    @property
    def n_attributes(self) -> int:
        return len(self.schema) if self.schema is not None else 0

    def ids(self) -> list[str]:
        return [r.id for r in self.roads]

    def positions(self):
        import numpy as np
        return np.array([r.position for r in self.roads], dtype=np.float64).reshape(-1, 2)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def is_symmetric(self) -> bool:
        return all((j, i) in self.edges for i, j in self.edges)


def symmetrize_neighbors(net: RoadNetwork) -> RoadNetwork:
    """Return a copy where every edge also appears reversed."""
    edges = set(net.edges)
    edges.update((j, i) for i, j in net.edges)
    if len(edges) == len(net.edges):
        return net
    return RoadNetwork(net.roads, frozenset(edges), net.schema)


def adjacency_row(net: RoadNetwork, i: int) -> list[int]:
    if not 0 <= i < net.n_roads:
        raise IndexError(f"road index {i} out of range 0..{net.n_roads - 1}")
    return list(net.out_neighbors[i])


def neighborhoods(net: RoadNetwork, directed: bool = False) -> tuple[tuple[int, ...], ...]:
    """Neighbor lists used by aggregation, reconstruction and sampling."""
    return net.out_neighbors if directed else symmetrize_neighbors(net).out_neighbors


def _open_text(source) -> tuple[IO[str], str, bool]:
    if isinstance(source, (str, os.PathLike)):
        try:
            return open(source, newline="", encoding="utf-8"), os.fspath(source), True
        except OSError as exc:
            raise InputError(f"{source}: {exc.strerror}") from exc
    return source, getattr(source, "name", "<stream>"), False


def load_schema(source) -> AttributeSchema:
    fh, name, owned = _open_text(source)
    try:
        doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{name}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    finally:
        if owned:
            fh.close()
    return AttributeSchema.from_json(doc)


def save_schema(schema: AttributeSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2)
        fh.write("\n")


def load_network(nodes_source, edges_source, schema: AttributeSchema | None = None) -> RoadNetwork:
    """Read the ``id,lon,lat[,attr...]`` and ``src,dst`` CSV pair.

    Accepts paths or open text streams.  When no schema is given but the
    nodes file carries attribute columns, cardinalities are inferred as
    ``max(value) + 1`` (at least 2).
    """
    roads, attr_names = _read_nodes(nodes_source, schema)
    if schema is None and attr_names:
        cards = []
        for j, _ in enumerate(attr_names):
            vals = [r.attributes[j] for r in roads if r.attributes[j] is not None]
            cards.append(max(2, max(vals, default=0) + 1))
        schema = AttributeSchema(tuple(attr_names), tuple(cards))
    index = {r.id: k for k, r in enumerate(roads)}
    edges = _read_edges(edges_source, index)
    return RoadNetwork(tuple(roads), frozenset(edges), schema)


def _read_nodes(source, schema: AttributeSchema | None):
    fh, name, owned = _open_text(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["id", "lon", "lat"]:
            raise InputError(f"{name}:1: header must start with id,lon,lat")
        attr_names = [h.strip() for h in header[3:]]
        if schema is not None and tuple(attr_names) != schema.names:
            raise InputError(f"{name}:1: attribute columns {attr_names} do not match schema {list(schema.names)}")
        roads: list[RoadRecord] = []
        seen: set[str] = set()
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{name}:{line}: expected {len(header)} fields, got {len(row)}")
            rid = row[0]
            if rid in seen:
                raise InputError(f"{name}:{line}: duplicate node id {rid!r}")
            seen.add(rid)
            try:
                lon, lat = float(row[1]), float(row[2])
            except ValueError as exc:
                raise InputError(f"{name}:{line}: bad coordinate ({exc})") from exc
            if not (math.isfinite(lon) and math.isfinite(lat)):
                raise InputError(f"{name}:{line}: non-finite coordinate")
            attrs: list[int | None] = []
            for j, raw in enumerate(row[3:]):
                raw = raw.strip()
                if raw == "":
                    attrs.append(MISSING)
                    continue
                try:
                    v = int(raw)
                except ValueError as exc:
                    raise InputError(f"{name}:{line}: attribute {attr_names[j]!r} is not an integer") from exc
                hi = schema.cardinalities[j] if schema is not None else None
                if v < 0 or (hi is not None and v >= hi):
                    raise InputError(f"{name}:{line}: attribute {attr_names[j]!r} value {v} "
                                     f"outside declared cardinality {hi}")
                attrs.append(v)
            roads.append(RoadRecord(rid, (lon, lat), tuple(attrs)))
        return roads, attr_names
    finally:
        if owned:
            fh.close()


def _read_edges(source, index: dict[str, int]) -> set[tuple[int, int]]:
    fh, name, owned = _open_text(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["src", "dst"]:
            raise InputError(f"{name}:1: header must be src,dst")
        edges: set[tuple[int, int]] = set()
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise InputError(f"{name}:{line}: expected 2 fields, got {len(row)}")
            src, dst = row
            if src not in index:
                raise InputError(f"{name}:{line}: unknown node id {src!r}")
            if dst not in index:
                raise InputError(f"{name}:{line}: unknown node id {dst!r}")
            if src == dst:
                raise InputError(f"self-loop at line {line} ({name}, node {src!r})")
            e = (index[src], index[dst])
            if e in edges:
                raise InputError(f"{name}:{line}: duplicate edge {src!r} -> {dst!r}")
            edges.add(e)
        return edges
    finally:
        if owned:
            fh.close()


def write_nodes(net: RoadNetwork, out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    names = list(net.schema.names) if net.schema is not None else []
    w.writerow(["id", "lon", "lat", *names])
    for r in net.roads:
        attrs = ["" if a is None else str(a) for a in r.attributes]
        w.writerow([r.id, repr(float(r.position[0])), repr(float(r.position[1])), *attrs])


def write_edges(net: RoadNetwork, out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["src", "dst"])
    for i, j in net.sorted_edges():
        w.writerow([net.roads[i].id, net.roads[j].id])


def save_network(net: RoadNetwork, nodes_path, edges_path) -> None:
    with open(nodes_path, "w", encoding="utf-8", newline="") as fh:
        write_nodes(net, fh)
    with open(edges_path, "w", encoding="utf-8", newline="") as fh:
        write_edges(net, fh)


def network_from_arrays(positions: Sequence[Sequence[float]], edges: Iterable[tuple[int, int]],
                        ids: Sequence[str] | None = None) -> RoadNetwork:
    """Convenience constructor for fixtures: positions as (lon, lat) rows."""
    ids = list(ids) if ids is not None else [str(k) for k in range(len(positions))]
    roads = tuple(RoadRecord(ids[k], (float(p[0]), float(p[1]))) for k, p in enumerate(positions))
    return RoadNetwork(roads, frozenset((int(i), int(j)) for i, j in edges))


def network_to_csv_strings(net: RoadNetwork) -> tuple[str, str]:
    nodes, edges = io.StringIO(), io.StringIO()
    write_nodes(net, nodes)
    write_edges(net, edges)
    return nodes.getvalue(), edges.getvalue()
