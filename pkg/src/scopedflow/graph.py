"""In-memory property graph partitioned into tablets.

A tablet owns an exclusive set of vertices together with all their in/out
edges and property values; each tablet is owned by exactly one executor at a
time.  Graphs are immutable after loading, so tablets can be read without
locks from any executor; only the tablet->executor ownership map changes (via
the balance module's snapshot swap).

Vertices are keyed by (type, id).  CSV files follow the LDBC convention:
one file per vertex type / edge label, header row, ``|``-separated.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import yaml

from .errors import GraphLoadError, RoutingFault

OUT = "out"
IN = "in"

VKey = tuple  # (vertex_type, vertex_id)


@dataclass
class VertexTypeSchema:
    name: str
    properties: dict[str, str] = field(default_factory=dict)  # name -> int|str|bool|date


@dataclass
class EdgeTypeSchema:
    label: str
    src_type: str
    dst_type: str
    properties: dict[str, str] = field(default_factory=dict)


@dataclass
class GraphSchema:
    vertex_types: dict[str, VertexTypeSchema] = field(default_factory=dict)
    edge_types: dict[str, EdgeTypeSchema] = field(default_factory=dict)

    @staticmethod
    def from_dict(data: dict) -> "GraphSchema":
        schema = GraphSchema()
        for name, props in (data.get("vertices") or {}).items():
            schema.vertex_types[name] = VertexTypeSchema(name, dict(props or {}))
        for label, spec in (data.get("edges") or {}).items():
            schema.edge_types[label] = EdgeTypeSchema(
                label, spec["src"], spec["dst"], dict(spec.get("properties") or {}))
        return schema

    def to_dict(self) -> dict:
        return {
            "vertices": {n: dict(t.properties) for n, t in self.vertex_types.items()},
            "edges": {
                l: {"src": t.src_type, "dst": t.dst_type, "properties": dict(t.properties)}
                for l, t in self.edge_types.items()
            },
        }


_CASTERS = {
    "int": int,
    "str": str,
    "bool": lambda s: s.lower() in ("1", "true", "yes"),
    "date": int,  # dates are pre-encoded as integer days
}


class PropertyGraph:
    """Loaded, fully indexed graph: per-type primary id index plus adjacency."""

    def __init__(self, schema: GraphSchema):
        self.schema = schema
        self.props: dict[VKey, dict] = {}
        self.out_adj: dict[VKey, dict[str, list[tuple[VKey, dict]]]] = {}
        self.in_adj: dict[VKey, dict[str, list[tuple[VKey, dict]]]] = {}
        self.counts: dict[str, int] = {}
        self.edge_counts: dict[str, int] = {}

    # -- construction ---------------------------------------------------

    def add_vertex(self, vtype: str, vid, properties: Optional[dict] = None,
                   *, path: str = "<mem>", line: int = 0) -> VKey:
        key = (vtype, vid)
        if key in self.props:
            raise GraphLoadError(f"duplicate vertex id {vid!r} for type {vtype!r}",
                                 path=path, line=line)
        self.props[key] = properties or {}
        self.out_adj[key] = {}
        self.in_adj[key] = {}
        self.counts[vtype] = self.counts.get(vtype, 0) + 1
        return key

    def add_edge(self, label: str, src: VKey, dst: VKey,
                 properties: Optional[dict] = None, *, path: str = "<mem>",
                 line: int = 0) -> None:
        for endpoint in (src, dst):
            if endpoint not in self.props:
                raise GraphLoadError(
                    f"edge {label!r} references missing vertex {endpoint!r}",
                    path=path, line=line)
        self.out_adj[src].setdefault(label, []).append((dst, properties or {}))
        self.in_adj[dst].setdefault(label, []).append((src, properties or {}))
        self.edge_counts[label] = self.edge_counts.get(label, 0) + 1

    # -- reads ----------------------------------------------------------

    def has_vertex(self, key: VKey) -> bool:
        return key in self.props

    def properties(self, key: VKey) -> dict:
        return self.props[key]

    def adjacent(self, key: VKey, direction: str, label: str) -> list[tuple[VKey, dict]]:
        table = self.out_adj if direction == OUT else self.in_adj
        return table.get(key, {}).get(label, [])

    def vertices_of_type(self, vtype: str) -> list[VKey]:
        return [k for k in self.props if k[0] == vtype]

    def all_edges(self) -> Iterable[tuple[str, VKey, VKey]]:
        for src, by_label in self.out_adj.items():
            for label, targets in by_label.items():
                for dst, _ in targets:
                    yield (label, src, dst)


def load_csv(graph_dir, schema: Optional[GraphSchema] = None) -> PropertyGraph:
    """Load a directory of ``|``-separated CSV files into a PropertyGraph.

    Layout: ``schema.yaml`` plus one ``<type>.csv`` per vertex type and one
    ``<label>.csv`` per edge label.  Errors name the offending file and line.
    """
    root = Path(graph_dir)
    if schema is None:
        schema_path = root / "schema.yaml"
        if not schema_path.exists():
            raise GraphLoadError("missing schema.yaml", path=str(root))
        schema = GraphSchema.from_dict(yaml.safe_load(schema_path.read_text()))
    graph = PropertyGraph(schema)
    for vtype, tschema in schema.vertex_types.items():
        _load_vertex_file(graph, root / f"{vtype}.csv", tschema)
    for label, eschema in schema.edge_types.items():
        _load_edge_file(graph, root / f"{label}.csv", eschema)
    return graph


def _open_rows(path: Path):
    if not path.exists():
        raise GraphLoadError("missing data file", path=str(path))
    with path.open(newline="") as handle:
        reader = csv.reader(handle, delimiter="|")
        rows = list(reader)
    if not rows:
        raise GraphLoadError("missing header row", path=str(path))
    return rows[0], rows[1:]


def _load_vertex_file(graph: PropertyGraph, path: Path, tschema: VertexTypeSchema) -> None:
    header, rows = _open_rows(path)
    if header[0] != "id":
        raise GraphLoadError(f"first column must be 'id', got {header[0]!r}",
                             path=str(path), line=1)
    prop_cols = header[1:]
    for idx, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise GraphLoadError(f"expected {len(header)} columns, got {len(row)}",
                                 path=str(path), line=idx)
        props = {}
        for col, raw in zip(prop_cols, row[1:]):
            caster = _CASTERS.get(tschema.properties.get(col, "str"), str)
            props[col] = caster(raw)
        graph.add_vertex(tschema.name, int(row[0]), props, path=str(path), line=idx)


def _load_edge_file(graph: PropertyGraph, path: Path, eschema: EdgeTypeSchema) -> None:
    header, rows = _open_rows(path)
    if header[:2] != ["src", "dst"]:
        raise GraphLoadError("edge header must start with 'src|dst'",
                             path=str(path), line=1)
    prop_cols = header[2:]
    for idx, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise GraphLoadError(f"expected {len(header)} columns, got {len(row)}",
                                 path=str(path), line=idx)
        props = {}
        for col, raw in zip(prop_cols, row[2:]):
            caster = _CASTERS.get(eschema.properties.get(col, "str"), str)
            props[col] = caster(raw)
        graph.add_edge(eschema.label,
                       (eschema.src_type, int(row[0])),
                       (eschema.dst_type, int(row[1])),
                       props, path=str(path), line=idx)


# ----------------------------------------------------------------------
# tablets and routing


class Tablet:
    """Exclusive partition of vertices with their full adjacency and properties."""

    def __init__(self, tablet_id: int, graph: PropertyGraph):
        self.tablet_id = tablet_id
        self._graph = graph
        self.owned: dict[VKey, None] = {}

    def assign(self, key: VKey) -> None:
        self.owned[key] = None

    def owns(self, key: VKey) -> bool:
        return key in self.owned

    def __len__(self) -> int:
        return len(self.owned)

    def neighbors(self, vertex: VKey, direction: str, label: str) -> list[tuple[VKey, dict]]:
        if vertex not in self.owned:
            raise RoutingFault(
                f"vertex {vertex!r} is not owned by tablet {self.tablet_id}")
        return self._graph.adjacent(vertex, direction, label)

    def properties(self, vertex: VKey) -> dict:
        if vertex not in self.owned:
            raise RoutingFault(
                f"vertex {vertex!r} is not owned by tablet {self.tablet_id}")
        return self._graph.properties(vertex)


def vertex_hash(key: VKey, seed: int) -> int:
    # crc32 keeps assignment stable across processes (builtin hash() is salted).
    return zlib.crc32(f"{seed}:{key[0]}:{key[1]}".encode())


class RoutingTable:
    """Vertex->tablet hashing parameters plus an atomically swappable
    tablet->executor ownership snapshot."""

    def __init__(self, num_tablets: int, seed: int, owner_of: dict[int, int],
                 version: int = 0):
        self.num_tablets = num_tablets
        self.seed = seed
        self._owner_of = dict(owner_of)
        self.version = version

    def tablet_of(self, key: VKey) -> int:
        return vertex_hash(key, self.seed) % self.num_tablets

    def owner_of_tablet(self, tablet_id: int) -> int:
        return self._owner_of[tablet_id]

    def executor_of(self, key: VKey) -> int:
        return self._owner_of[self.tablet_of(key)]

    def owners(self) -> dict[int, int]:
        return dict(self._owner_of)

    def tablets_of_executor(self, exec_id: int) -> list[int]:
        return [t for t, e in self._owner_of.items() if e == exec_id]

    def with_moves(self, moves: Iterable[tuple[int, int, int]]) -> "RoutingTable":
        """New snapshot with (tablet, from_exec, to_exec) moves applied."""
        owner = dict(self._owner_of)
        for tablet_id, src, dst in moves:
            if owner.get(tablet_id) == src:
                owner[tablet_id] = dst
        return RoutingTable(self.num_tablets, self.seed, owner, self.version + 1)


def partition(graph: PropertyGraph, num_tablets: int, seed: int,
              owner_of: Optional[dict[int, int]] = None,
              num_executors: int = 1) -> tuple[list[Tablet], RoutingTable]:
    """Assign every vertex to a tablet by seeded hash; deterministic per seed.

    Default ownership spreads tablets round-robin over executors unless an
    explicit tablet->executor map is given.
    """
    if num_tablets < 1:
        raise ValueError("num_tablets must be >= 1")
    if owner_of is None:
        owner_of = {t: t % num_executors for t in range(num_tablets)}
    tablets = [Tablet(t, graph) for t in range(num_tablets)]
    routing = RoutingTable(num_tablets, seed, owner_of)
    for key in graph.props:
        tablets[routing.tablet_of(key)].assign(key)
    return tablets, routing


def write_csv(graph_dir, schema: GraphSchema,
              vertices: dict[str, list[tuple[int, dict]]],
              edges: dict[str, list[tuple[int, int, dict]]]) -> None:
    """Write a graph as schema.yaml plus CSV files (the generator's output path)."""
    root = Path(graph_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "schema.yaml").write_text(yaml.safe_dump(schema.to_dict(), sort_keys=True))
    for vtype, tschema in schema.vertex_types.items():
        cols = list(tschema.properties)
        lines = ["|".join(["id"] + cols)]
        for vid, props in vertices.get(vtype, []):
            lines.append("|".join([str(vid)] + [str(props.get(c, "")) for c in cols]))
        (root / f"{vtype}.csv").write_text("\n".join(lines) + "\n")
    for label, eschema in schema.edge_types.items():
        cols = list(eschema.properties)
        lines = ["|".join(["src", "dst"] + cols)]
        for src, dst, props in edges.get(label, []):
            lines.append("|".join([str(src), str(dst)] + [str(props.get(c, "")) for c in cols]))
        (root / f"{label}.csv").write_text("\n".join(lines) + "\n")
