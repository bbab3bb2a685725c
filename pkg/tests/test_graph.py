"""Graph store: CSV ingestion, tablet partitioning, adjacency reads."""

import pytest

from scopedflow.errors import GraphLoadError, RoutingFault
from scopedflow.graph import (IN, OUT, GraphSchema, PropertyGraph, load_csv,
                              partition, write_csv)


@pytest.fixture
def schema():
    return GraphSchema.from_dict({
        "vertices": {
            "person": {"name": "str"},
            "company": {"name": "str"},
            "tag": {"name": "str"},
        },
        "edges": {
            "knows": {"src": "person", "dst": "person"},
            "workAt": {"src": "person", "dst": "company"},
        },
    })


@pytest.fixture
def graph_dir(tmp_path, schema):
    vertices = {
        "person": [(i, {"name": f"p{i}"}) for i in range(10)],
        "company": [(1, {"name": "XYZ"}), (2, {"name": "ACME"})],
        "tag": [(1, {"name": "#ABC"})],
    }
    edges = {
        "knows": [(0, 1, {}), (0, 2, {}), (1, 3, {}), (2, 3, {})],
        "workAt": [(1, 1, {}), (3, 2, {})],
    }
    write_csv(tmp_path, schema, vertices, edges)
    return tmp_path


def test_load_counts_match(graph_dir):
    g = load_csv(graph_dir)
    assert g.counts == {"person": 10, "company": 2, "tag": 1}
    assert g.edge_counts == {"knows": 4, "workAt": 2}


def test_neighbors_example(graph_dir):
    # The start person knows exactly the two first-hop neighbours.
    g = load_csv(graph_dir)
    tablets, routing = partition(g, 1, seed=7)
    got = tablets[0].neighbors(("person", 0), OUT, "knows")
    assert [k for k, _ in got] == [("person", 1), ("person", 2)]


def test_neighbors_empty_and_in_direction(graph_dir):
    g = load_csv(graph_dir)
    tablets, _ = partition(g, 1, seed=7)
    assert tablets[0].neighbors(("person", 9), OUT, "knows") == []
    got = tablets[0].neighbors(("person", 3), IN, "knows")
    assert [k for k, _ in got] == [("person", 1), ("person", 2)]


def test_misrouted_vertex_is_routing_fault(graph_dir):
    g = load_csv(graph_dir)
    tablets, routing = partition(g, 4, seed=7)
    key = ("person", 0)
    wrong = (routing.tablet_of(key) + 1) % 4
    with pytest.raises(RoutingFault):
        tablets[wrong].neighbors(key, OUT, "knows")


def test_dangling_edge_reports_location(tmp_path, schema):
    write_csv(tmp_path, schema,
              {"person": [(0, {"name": "a"})], "company": [], "tag": []},
              {"knows": [(0, 99, {})], "workAt": []})
    with pytest.raises(GraphLoadError) as err:
        load_csv(tmp_path)
    assert "knows.csv" in str(err.value)
    assert ":2" in str(err.value)  # line 2 = first data row


def test_duplicate_id_rejected(tmp_path, schema):
    write_csv(tmp_path, schema,
              {"person": [(0, {"name": "a"}), (0, {"name": "b"})],
               "company": [], "tag": []},
              {"knows": [], "workAt": []})
    with pytest.raises(GraphLoadError) as err:
        load_csv(tmp_path)
    assert "duplicate" in str(err.value)


def test_empty_edge_file_is_valid(tmp_path, schema):
    write_csv(tmp_path, schema,
              {"person": [(0, {"name": "a"})], "company": [], "tag": []},
              {"knows": [], "workAt": []})
    g = load_csv(tmp_path)
    assert g.edge_counts.get("knows", 0) == 0


class TestPartition:
    def test_single_tablet_holds_everything(self, graph_dir):
        g = load_csv(graph_dir)
        tablets, _ = partition(g, 1, seed=0)
        assert len(tablets[0]) == len(g.props)

    def test_same_seed_same_assignment(self, graph_dir):
        g = load_csv(graph_dir)
        _, r1 = partition(g, 8, seed=42)
        _, r2 = partition(g, 8, seed=42)
        assert all(r1.tablet_of(k) == r2.tablet_of(k) for k in g.props)

    def test_balance_at_scale(self):
        g = PropertyGraph(GraphSchema())
        for i in range(10_000):
            g.add_vertex("v", i)
        tablets, _ = partition(g, 64, seed=1)
        sizes = [len(t) for t in tablets]
        assert max(sizes) / min(sizes) < 1.5

    def test_ingestion_round_trip(self, graph_dir):
        g = load_csv(graph_dir)
        tablets, routing = partition(g, 4, seed=3)
        # The union of owned adjacency equals the input edge multiset.
        edges = []
        for t in tablets:
            for key in t.owned:
                for nbr, _ in t.neighbors(key, OUT, "knows"):
                    edges.append((key[1], nbr[1]))
        assert sorted(edges) == [(0, 1), (0, 2), (1, 3), (2, 3)]

    def test_ownership_snapshot_moves(self, graph_dir):
        g = load_csv(graph_dir)
        _, routing = partition(g, 4, seed=3, num_executors=2)
        snap = routing.with_moves([(0, routing.owner_of_tablet(0), 1)])
        assert snap.owner_of_tablet(0) == 1
        assert snap.version == routing.version + 1
        # original snapshot untouched
        assert routing.owner_of_tablet(0) in (0, 1)
