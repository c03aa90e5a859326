import json
import logging

import numpy as np
import pytest
from scipy import stats

from smoothkit.graph import (
    ConfigError,
    EdgeIndexing,
    FormatError,
    Graph,
    GraphBatch,
    disjoint_union,
    drop_edge,
    edge_adjacency,
    load_citation,
    load_tu,
    masked_adjacency,
    sbm_generate,
    structurally_equal,
    write_tu,
)
from smoothkit.oracle import edge_adj_oracle, masked_pairs_oracle, random_graph

CONTENT = """\
p1\t1\t0\t1\tA
p2\t0\t1\t0\tB
p3\t1\t1\t0\tA
p4\t0\t0\t0\tB
p5\t0\t0\t1\tA
"""
CITES = "p1\tp2\np3\tp1\n"


def write_citation(tmp_path, content=CONTENT, cites=CITES):
    c, k = tmp_path / "toy.content", tmp_path / "toy.cites"
    c.write_text(content)
    k.write_text(cites)
    return c, k


def test_citation_toy_fixture(tmp_path):
    g = load_citation(*write_citation(tmp_path), per_class=1, n_val=1, n_test=1)
    assert (g.n_nodes, g.n_edges, g.n_features) == (5, 2, 3)
    assert g.n_classes == 2
    row_sums = g.features.sum(axis=1)
    assert np.allclose(row_sums[[0, 1, 2, 4]], 1.0) and row_sums[3] == 0.0
    assert g.labels.tolist() == [0, 1, 0, 1, 0]
    assert np.flatnonzero(g.masks["train"]).tolist() == [0, 1]
    assert np.flatnonzero(g.masks["val"]).tolist() == [2]
    assert np.flatnonzero(g.masks["test"]).tolist() == [3]


def test_citation_self_loop_dropped(tmp_path):
    g = load_citation(*write_citation(tmp_path, cites=CITES + "p4\tp4\n"), per_class=1, n_val=1, n_test=1)
    assert g.n_edges == 2


def test_citation_dangling_counted(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        g = load_citation(*write_citation(tmp_path, cites=CITES + "p1\tghost\nnope\tp2\n"), 1, 1, 1)
    assert g.n_edges == 2
    assert "skipped 2 citations" in caplog.text


def test_citation_malformed_line_number(tmp_path):
    bad = CONTENT.replace("p3\t1\t1\t0\tA", "p3\t1\tA")
    with pytest.raises(FormatError) as info:
        load_citation(*write_citation(tmp_path, content=bad))
    assert info.value.line == 3


def test_cora_statistics(cora):
    assert (cora.n_nodes, cora.n_features, cora.n_classes) == (2708, 1433, 7)
    assert cora.n_edges == 5278
    assert [int(cora.masks[k].sum()) for k in ("train", "val", "test")] == [140, 500, 1000]
    assert np.all(np.bincount(cora.labels[cora.masks["train"]]) == 20)


def tu_toy(tmp_path, with_attrs=False):
    # triangle (graph 1) + single edge (graph 2), both directions listed
    (tmp_path / "T_A.txt").write_text("1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n")
    (tmp_path / "T_graph_indicator.txt").write_text("1\n1\n1\n2\n2\n")
    (tmp_path / "T_graph_labels.txt").write_text("-1\n1\n")
    (tmp_path / "T_node_labels.txt").write_text("1\n2\n1\n2\n2\n")
    (tmp_path / "T_node_attributes.txt").write_text("" if not with_attrs else "0.5\n1\n2\n3\n4\n")
    return tmp_path


def test_tu_toy_fixture(tmp_path):
    b = load_tu(tu_toy(tmp_path), "T")
    assert [g.n_nodes for g in b.graphs] == [3, 2]
    assert [g.n_edges for g in b.graphs] == [3, 1]
    assert b.labels.tolist() == [0, 1]
    # empty attributes file: node labels {1, 2} become 2-dim one-hots
    assert b.graphs[0].features.tolist() == [[1, 0], [0, 1], [1, 0]]


def test_tu_attributes_preferred(tmp_path):
    b = load_tu(tu_toy(tmp_path, with_attrs=True), "T")
    assert b.graphs[1].features.ravel().tolist() == [3.0, 4.0]


def test_tu_errors(tmp_path):
    root = tu_toy(tmp_path)
    (root / "T_A.txt").write_text("1, 2\n3, 4\n")
    with pytest.raises(FormatError, match="crosses"):
        load_tu(root, "T")
    (root / "T_graph_labels.txt").unlink()
    with pytest.raises(FileNotFoundError):
        load_tu(root, "T")


def test_tu_round_trip(tmp_path):
    batch = GraphBatch([sbm_generate(2, 4, 0.9, 0.1, 3, seed=s) for s in range(3)], np.array([0, 1, 1]))
    write_tu(batch, tmp_path, "R")
    back = load_tu(tmp_path, "R")
    assert back.labels.tolist() == [0, 1, 1]
    for a, b in zip(batch.graphs, back.graphs):
        assert np.array_equal(a.edges, b.edges)
        assert np.array_equal(a.features, b.features)


def test_masked_adjacency_trivial():
    same = Graph.from_edges(3, [(0, 1), (1, 2)], labels=[0, 0, 0], masks={"train": [1, 1, 1]})
    assert masked_adjacency(same).nnz == 0
    diff = Graph.from_edges(2, [(0, 1)], labels=[0, 1], masks={"train": [1, 1]})
    assert masked_adjacency(diff).nnz == 2


def test_masked_adjacency_matches_pair_loop():
    labels = [0, 0, 1, 1]
    train = [True, True, True, False]
    edges = [(0, 1), (1, 2), (2, 3), (0, 3)]
    g = Graph.from_edges(4, edges, labels=labels, masks={"train": train})
    kept = masked_pairs_oracle(4, edges, labels, train)
    dense = masked_adjacency(g).dense()
    expected = np.zeros((4, 4))
    for i, j in kept:
        expected[i, j] = expected[j, i] = 1
    assert np.array_equal(dense, expected)
    assert kept == [(1, 2), (2, 3), (0, 3)]


def test_masked_adjacency_requires_labels():
    with pytest.raises(ConfigError):
        masked_adjacency(Graph.from_edges(2, [(0, 1)]))


def test_edge_adjacency_small_cases():
    disjoint = EdgeIndexing.from_graph(Graph.from_edges(4, [(0, 1), (2, 3)]))
    assert edge_adjacency(disjoint).nnz == 0
    path = EdgeIndexing.from_graph(Graph.from_edges(3, [(0, 1), (1, 2)]))
    assert edge_adjacency(path).dense().tolist() == [[0, 1], [1, 0]]
    tri = EdgeIndexing.from_graph(Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)]))
    assert np.array_equal(edge_adjacency(tri).dense() > 0, edge_adj_oracle([(0, 1), (0, 2), (1, 2)]))
    assert np.array_equal(edge_adj_oracle([(0, 1), (0, 2), (1, 2)]), ~np.eye(3, dtype=bool))


def test_edge_indexing_lookup():
    e = EdgeIndexing.from_graph(Graph.from_edges(4, [(3, 1), (0, 2), (1, 0)]))
    assert [e.lookup(i) for i in range(e.n_edges)] == [(0, 1), (0, 2), (1, 3)]


def test_edge_adjacency_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(30):
        n = int(rng.integers(2, 25))
        e = EdgeIndexing.from_graph(Graph.from_edges(n, random_graph(rng, n, 0.3)))
        ref = edge_adj_oracle([e.lookup(i) for i in range(e.n_edges)])
        assert np.array_equal(edge_adjacency(e).dense() > 0, ref)


def test_drop_edge_counts_and_determinism():
    g = Graph.from_edges(6, [(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (1, 2), (2, 3), (3, 4), (4, 5), (1, 5)])
    assert drop_edge(g, 0.0, 1) is g
    h = drop_edge(g, 0.5, 3)
    assert h.n_edges == 5 and h.adjacency.is_symmetric()
    assert np.array_equal(h.edges, drop_edge(g, 0.5, 3).edges)
    assert g.n_edges == 10
    assert set(map(tuple, h.edges)) <= set(map(tuple, g.edges))
    with pytest.raises(ValueError):
        drop_edge(g, 1.0, 0)


def test_sbm_two_triangles():
    g = sbm_generate(2, 3, 1.0, 0.0, 2, seed=0)
    assert g.edges.tolist() == [[0, 1], [0, 2], [1, 2], [3, 4], [3, 5], [4, 5]]


def test_sbm_determinism_and_masks():
    a, b = sbm_generate(3, 30, 0.3, 0.02, 4, seed=9), sbm_generate(3, 30, 0.3, 0.02, 4, seed=9)
    assert structurally_equal(a, b)
    assert np.all(np.bincount(a.labels[a.masks["train"]]) == 20)
    assert sum(int(m.sum()) for m in a.masks.values()) == 90


def test_sbm_uniform_density_chi_square():
    # p_in == p_out: within-block and cross-block edge counts follow pair counts
    within = cross = 0
    for seed in range(100):
        g = sbm_generate(2, 10, 0.3, 0.3, 2, seed=seed)
        same = g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]]
        within += int(same.sum())
        cross += int((~same).sum())
    pairs_within, pairs_cross = 2 * 45, 100
    total = within + cross
    expected = [total * pairs_within / 190, total * pairs_cross / 190]
    assert stats.chisquare([within, cross], expected).pvalue > 0.01


def test_sbm_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        sbm_generate(2, 3, 0.1, 0.5, 2, seed=0)


def test_graph_invariants():
    g = Graph.from_edges(5, [(0, 1), (1, 0), (1, 2), (3, 3)])
    assert g.n_edges == 2
    assert g.adjacency.is_symmetric()
    assert g.degrees.tolist() == [1, 2, 1, 0, 0]
    assert g.degrees.sum() == 2 * g.n_edges
    with pytest.raises(ValueError):
        Graph.from_edges(2, [(0, 1)], masks={"train": [1, 0], "test": [1, 1]})
    with pytest.raises(ValueError):
        g.features[0, 0] = 3.0


def test_json_round_trip(tmp_path):
    g = sbm_generate(2, 5, 0.5, 0.1, 3, seed=2)
    g.save(tmp_path / "g.json")
    back = Graph.load(tmp_path / "g.json")
    assert structurally_equal(g, back)
    obj = json.loads((tmp_path / "g.json").read_text())
    assert set(obj) == {"n", "edges", "features", "labels", "masks"}
    assert all(i < j for i, j in obj["edges"])


def test_batch_folds_partition():
    batch = GraphBatch([Graph.from_edges(2, [(0, 1)])] * 23, np.zeros(23)).assign_folds(10, seed=4)
    assert set(batch.folds.tolist()) == set(range(10))
    counts = np.bincount(batch.folds)
    assert counts.max() - counts.min() <= 1
    assert np.array_equal(batch.folds, batch.assign_folds(10, seed=4).folds)
    assert np.array_equal(GraphBatch.from_json(batch.to_json()).folds, batch.folds)


def test_disjoint_union_blocks():
    u = disjoint_union([Graph.from_edges(3, [(0, 1), (1, 2)]), Graph.from_edges(2, [(0, 1)])])
    assert u.offsets.tolist() == [0, 3, 5]
    assert u.graph.edges.tolist() == [[0, 1], [1, 2], [3, 4]]
