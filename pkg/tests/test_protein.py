import numpy as np
import pytest

from geounet.geometry import GeometricGraph, apply_motion, random_motion
from geounet.protein import (
    AMINO_ACIDS,
    ResidueRecord,
    build_residue_graph,
    coarsen_hierarchy,
    format_ca_records,
    hierarchy_to_json,
    parse_ca_structure,
)

FIXTURE = """\
HEADER    TEST
ATOM      1  N   ALA A   1      11.104   6.134  -6.504  1.00  0.00           N
ATOM      2  CA  ALA A   1      11.639   6.071  -5.147  1.00  0.00           C
ATOM      3  CA  GLY A   2      12.500   7.000  -4.000  1.00  0.00           C
HETATM    4  CA  HOH A   3       0.000   0.000   0.000  1.00  0.00           C
ATOM      5  CA  LYS B   1      -1.250   2.500  10.125  1.00  0.00           C
END
"""


def test_parse_keeps_ca_atoms_only():
    recs = parse_ca_structure(FIXTURE)
    assert [(r.chain, r.index, r.name) for r in recs] == [("A", 1, "ALA"), ("A", 2, "GLY"), ("B", 1, "LYS")]
    assert recs[0].ca == (11.639, 6.071, -5.147)
    assert recs[2].ca == (-1.25, 2.5, 10.125)


def test_first_altloc_wins():
    text = (
        "ATOM      1  CA AALA A   1       1.000   2.000   3.000  0.50  0.00           C\n"
        "ATOM      2  CA BALA A   1       9.000   9.000   9.000  0.50  0.00           C\n"
    )
    recs = parse_ca_structure(text)
    assert len(recs) == 1 and recs[0].ca == (1.0, 2.0, 3.0)


def test_hetatm_only_file_is_rejected():
    with pytest.raises(ValueError, match="no CA"):
        parse_ca_structure("HETATM    1  CA  HOH A   1       0.000   0.000   0.000\n")


def test_malformed_coordinate_reports_line():
    bad = FIXTURE.replace("  12.500", "  12.5x0")
    with pytest.raises(ValueError, match="line 4"):
        parse_ca_structure(bad)


def test_residue_graph_features():
    recs = parse_ca_structure(FIXTURE) + [ResidueRecord("C", 1, "XYZ", (5.0, 5.0, 5.0))]
    g = build_residue_graph(recs)
    assert g.scalars.shape == (4, 20)
    assert g.scalars[0, AMINO_ACIDS.index("ALA")] == 1
    assert np.all(g.scalars[3] == 0)
    assert g.num_edges == 6  # k=16 >= N-1: complete graph
    assert g.vectors.shape == (4, 1, 3) and np.all(g.vectors == 0)


def test_residue_graph_orders_by_chain_then_index():
    recs = [ResidueRecord("B", 1, "ALA", (0.0, 0, 0)), ResidueRecord("A", 7, "GLY", (1.0, 0, 0)),
            ResidueRecord("A", 2, "GLY", (2.0, 0, 0))]
    g = build_residue_graph(recs)
    assert g.coords[:, 0].tolist() == [2.0, 1.0, 0.0]
    with pytest.raises(ValueError):
        build_residue_graph([])


def test_json_round_trip_is_exact():
    g = build_residue_graph(parse_ca_structure(FIXTURE))
    h = GeometricGraph.from_json(g.to_json())
    assert np.array_equal(g.coords, h.coords) and np.array_equal(g.scalars, h.scalars)


def test_atom_lines_round_trip():
    recs = parse_ca_structure(FIXTURE)
    assert parse_ca_structure(format_ca_records(recs)) == recs


def chain_graph(n=100, seed=0):
    rng = np.random.default_rng(seed)
    x = np.cumsum(rng.normal(size=(n, 3)) * 2.0, axis=0)
    names = rng.choice(AMINO_ACIDS, size=n)
    return build_residue_graph([ResidueRecord("A", i, str(names[i]), tuple(x[i])) for i in range(n)])


def test_coarsen_sizes_subset_and_mass():
    g = chain_graph()
    levels = coarsen_hierarchy(g, 3, "sparse")
    assert [lvl["graph"].num_nodes for lvl in levels] == [60, 36, 22]
    prev = g
    for lvl in levels:
        coords = {tuple(c) for c in prev.coords}
        assert all(tuple(c) in coords for c in lvl["graph"].coords)
        assert np.allclose(lvl["graph"].scalars.sum(axis=0), g.scalars.sum(axis=0))
        prev = lvl["graph"]


def test_coarsen_stops_early_with_warning():
    g = chain_graph(3)
    levels = coarsen_hierarchy(g, 5, ratio=0.4)  # 3 -> 2 -> 1 node
    assert "warning" in levels[-1]
    assert all("graph" in lvl for lvl in levels[:-1])
    with pytest.raises(ValueError):
        coarsen_hierarchy(g, 0)


def test_coarsen_commutes_with_rigid_motion():
    g = chain_graph(50, seed=4)
    m = random_motion(np.random.default_rng(4))
    a = coarsen_hierarchy(g, 3)
    b = coarsen_hierarchy(apply_motion(g, m), 3)
    for la, lb in zip(a, b):
        assert np.array_equal(la["assignment"].centers, lb["assignment"].centers)
        assert np.allclose(la["graph"].coords @ m.rotation.T + m.translation, lb["graph"].coords, atol=1e-9)
        assert np.array_equal(la["graph"].edges, lb["graph"].edges)


def test_hierarchy_json_shape():
    import json

    blob = json.loads(hierarchy_to_json(coarsen_hierarchy(chain_graph(20), 2)))
    assert len(blob["levels"]) == 2
    assert {"graph", "centers", "C"} <= set(blob["levels"][0])
