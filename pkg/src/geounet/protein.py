"""CA-trace ingestion from fixed-column ATOM records and structural coarsening."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import GeometricGraph, knn_edges
from .pooling import ClusterAssignment, DEFAULT_K, DEFAULT_RATIO, connect, select_assign

__all__ = [
    "ResidueRecord",
    "AMINO_ACIDS",
    "parse_ca_structure",
    "build_residue_graph",
    "coarsen_hierarchy",
    "hierarchy_to_json",
    "format_ca_records",
]

AMINO_ACIDS = (
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
)
_AA_INDEX = {a: i for i, a in enumerate(AMINO_ACIDS)}


@dataclass(frozen=True)
class ResidueRecord:
    chain: str
    index: int
    name: str
    ca: tuple[float, float, float]


def parse_ca_structure(text: str) -> list[ResidueRecord]:
    """Alpha-carbon records from ATOM lines; the first altloc seen for a residue wins."""
    seen: dict[tuple[str, int], ResidueRecord] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line[:6].strip() != "ATOM" or line[12:16].strip() != "CA":
            continue
        chain = line[21:22] if len(line) > 21 else " "
        try:
            resseq = int(line[22:26])
        except ValueError:
            raise ValueError(f"line {lineno}: bad residue number {line[22:26]!r}") from None
        try:
            xyz = tuple(float(line[a:b]) for a, b in ((30, 38), (38, 46), (46, 54)))
        except ValueError:
            raise ValueError(f"line {lineno}: malformed coordinate field {line[30:54]!r}") from None
        if not all(np.isfinite(xyz)):
            raise ValueError(f"line {lineno}: non-finite coordinate")
        key = (chain, resseq)
        if key not in seen:
            seen[key] = ResidueRecord(chain, resseq, line[17:20].strip(), xyz)
    if not seen:
        raise ValueError("no CA atoms found")
    return list(seen.values())


def format_ca_records(records: list[ResidueRecord]) -> str:
    """Write records back as fixed-column ATOM lines (full float precision is not kept)."""
    lines = []
    for serial, r in enumerate(records, start=1):
        x, y, z = r.ca
        lines.append(
            f"ATOM  {serial:5d}  CA  {r.name:>3s} {r.chain:1s}{r.index:4d}    {x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00           C"
        )
    return "\n".join(lines) + "\n"


def build_residue_graph(records: list[ResidueRecord], k: int = DEFAULT_K, one_hot: bool = True) -> GeometricGraph:
    if not records:
        raise ValueError("need at least one residue")
    recs = sorted(records, key=lambda r: (r.chain, r.index))
    coords = np.array([r.ca for r in recs], dtype=np.float64)
    n = len(recs)
    scalars = np.zeros((n, 20))
    if one_hot:
        for i, r in enumerate(recs):
            j = _AA_INDEX.get(r.name.upper())
            if j is not None:
                scalars[i, j] = 1.0
    else:
        scalars = np.ones((n, 1))
    return GeometricGraph(coords=coords, edges=knn_edges(coords, k), scalars=scalars, vectors=np.zeros((n, 1, 3)))


def coarsen_hierarchy(
    g: GeometricGraph,
    levels: int,
    pool_kind: str = "sparse",
    ratio: float = DEFAULT_RATIO,
    k: int = DEFAULT_K,
) -> list[dict]:
    """Repeated select/reduce/connect with plain membership sums and no learned parts.

    Returns one entry per level: ``{"graph", "assignment"}``; if a level
    would start from fewer than 2 nodes the list ends with a
    ``{"warning": ...}`` entry instead.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    out: list[dict] = []
    for lvl in range(levels):
        if g.num_nodes < 2:
            out.append({"warning": f"stopped before level {lvl}: graph has {g.num_nodes} node(s)"})
            break
        a: ClusterAssignment = select_assign(g, pool_kind, ratio)
        pc = g.coords[a.centers]
        vec = np.einsum("kn,ncd->kcd", a.matrix, g.vectors)
        g = GeometricGraph(coords=pc, edges=connect(pc, k), scalars=a.matrix @ g.scalars, vectors=vec)
        out.append({"graph": g, "assignment": a})
    return out


def hierarchy_to_json(levels: list[dict]) -> str:
    blob = []
    for entry in levels:
        if "warning" in entry:
            blob.append({"warning": entry["warning"]})
            continue
        a = entry["assignment"]
        blob.append(
            {"graph": entry["graph"].to_dict(), "centers": [int(c) for c in a.centers], "C": a.to_triplets()}
        )
    return json.dumps({"levels": blob})
