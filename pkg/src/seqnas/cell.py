"""Cell DAG (2 inputs, 4 intermediate nodes), genotypes, and derivation.

Node indexing convention used everywhere, including genotype JSON:
0 = cell input s0, 1 = cell input s1, 2..5 = intermediate nodes n0..n3.
The cell output concatenates the four intermediate nodes on the channel
axis.  Edge k of the flat 14-row architecture matrix is EDGES[k].
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .module import Module
from .ops import OP_VOCAB, MixedOp, ReLUConvNorm, FactorizedReduce, make_op

NUM_INTERMEDIATE = 4

# (from_node, to_node) for every i < j pair, grouped by destination node.
EDGES = tuple(
    (i, j + 2) for j in range(NUM_INTERMEDIATE) for i in range(j + 2)
)
NUM_EDGES = len(EDGES)  # 14


@dataclass(frozen=True)
class CellSpec:
    kind: str  # "normal" | "reduction"
    num_intermediate: int = NUM_INTERMEDIATE
    edges: tuple = EDGES

    def __post_init__(self):
        if self.kind not in ("normal", "reduction"):
            raise ValueError(f"cell kind must be normal|reduction, got {self.kind!r}")

    @property
    def reduction(self):
        return self.kind == "reduction"


class GenotypeError(ValueError):
    """Raised for malformed or inconsistent genotypes."""


@dataclass
class CellGenotype:
    kind: str
    nodes: list  # 4 entries, each [(op_name, from_node), (op_name, from_node)]
    gates: tuple = (1.0, 1.0)
    pruned: tuple = (False, False)


@dataclass
class Genotype:
    """Discrete architecture: retained ops/edges plus input-pruning decisions."""

    cells: list
    vocab: tuple = OP_VOCAB
    meta: dict = field(default_factory=dict)

    def validate(self):
        if len(self.vocab) != len(OP_VOCAB):
            raise GenotypeError(f"vocabulary must have {len(OP_VOCAB)} ops")
        for ci, cell in enumerate(self.cells):
            if cell.kind not in ("normal", "reduction"):
                raise GenotypeError(f"cell {ci}: bad kind {cell.kind!r}")
            if len(cell.nodes) != NUM_INTERMEDIATE:
                raise GenotypeError(f"cell {ci}: expected {NUM_INTERMEDIATE} nodes")
            for j, entries in enumerate(cell.nodes):
                if len(entries) != 2:
                    raise GenotypeError(f"cell {ci} node {j}: needs exactly 2 edges")
                for op, frm in entries:
                    if op == "none":
                        raise GenotypeError(f"cell {ci} node {j}: retained 'none' op")
                    if op not in self.vocab:
                        raise GenotypeError(f"cell {ci} node {j}: unknown op {op!r}")
                    if not 0 <= frm < j + 2:
                        raise GenotypeError(
                            f"cell {ci} node {j}: from={frm} not an earlier node"
                        )
            if sum(bool(p) for p in cell.pruned) > 1:
                raise GenotypeError(f"cell {ci}: both inputs pruned")
        return self

    def to_json_dict(self):
        return {
            "cells": [
                {
                    "kind": c.kind,
                    "nodes": [
                        [{"op": op, "from": frm} for op, frm in entries]
                        for entries in c.nodes
                    ],
                    "gates": {
                        "s0": c.gates[0],
                        "s1": c.gates[1],
                        "pruned": [bool(c.pruned[0]), bool(c.pruned[1])],
                    },
                }
                for c in self.cells
            ],
            "vocab": list(self.vocab),
            "meta": self.meta,
        }

    def to_json(self):
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json_dict(cls, d):
        try:
            cells = [
                CellGenotype(
                    kind=c["kind"],
                    nodes=[
                        [(e["op"], int(e["from"])) for e in entries]
                        for entries in c["nodes"]
                    ],
                    gates=(float(c["gates"]["s0"]), float(c["gates"]["s1"])),
                    pruned=tuple(bool(p) for p in c["gates"]["pruned"]),
                )
                for c in d["cells"]
            ]
            g = cls(cells=cells, vocab=tuple(d["vocab"]), meta=dict(d.get("meta", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise GenotypeError(f"malformed genotype document: {exc}") from exc
        return g.validate()

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise GenotypeError(f"genotype is not valid JSON: {exc}") from exc
        return cls.from_json_dict(d)


def derive_genotype(alphas, gates, threshold, kinds, gate_scale=2.0, meta=None):
    """Extract the discrete architecture from learned weights.

    Per intermediate node, the two incoming edges with the highest
    max-over-non-"none" softmax score are kept, each labeled with its argmax
    non-"none" op.  Ties break toward the lower from-node, then the lower op
    index.  Per cell, input k is pruned iff its gate coefficient falls below
    the threshold; soft gates apply only during search, the cut happens here.
    """
    if not 0 <= threshold < 1:
        raise ValueError(f"gate threshold must be in [0, 1), got {threshold}")
    if gates is None:
        gates = [None] * len(alphas)
    if not len(alphas) == len(gates) == len(kinds):
        raise ValueError("need one alpha, one gate, one kind per cell")
    none_idx = OP_VOCAB.index("none")
    op_indices = [i for i in range(len(OP_VOCAB)) if i != none_idx]

    cells = []
    for ci, (alpha, beta, kind) in enumerate(zip(alphas, gates, kinds)):
        a = np.asarray(alpha.data if hasattr(alpha, "data") else alpha, dtype=np.float64)
        if a.shape != (NUM_EDGES, len(OP_VOCAB)):
            raise ValueError(
                f"cell {ci}: alpha shape {a.shape}, expected ({NUM_EDGES}, {len(OP_VOCAB)})"
            )
        z = a - a.max(axis=1, keepdims=True)
        e = np.exp(z)
        w = e / e.sum(axis=1, keepdims=True)

        nodes = []
        for j in range(NUM_INTERMEDIATE):
            incoming = [k for k, (i, dst) in enumerate(EDGES) if dst == j + 2]
            scored = []
            for k in incoming:
                frm = EDGES[k][0]
                best_op = max(op_indices, key=lambda o: (w[k, o], -o))
                scored.append((-w[k, best_op], frm, OP_VOCAB[best_op]))
            scored.sort()
            kept = sorted(scored[:2], key=lambda s: s[1])
            nodes.append([(op, frm) for _, frm, op in kept])

        if beta is None:
            coeff = (1.0, 1.0)
            pruned = (False, False)
        else:
            b = np.asarray(beta.data if hasattr(beta, "data") else beta, dtype=np.float64)
            zb = b - b.max()
            eb = np.exp(zb)
            sm = eb / eb.sum()
            coeff = (float(gate_scale * sm[0]), float(gate_scale * sm[1]))
            # strict "< threshold" with a guard wide enough for float32
            # parameter storage, so exact-boundary coefficients
            # (e.g. beta = (ln 9, 0) -> 0.2) never prune
            pruned = (coeff[0] < threshold - 1e-6, coeff[1] < threshold - 1e-6)
            if pruned[0] and pruned[1]:
                raise ValueError(
                    f"cell {ci}: both gate coefficients below threshold {threshold}"
                )
        cells.append(CellGenotype(kind=kind, nodes=nodes, gates=coeff, pruned=pruned))

    return Genotype(cells=cells, vocab=OP_VOCAB, meta=dict(meta or {})).validate()


def genotype_to_dot(genotype):
    """Render one directed-graph block per cell; pruned inputs are omitted."""
    names = {0: "s0", 1: "s1", 2: "n0", 3: "n1", 4: "n2", 5: "n3"}
    blocks = []
    for ci, cell in enumerate(genotype.cells):
        lines = [f"digraph cell_{ci} {{"]
        lines.append(f'  label="cell {ci} ({cell.kind})";')
        lines.append("  rankdir=LR;")
        lines.append("  node [shape=box];")
        for k in (0, 1):
            if not cell.pruned[k]:
                lines.append(f'  "s{k}";')
        for j in range(NUM_INTERMEDIATE):
            lines.append(f'  "n{j}";')
        lines.append('  "out";')
        for j, entries in enumerate(cell.nodes):
            for op, frm in entries:
                if frm in (0, 1) and cell.pruned[frm]:
                    continue
                lines.append(f'  "{names[frm]}" -> "n{j}" [label="{op}"];')
        for j in range(NUM_INTERMEDIATE):
            lines.append(f'  "n{j}" -> "out";')
        lines.append("}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


class SearchCell(Module):
    """One relaxed cell: a MixedOp on each of the 14 edges.

    Reduction cells apply stride 2 only on edges that originate at the two
    cell inputs.  Inputs are projected to the cell's working width first; if
    the cell two steps back was a reduction, s0 additionally gets halved in
    time by a factorized reduction.
    """

    def __init__(self, c_pp, c_p, channels, reduction, reduction_prev, rng, dtype, tag=""):
        super().__init__()
        self.spec = CellSpec("reduction" if reduction else "normal")
        self.channels = channels
        if reduction_prev:
            self.pre0 = self.add_child(
                FactorizedReduce(c_pp, channels, rng, dtype, False, f"{tag}.pre0"))
        else:
            self.pre0 = self.add_child(
                ReLUConvNorm(c_pp, channels, 1, 1, rng, dtype, False, f"{tag}.pre0"))
        self.pre1 = self.add_child(
            ReLUConvNorm(c_p, channels, 1, 1, rng, dtype, False, f"{tag}.pre1"))
        self.mixed = []
        for k, (frm, _to) in enumerate(EDGES):
            stride = 2 if reduction and frm in (0, 1) else 1
            self.mixed.append(self.add_child(
                MixedOp(channels, stride, rng, dtype, tag=f"{tag}.edge{k}")))

    def forward(self, s0, s1, alpha, mode="search", genotype_cell=None):
        expect = (self.pre0.w1.shape[1] if isinstance(self.pre0, FactorizedReduce)
                  else self.pre0.w.shape[1])
        if s0.shape[1] != expect:
            raise F.ShapeError(
                f"cell: s0 has {s0.shape[1]} channels, preprocessing expects {expect}"
            )
        s0 = self.pre0.forward(s0)
        s1 = self.pre1.forward(s1)
        if s0.shape != s1.shape:
            raise F.ShapeError(
                f"cell: preprocessed inputs disagree, {s0.shape} vs {s1.shape}"
            )
        states = [s0, s1]
        if mode == "search":
            for j in range(NUM_INTERMEDIATE):
                acc = None
                for k, (frm, dst) in enumerate(EDGES):
                    if dst != j + 2:
                        continue
                    contrib = self.mixed[k].forward(states[frm], F.take_row(alpha, k))
                    acc = contrib if acc is None else F.add(acc, contrib)
                states.append(acc)
        elif mode == "discrete":
            if genotype_cell is None:
                raise ValueError("discrete mode requires a bound genotype cell")
            edge_of = {(frm, dst): k for k, (frm, dst) in enumerate(EDGES)}
            for j, entries in enumerate(genotype_cell.nodes):
                acc = None
                for op_name, frm in entries:
                    k = edge_of[(frm, j + 2)]
                    op = self.mixed[k].candidates[OP_VOCAB.index(op_name)]
                    contrib = op.forward(states[frm])
                    acc = contrib if acc is None else F.add(acc, contrib)
                states.append(acc)
        else:
            raise ValueError(f"unknown cell mode {mode!r}")
        return F.concat(states[2:], axis=1)


class DiscreteCell(Module):
    """A cell instantiated from a genotype entry, with fresh weights.

    Edge outputs can be regularized (drop-path) via edge_regularizer; the
    callable is skipped on identity edges.
    """

    def __init__(self, entry, c_pp, c_p, channels, reduction_prev, rng, dtype,
                 track_running, tag=""):
        super().__init__()
        self.entry = entry
        self.reduction = entry.kind == "reduction"
        if reduction_prev:
            self.pre0 = self.add_child(
                FactorizedReduce(c_pp, channels, rng, dtype, track_running, f"{tag}.pre0"))
        else:
            self.pre0 = self.add_child(
                ReLUConvNorm(c_pp, channels, 1, 1, rng, dtype, track_running, f"{tag}.pre0"))
        self.pre1 = self.add_child(
            ReLUConvNorm(c_p, channels, 1, 1, rng, dtype, track_running, f"{tag}.pre1"))
        self.edge_ops = []
        for j, entries in enumerate(entry.nodes):
            ops = []
            for ei, (op_name, frm) in enumerate(entries):
                stride = 2 if self.reduction and frm in (0, 1) else 1
                ops.append((frm, op_name, self.add_child(make_op(
                    op_name, channels, stride, rng, dtype, track_running,
                    tag=f"{tag}.n{j}e{ei}.{op_name}"))))
            self.edge_ops.append(ops)

    def forward(self, s0, s1, edge_regularizer=None):
        s0 = self.pre0.forward(s0)
        s1 = self.pre1.forward(s1)
        states = [s0, s1]
        for ops in self.edge_ops:
            acc = None
            for frm, op_name, op in ops:
                contrib = op.forward(states[frm])
                if edge_regularizer is not None and op_name != "skip_connect":
                    contrib = edge_regularizer(contrib)
                acc = contrib if acc is None else F.add(acc, contrib)
            states.append(acc)
        return F.concat(states[2:], axis=1)
