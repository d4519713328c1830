"""Meta-multigraph student learning: a DAG of hyper-nodes whose edges carry
learnable typed propagation paths, pruned each pass by a threshold over
softmaxed path weights.

Hyper-node p holds one latent matrix per node type (students, exercises,
concepts).  A relation path updates exactly one type via
``target + row_normalized_adjacency @ source``; the identity path forwards a
block unchanged; the zero path contributes nothing.  Within an edge, kept
relation paths aiming at the same type share the update with weights
renormalized among themselves, so the residual coefficient stays 1 and the
worked single-path algebra is reproduced exactly whatever the raw weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autograd import Graph, evaluate
from .errors import ContractError
from .graphs import InteractionGraph

PATH_TYPES = ("A_se", "A_es", "A_ek", "A_ke", "A_kk", "I", "zero")
PATH_INDEX = {p: i for i, p in enumerate(PATH_TYPES)}

# relation paths: (target block, source block)
RELATION_PATHS = {
    "A_se": ("e", "s"),
    "A_es": ("s", "e"),
    "A_ek": ("c", "e"),
    "A_ke": ("e", "c"),
    "A_kk": ("c", "c"),
}

BLOCKS = ("s", "e", "c")


def _edges(p: int) -> list[tuple[int, int]]:
    return [(u, v) for v in range(2, p + 1) for u in range(1, v)]


@dataclass
class MetaMultigraph:
    """P hyper-nodes plus raw path weights for every ordered pair u < v."""

    n_hyper_nodes: int
    lam: float
    alpha: np.ndarray  # (P*(P-1)/2, 7)

    @classmethod
    def create(cls, n_hyper_nodes: int = 5, lam: float = 0.8, seed: int = 0):
        if n_hyper_nodes < 2:
            raise ContractError("need at least 2 hyper-nodes")
        if not (0.0 <= lam <= 1.0):
            raise ContractError(f"lambda must be in [0,1], got {lam}")
        rng = np.random.default_rng(seed)
        n_edges = n_hyper_nodes * (n_hyper_nodes - 1) // 2
        alpha = rng.uniform(-0.01, 0.01, size=(n_edges, len(PATH_TYPES)))
        return cls(n_hyper_nodes, lam, alpha)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return _edges(self.n_hyper_nodes)

    def edge_index(self, u: int, v: int) -> int:
        if not (1 <= u < v <= self.n_hyper_nodes):
            raise ContractError(f"invalid hyper-node edge ({u}, {v})")
        return self.edges.index((u, v))

    def validate(self):
        n_edges = self.n_hyper_nodes * (self.n_hyper_nodes - 1) // 2
        if self.alpha.shape != (n_edges, len(PATH_TYPES)):
            raise ContractError(
                f"alpha shape {self.alpha.shape}, expected {(n_edges, len(PATH_TYPES))}"
            )
        if not (0.0 <= self.lam <= 1.0):
            raise ContractError(f"lambda must be in [0,1], got {self.lam}")


@dataclass
class HyperNodeState:
    s: np.ndarray
    e: np.ndarray
    c: np.ndarray


def init_embeddings(w_s: np.ndarray, w_e: np.ndarray, w_c: np.ndarray) -> HyperNodeState:
    """First hyper-node state.

    Stacking every node's one-hot row against its embedding matrix just
    selects all rows, so H^(1) is the parameter matrices themselves.
    """
    if w_s.shape[1] != w_e.shape[1] or w_e.shape[1] != w_c.shape[1]:
        raise ContractError("embedding widths differ across node types")
    return HyperNodeState(w_s, w_e, w_c)


# -- routing -----------------------------------------------------------------


def path_softmax(alpha: np.ndarray, u: int, v: int, p: int) -> np.ndarray:
    """Normalized weights of the 7 path types on edge (u, v)."""
    row = alpha[_edges(p).index((u, v))]
    z = row - row.max()
    e = np.exp(z)
    return e / e.sum()


def routing_threshold(weights: np.ndarray, lam: float) -> float:
    if not (0.0 <= lam <= 1.0):
        raise ContractError(f"lambda must be in [0,1], got {lam}")
    return float(lam * weights.max() + (1.0 - lam) * weights.min())


def select_paths(weights: np.ndarray, tau: float) -> list[str]:
    """Paths whose weight reaches the threshold; the argmax always survives."""
    return [p for i, p in enumerate(PATH_TYPES) if weights[i] >= tau]


def resolve_structure(
    mg: MetaMultigraph,
    mode: str = "meta_multigraph",
    fixed: dict[tuple[int, int], list[str]] | None = None,
) -> dict[tuple[int, int], list[str]]:
    """Kept path set per edge under the given student-module mode."""
    structure = {}
    for u, v in mg.edges:
        w = path_softmax(mg.alpha, u, v, mg.n_hyper_nodes)
        if mode == "meta_multigraph":
            kept = select_paths(w, routing_threshold(w, mg.lam))
        elif mode == "meta_graph":
            kept = [PATH_TYPES[int(np.argmax(w))]]
        elif mode == "fixed_paths":
            if fixed is None or (u, v) not in fixed:
                raise ContractError(f"fixed_paths mode: no path list for edge ({u}, {v})")
            kept = list(fixed[(u, v)])
            unknown = [p for p in kept if p not in PATH_INDEX]
            if unknown:
                raise ContractError(f"unknown path types {unknown} on edge ({u}, {v})")
        else:
            raise ContractError(f"unknown student-module mode {mode!r}")
        structure[(u, v)] = kept
    return structure


# -- forward -----------------------------------------------------------------


def _path_adjacency(gi: InteractionGraph, path: str):
    return {
        "A_se": gi.a_se,
        "A_es": gi.a_es,
        "A_ek": gi.a_ek,
        "A_ke": gi.a_ke,
        "A_kk": gi.a_kk,
    }[path]


def apply_path(path: str, state: HyperNodeState, gi: InteractionGraph) -> HyperNodeState:
    """Single-path contribution in plain numpy (reference semantics)."""
    zero = HyperNodeState(
        np.zeros_like(state.s), np.zeros_like(state.e), np.zeros_like(state.c)
    )
    if path == "zero":
        return zero
    if path == "I":
        return HyperNodeState(state.s.copy(), state.e.copy(), state.c.copy())
    target, source = RELATION_PATHS[path]
    blocks = {"s": state.s, "e": state.e, "c": state.c}
    out = {"s": zero.s, "e": zero.e, "c": zero.c}
    out[target] = blocks[target] + _path_adjacency(gi, path).matmul(blocks[source])
    return HyperNodeState(out["s"], out["e"], out["c"])


def build_student_forward(
    g: Graph,
    gi: InteractionGraph,
    mg: MetaMultigraph,
    structure: dict[tuple[int, int], list[str]],
    d: int,
    param_prefix: str = "student",
) -> dict[str, int]:
    """Wire the pruned meta-multigraph into `g`; returns H^(P) block node ids.

    Declares trainable inputs ``<prefix>.w_s/w_e/w_c`` and ``alpha``.
    Gradients flow into alpha only through kept paths that share a target
    type on an edge (elsewhere the renormalized weight is constantly 1).
    """
    dims = {"s": gi.n_students, "e": gi.n_exercises, "c": gi.n_concepts}
    n_edges = len(mg.edges)
    alpha_in = g.input("alpha", (n_edges, len(PATH_TYPES)), trainable=True)

    state = {
        1: {
            "s": g.input(f"{param_prefix}.w_s", (dims["s"], d), trainable=True),
            "e": g.input(f"{param_prefix}.w_e", (dims["e"], d), trainable=True),
            "c": g.input(f"{param_prefix}.w_c", (dims["c"], d), trainable=True),
        }
    }

    for p in range(2, mg.n_hyper_nodes + 1):
        parts = {b: [] for b in BLOCKS}
        for u in range(1, p):
            kept = structure[(u, p)]
            eidx = mg.edge_index(u, p)
            by_target = {b: [] for b in BLOCKS}
            for path in kept:
                if path in RELATION_PATHS:
                    by_target[RELATION_PATHS[path][0]].append(path)
            for block in BLOCKS:
                paths = sorted(by_target[block], key=PATH_INDEX.get)
                if paths:
                    msgs = []
                    if len(paths) == 1:
                        path = paths[0]
                        src = RELATION_PATHS[path][1]
                        msgs.append(g.spmm(_path_adjacency(gi, path), state[u][src]))
                    else:
                        mask = np.zeros((n_edges, len(PATH_TYPES)), dtype=bool)
                        for path in paths:
                            mask[eidx, PATH_INDEX[path]] = True
                        weights = g.row_softmax(g.masked_select(alpha_in, mask))
                        for slot, path in enumerate(paths):
                            one = np.zeros((1, len(paths)), dtype=bool)
                            one[0, slot] = True
                            coef = g.masked_select(weights, one)
                            src = RELATION_PATHS[path][1]
                            msg = g.spmm(_path_adjacency(gi, path), state[u][src])
                            msgs.append(g.mul(msg, coef))
                    total = msgs[0]
                    for m in msgs[1:]:
                        total = g.add(total, m)
                    parts[block].append(g.add(state[u][block], total))
                elif "I" in kept:
                    parts[block].append(state[u][block])
        new = {}
        for block in BLOCKS:
            if parts[block]:
                acc = parts[block][0]
                for x in parts[block][1:]:
                    acc = g.add(acc, x)
                new[block] = acc
            else:
                new[block] = g.constant(np.zeros((dims[block], d)))
        state[p] = new

    return state[mg.n_hyper_nodes]


def forward_meta_multigraph(
    gi: InteractionGraph,
    mg: MetaMultigraph,
    params: dict[str, np.ndarray],
    mode: str = "meta_multigraph",
    fixed: dict[tuple[int, int], list[str]] | None = None,
):
    """Run the student module standalone; returns (s_bar, HyperNodeState)."""
    mg.validate()
    d = params["student.w_s"].shape[1]
    structure = resolve_structure(mg, mode, fixed)
    g = Graph()
    blocks = build_student_forward(g, gi, mg, structure, d)
    bindings = dict(params)
    bindings.setdefault("alpha", mg.alpha)
    values = evaluate(g, bindings)
    out = HyperNodeState(*(values[blocks[b]] for b in BLOCKS))
    return out.s, out


# -- structure export ---------------------------------------------------------


def export_structure(mg: MetaMultigraph) -> dict:
    """JSON-ready record of kept paths, weights and thresholds per edge."""
    mg.validate()
    edges = []
    for u, v in mg.edges:
        w = path_softmax(mg.alpha, u, v, mg.n_hyper_nodes)
        tau = routing_threshold(w, mg.lam)
        kept = select_paths(w, tau)
        edges.append(
            {
                "u": u,
                "v": v,
                "tau": tau,
                "paths": [{"type": p, "weight": float(w[PATH_INDEX[p]])} for p in kept],
            }
        )
    return {"P": mg.n_hyper_nodes, "lambda": mg.lam, "edges": edges}


def structure_from_export(export: dict) -> dict[tuple[int, int], list[str]]:
    out = {}
    for edge in export["edges"]:
        out[(edge["u"], edge["v"])] = [p["type"] for p in edge["paths"]]
    expected = set(_edges(export["P"]))
    if set(out) != expected:
        raise ContractError("export does not cover every hyper-node edge")
    return out


def render_dot(export: dict) -> str:
    """Graphviz rendering with one labelled line per kept path."""
    lines = ["digraph metamultigraph {", "  rankdir=LR;"]
    for p in range(1, export["P"] + 1):
        lines.append(f'  h{p} [label="H({p})" shape=circle];')
    for edge in export["edges"]:
        for path in edge["paths"]:
            lines.append(
                f'  h{edge["u"]} -> h{edge["v"]} '
                f'[label="{path["type"]} {path["weight"]:.3f}"];'
            )
    lines.append("}")
    return "\n".join(lines)


def save_export(export: dict, path):
    with open(path, "w") as fh:
        json.dump(export, fh, indent=1)
