"""Graph-attention exercise and concept modules.

Attention scores are raw linear maps of [center, neighbor] pushed through a
per-center softmax (no leaky-ReLU), and every layer carries a residual term,
so a node with no neighbors keeps its representation.  Both modules see only
exercise/concept structure: response logs never enter, which is what makes
their outputs invariant to interaction noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Graph, evaluate
from .graphs import DependencyGraph, RelationGraph

MASK_OFF = 1e30  # subtracted from logits of non-edges before row-softmax


@dataclass
class GatLayerParams:
    """One attention context: scalar score from a 2d-wide linear map."""

    w_center: np.ndarray  # (d, 1)
    w_nbr: np.ndarray  # (d, 1)
    bias: np.ndarray  # (1, 1)


def init_layer(d: int, rng) -> GatLayerParams:
    bound = 1.0 / np.sqrt(d)
    return GatLayerParams(
        rng.uniform(-bound, bound, (d, 1)),
        rng.uniform(-bound, bound, (d, 1)),
        rng.uniform(-bound, bound, (1, 1)),
    )


def attention_row(center: np.ndarray, neighbors, layer: GatLayerParams) -> np.ndarray:
    """Softmaxed compatibility of one center with each neighbor.

    Empty neighbor lists yield an empty weight vector; the caller then adds
    only the residual.
    """
    neighbors = np.asarray(neighbors, dtype=np.float64).reshape(-1, center.size)
    if neighbors.shape[0] == 0:
        return np.zeros(0)
    logits = (
        neighbors @ layer.w_nbr
        + (center.reshape(1, -1) @ layer.w_center).item()
        + layer.bias.item()
    ).ravel()
    z = np.exp(logits - logits.max())
    return z / z.sum()


def _layer_names(prefix: str, ctx: str, layer: int) -> tuple[str, str, str]:
    base = f"{prefix}.att.{ctx}.{layer}"
    return f"{base}.wc", f"{base}.wn", f"{base}.b"


def _declare_layer(g: Graph, prefix: str, ctx: str, layer: int, d: int):
    wc, wn, b = _layer_names(prefix, ctx, layer)
    return (
        g.input(wc, (d, 1), trainable=True),
        g.input(wn, (d, 1), trainable=True),
        g.input(b, (1, 1), trainable=True),
    )


def _attention_matmul(g: Graph, center, nbr, mask: np.ndarray, wc, wn, b, out_of):
    """att @ out_of + implicit mask handling; empty rows contribute zero."""
    logits = g.add(
        g.add(g.matmul(center, wc), g.transpose(g.matmul(nbr, wn))), b
    )
    masked = g.add(logits, g.constant((mask - 1.0) * MASK_OFF))
    att = g.mul(g.row_softmax(masked), g.constant(mask))
    return g.matmul(att, out_of)


def build_exercise_forward(
    g: Graph,
    gr: RelationGraph,
    n_layers: int,
    d: int,
    prefix: str = "ex",
    mask_override: dict[str, np.ndarray] | None = None,
) -> tuple[int, int]:
    """Wire the L-layer relation-graph GAT; returns (exercise, concept) node ids.

    `mask_override` is a test hook replacing an attention mask by key
    ("ec", "ce", "cc"); an all-zero mask turns that aggregation term off and
    each layer degenerates to the residual identity.
    """
    masks = {
        "ec": gr.a_ke.pattern_mask(),
        "ce": gr.a_ek.pattern_mask(),
        "cc": gr.a_kk.pattern_mask(),
    }
    if mask_override:
        masks.update(mask_override)
    e_cur = g.input(f"{prefix}.w_e", (gr.n_exercises, d), trainable=True)
    c_cur = g.input(f"{prefix}.w_c", (gr.n_concepts, d), trainable=True)
    for layer in range(n_layers):
        wc, wn, b = _declare_layer(g, prefix, "ec", layer, d)
        e_new = g.add(_attention_matmul(g, e_cur, c_cur, masks["ec"], wc, wn, b, c_cur), e_cur)
        wc, wn, b = _declare_layer(g, prefix, "ce", layer, d)
        c_new = g.add(_attention_matmul(g, c_cur, e_cur, masks["ce"], wc, wn, b, e_cur), c_cur)
        if gr.a_kk.nnz > 0 or (mask_override and "cc" in mask_override):
            wc, wn, b = _declare_layer(g, prefix, "cc", layer, d)
            c_new = g.add(
                _attention_matmul(g, c_cur, c_cur, masks["cc"], wc, wn, b, c_cur), c_new
            )
        e_cur, c_cur = e_new, c_new
    return e_cur, c_cur


def build_concept_forward(
    g: Graph,
    gd: DependencyGraph,
    n_layers: int,
    d: int,
    prefix: str = "con",
    mask_override: dict[str, np.ndarray] | None = None,
) -> int:
    """Wire the dependency-graph GAT; falls back to the bare embedding when
    no dependency edges exist."""
    c_cur = g.input(f"{prefix}.w_c", (gd.n_concepts, d), trainable=True)
    if not gd.available and not mask_override:
        return c_cur
    mask = gd.a_kk.pattern_mask()
    if mask_override and "dd" in mask_override:
        mask = mask_override["dd"]
    for layer in range(n_layers):
        wc, wn, b = _declare_layer(g, prefix, "dd", layer, d)
        c_cur = g.add(_attention_matmul(g, c_cur, c_cur, mask, wc, wn, b, c_cur), c_cur)
    return c_cur


def init_exercise_params(gr: RelationGraph, d: int, n_layers: int, rng) -> dict:
    bound = 1.0 / np.sqrt(d)
    params = {
        "ex.w_e": rng.uniform(-bound, bound, (gr.n_exercises, d)),
        "ex.w_c": rng.uniform(-bound, bound, (gr.n_concepts, d)),
    }
    contexts = ["ec", "ce"] + (["cc"] if gr.a_kk.nnz > 0 else [])
    for layer in range(n_layers):
        for ctx in contexts:
            lp = init_layer(d, rng)
            wc, wn, b = _layer_names("ex", ctx, layer)
            params[wc], params[wn], params[b] = lp.w_center, lp.w_nbr, lp.bias
    return params


def init_concept_params(gd: DependencyGraph, d: int, n_layers: int, rng) -> dict:
    bound = 1.0 / np.sqrt(d)
    params = {"con.w_c": rng.uniform(-bound, bound, (gd.n_concepts, d))}
    if gd.available:
        for layer in range(n_layers):
            lp = init_layer(d, rng)
            wc, wn, b = _layer_names("con", "dd", layer)
            params[wc], params[wn], params[b] = lp.w_center, lp.w_nbr, lp.bias
    return params


def exercise_forward(gr: RelationGraph, params: dict, n_layers: int) -> np.ndarray:
    """Standalone evaluation returning the exercise representation matrix."""
    d = params["ex.w_e"].shape[1]
    g = Graph()
    e_id, _ = build_exercise_forward(g, gr, n_layers, d)
    return evaluate(g, params)[e_id]


def concept_forward(gd: DependencyGraph, params: dict, n_layers: int) -> np.ndarray:
    """Standalone evaluation returning the concept representation matrix."""
    d = params["con.w_c"].shape[1]
    g = Graph()
    c_id = build_concept_forward(g, gd, n_layers, d)
    return evaluate(g, params)[c_id]
