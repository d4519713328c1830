"""Diagnostic head: response probability from the three representations.

The head averages the concept representations of the target exercise into a
context vector, maps student and exercise sides through separate linear
layers, measures their elementwise similarity through a third layer plus
sigmoid, and averages the similarity over the exercise's concepts.  The
embedding width must equal the concept count for that masked average to be
well-typed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Graph
from .errors import ContractError
from .sparse import SparseAdjacency

PROB_CLAMP = 1e-7


@dataclass
class Prediction:
    r_hat: float
    h_si: np.ndarray  # (d,) student mastery proxy
    h_simi: np.ndarray  # (d,) per-concept similarity in (0, 1)


def init_diagnosis_params(d: int, rng) -> dict:
    bound = 1.0 / np.sqrt(d)
    params = {}
    for part in ("si", "ej", "simi"):
        params[f"diag.{part}.w"] = rng.uniform(-bound, bound, (d, d))
        params[f"diag.{part}.b"] = rng.uniform(-bound, bound, (1, d))
    return params


def _affine(g: Graph, x: int, prefix: str, d: int) -> int:
    names = (f"{prefix}.w", f"{prefix}.b")
    shapes = ((d, d), (1, d))
    w, b = (
        g.leaves[n] if n in g.leaves else g.input(n, s, trainable=True)
        for n, s in zip(names, shapes)
    )
    return g.add(g.matmul(x, w), b)


def selection_matrix(indices, n: int) -> SparseAdjacency:
    """One-hot rows picking `indices`; spmm with it gathers those rows."""
    indices = np.asarray(indices, dtype=np.int64)
    return SparseAdjacency.from_entries(
        indices.shape[0], n, np.arange(indices.shape[0]), indices
    )


def build_predict(
    g: Graph,
    s_bar: int,
    e_bar: int,
    c_bar: int,
    students,
    exercises,
    q: SparseAdjacency,
    d: int,
) -> int:
    """Wire batched Eq-style prediction; returns the (B, 1) probability node."""
    if d != q.n_cols:
        raise ContractError(
            f"diagnosis needs embedding width == concept count ({q.n_cols}), got {d}"
        )
    deg = q.row_degrees()
    used = np.unique(np.asarray(exercises, dtype=np.int64))
    if used.size and (deg[used] == 0).any():
        raise ContractError("exercise without concepts reached the diagnostic head")

    n_students = g.nodes[s_bar].shape[0]
    n_exercises = g.nodes[e_bar].shape[0]
    s_rows = g.spmm(selection_matrix(students, n_students), s_bar)
    e_rows = g.spmm(selection_matrix(exercises, n_exercises), e_bar)
    c_context = g.spmm(
        selection_matrix(exercises, n_exercises), g.spmm(q.row_normalized(), c_bar)
    )

    h_si = _affine(g, g.add(s_rows, c_context), "diag.si", d)
    h_ej = _affine(g, g.add(e_rows, c_context), "diag.ej", d)
    h_simi = g.sigmoid(_affine(g, g.mul(h_si, h_ej), "diag.simi", d))

    q_rows = q.pattern_mask()[np.asarray(exercises, dtype=np.int64)]
    inv_counts = (1.0 / q_rows.sum(axis=1)).reshape(-1, 1)
    masked = g.mul(h_simi, g.constant(q_rows))
    return g.mul(g.row_sum(masked), g.constant(inv_counts))


def build_bce_loss(g: Graph, r_hat: int, labels: np.ndarray) -> int:
    """Mean binary cross-entropy against constant labels, clamped away from 0/1."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    p = g.clip(r_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    one = g.constant(np.ones((1, 1)))
    pos = g.mul(g.constant(labels), g.log(p))
    neg = g.mul(g.constant(1.0 - labels), g.log(g.add(one, g.scale(p, -1.0))))
    return g.mark_loss(g.scale(g.mean(g.add(pos, neg)), -1.0))


# -- plain-numpy reference forms ----------------------------------------------


def _head_rows(params, s_plus_c: np.ndarray, e_plus_c: np.ndarray):
    h_si = s_plus_c @ params["diag.si.w"] + params["diag.si.b"]
    h_ej = e_plus_c @ params["diag.ej.w"] + params["diag.ej.b"]
    z = (h_si * h_ej) @ params["diag.simi.w"] + params["diag.simi.b"]
    return h_si, 1.0 / (1.0 + np.exp(-z))


def predict(
    s_row: np.ndarray,
    e_row: np.ndarray,
    c_bar: np.ndarray,
    q_row: np.ndarray,
    params: dict,
) -> Prediction:
    """Single-pair prediction (reference path for tests and reports)."""
    q_row = np.asarray(q_row, dtype=np.float64).ravel()
    if q_row.sum() < 1:
        raise ContractError("exercise has no concepts in its Q-matrix row")
    ctx = c_bar[q_row > 0].mean(axis=0, keepdims=True)
    h_si, h_simi = _head_rows(
        params, s_row.reshape(1, -1) + ctx, e_row.reshape(1, -1) + ctx
    )
    r_hat = float((q_row * h_simi.ravel()).sum() / q_row.sum())
    return Prediction(r_hat, h_si.ravel(), h_simi.ravel())


def bce_loss(predictions, labels) -> float:
    """Mean BCE with probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(predictions, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    r = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(r * np.log(p) + (1 - r) * np.log(1 - p)))


def mastery_report(
    s_row: np.ndarray,
    e_bar: np.ndarray,
    c_bar: np.ndarray,
    q: SparseAdjacency,
    params: dict,
):
    """Per-concept mastery: similarity of the student with a neutral exercise.

    The neutral exercise for concept k is the mean representation of the
    exercises involving k; concepts no exercise involves are flagged and
    reported at the indifference level 0.5.
    """
    k = q.n_cols
    counts = np.zeros(k)
    e_neutral = np.zeros((k, c_bar.shape[1]))
    for j, kk, _ in q.entries():
        counts[kk] += 1
        e_neutral[kk] += e_bar[j]
    orphan = counts == 0
    e_neutral[~orphan] /= counts[~orphan, None]

    _, h_simi = _head_rows(params, s_row.reshape(1, -1) + c_bar, e_neutral + c_bar)
    mastery = np.diag(h_simi).copy()
    mastery[orphan] = 0.5
    flags = [f"concept {int(i)} has no exercises; mastery set to 0.5" for i in np.flatnonzero(orphan)]
    return mastery, flags
