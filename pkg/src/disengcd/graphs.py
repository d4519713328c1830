"""The student-exercise-concept interaction graph and its disentangled views.

Adjacencies are operator-shaped: rows are the node type being updated,
columns the type messages come from, and every nonempty row sums to 1.
Path names follow source->target order, e.g. ``a_se`` carries messages
from students to exercises and therefore has shape (n_exercises, n_students).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .sparse import SparseAdjacency


@dataclass(frozen=True)
class InteractionGraph:
    n_students: int
    n_exercises: int
    n_concepts: int
    a_se: SparseAdjacency  # exercises <- students who answered them
    a_es: SparseAdjacency  # students <- exercises they answered
    a_ek: SparseAdjacency  # concepts <- exercises involving them
    a_ke: SparseAdjacency  # exercises <- their concepts
    a_kk: SparseAdjacency  # concepts <- their prerequisites


@dataclass(frozen=True)
class RelationGraph:
    """Exercise-concept structure only: no student node ever enters."""

    n_exercises: int
    n_concepts: int
    a_ek: SparseAdjacency
    a_ke: SparseAdjacency
    a_kk: SparseAdjacency


@dataclass(frozen=True)
class DependencyGraph:
    n_concepts: int
    a_kk: SparseAdjacency

    @property
    def available(self) -> bool:
        return self.a_kk.nnz > 0


def build_interaction_graph(ds: Dataset) -> InteractionGraph:
    """Build all five typed adjacencies, row-normalized, duplicates collapsed."""
    if ds.n_logs:
        pairs = np.unique(ds.logs[:, :2], axis=0)
    else:
        pairs = np.empty((0, 2), dtype=np.int64)
    a_se = SparseAdjacency.from_entries(
        ds.n_exercises, ds.n_students, pairs[:, 1], pairs[:, 0]
    ).row_normalized()
    a_es = SparseAdjacency.from_entries(
        ds.n_students, ds.n_exercises, pairs[:, 0], pairs[:, 1]
    ).row_normalized()
    a_ke = ds.q_matrix.row_normalized()
    a_ek = ds.q_matrix.transpose().row_normalized()
    a_kk = ds.dependency.row_normalized()
    return InteractionGraph(
        ds.n_students, ds.n_exercises, ds.n_concepts, a_se, a_es, a_ek, a_ke, a_kk
    )


def disentangle_relation_graph(gi: InteractionGraph) -> RelationGraph:
    """Drop students and every student-linked edge; Q/D structure is shared."""
    return RelationGraph(gi.n_exercises, gi.n_concepts, gi.a_ek, gi.a_ke, gi.a_kk)


def disentangle_dependency_graph(gr: RelationGraph) -> DependencyGraph:
    """Further drop exercises, leaving only concept dependency edges."""
    return DependencyGraph(gr.n_concepts, gr.a_kk)
