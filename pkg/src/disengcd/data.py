"""Loading, validating, splitting, perturbing and synthesizing response-log datasets.

File formats (all CSV with headers, ids are arbitrary strings):

* logs:        ``student_id,exercise_id,response``   response in {0,1}
* Q-matrix:    ``exercise_id,concept_id``            one row per involvement
* dependency:  ``concept_id,prerequisite_concept_id`` (optional)
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataValidationError
from .sparse import SparseAdjacency


@dataclass
class IdMaps:
    students: list[str]
    exercises: list[str]
    concepts: list[str]

    def to_json(self) -> dict:
        return {
            "students": self.students,
            "exercises": self.exercises,
            "concepts": self.concepts,
        }


@dataclass
class Dataset:
    n_students: int
    n_exercises: int
    n_concepts: int
    logs: np.ndarray  # (n, 3) int64 rows: student, exercise, response
    q_matrix: SparseAdjacency  # exercises x concepts
    dependency: SparseAdjacency  # concepts x concepts; D[k, m]=1: k relies on m
    id_maps: IdMaps | None = None

    @property
    def n_logs(self) -> int:
        return int(self.logs.shape[0])

    def replace_logs(self, logs: np.ndarray) -> "Dataset":
        """New view with different logs; Q, D and id maps shared by reference."""
        return Dataset(
            self.n_students,
            self.n_exercises,
            self.n_concepts,
            logs,
            self.q_matrix,
            self.dependency,
            self.id_maps,
        )


@dataclass
class SplitSpec:
    train: float = 0.6
    val: float = 0.1
    test: float = 0.3
    seed: int = 0

    def validate(self):
        fr = (self.train, self.val, self.test)
        if any(not (0.0 < f < 1.0) for f in fr):
            raise ContractError(f"split fractions must each be in (0,1), got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ContractError(f"split fractions must sum to 1, got {sum(fr)}")


@dataclass
class SplitResult:
    train: Dataset
    val: Dataset
    test: Dataset
    warnings: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter((self.train, self.val, self.test))


@dataclass
class SyntheticTruth:
    mastery: np.ndarray  # (N, K) in [0, 1]
    difficulty: np.ndarray  # (M, K) in [0, 1]


def validate_dataset(ds: Dataset):
    logs = ds.logs
    if logs.ndim != 2 or logs.shape[1] != 3:
        raise DataValidationError("logs must be an (n, 3) array")
    if logs.shape[0]:
        if logs[:, 0].min() < 0 or logs[:, 0].max() >= ds.n_students:
            raise DataValidationError("student index out of range")
        if logs[:, 1].min() < 0 or logs[:, 1].max() >= ds.n_exercises:
            raise DataValidationError("exercise index out of range")
        bad = ~np.isin(logs[:, 2], (0, 1))
        if bad.any():
            raise DataValidationError(
                f"responses must be 0/1; offending rows {np.flatnonzero(bad)[:5].tolist()}"
            )
        keys = logs[:, 0].astype(np.int64) * ds.n_exercises + logs[:, 1]
        uniq, counts = np.unique(keys, return_counts=True)
        if (counts > 1).any():
            dup = uniq[counts > 1][:5]
            pairs = [(int(k // ds.n_exercises), int(k % ds.n_exercises)) for k in dup]
            raise DataValidationError(f"duplicate (student, exercise) pairs: {pairs}")
    q_deg = ds.q_matrix.row_degrees()
    used = np.unique(logs[:, 1]) if logs.shape[0] else np.array([], dtype=np.int64)
    empty = used[q_deg[used] == 0] if used.size else used
    if empty.size:
        names = empty[:10].tolist()
        if ds.id_maps is not None:
            names = [ds.id_maps.exercises[j] for j in empty[:10]]
        raise DataValidationError(f"exercises with no concept in Q-matrix: {names}")


# -- loading ----------------------------------------------------------------


def _read_csv(path, expected_header):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        # missing/unreadable files are usage errors, not data problems
        raise ContractError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected_header:
            raise DataValidationError(
                f"{path}: expected header {','.join(expected_header)}, got {header}"
            )
        rows = []
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise DataValidationError(f"{path}:{ln}: expected {len(expected_header)} fields")
            rows.append([f.strip() for f in row])
    return rows


def load_dataset(logs_path, q_path, dep_path=None, min_logs: int | None = None) -> Dataset:
    """Load and validate a dataset, remapping string ids to dense indices."""
    q_rows = _read_csv(q_path, ["exercise_id", "concept_id"])
    log_rows = _read_csv(logs_path, ["student_id", "exercise_id", "response"])
    dep_rows = _read_csv(dep_path, ["concept_id", "prerequisite_concept_id"]) if dep_path else []

    ex_ids: dict[str, int] = {}
    c_ids: dict[str, int] = {}
    q_e, q_c = [], []
    for e, c in q_rows:
        q_e.append(ex_ids.setdefault(e, len(ex_ids)))
        q_c.append(c_ids.setdefault(c, len(c_ids)))

    d_k, d_m = [], []
    for k, m in dep_rows:
        if k == m:
            raise DataValidationError(f"dependency self-loop on concept {k!r}")
        d_k.append(c_ids.setdefault(k, len(c_ids)))
        d_m.append(c_ids.setdefault(m, len(c_ids)))

    s_ids: dict[str, int] = {}
    logs = []
    for s, e, r in log_rows:
        if e not in ex_ids:
            raise DataValidationError(f"log references unknown exercise id {e!r}")
        if r not in ("0", "1"):
            raise DataValidationError(f"response must be 0 or 1, got {r!r}")
        logs.append((s_ids.setdefault(s, len(s_ids)), ex_ids[e], int(r)))

    n_s, n_e, n_c = len(s_ids), len(ex_ids), len(c_ids)
    ds = Dataset(
        n_students=n_s,
        n_exercises=n_e,
        n_concepts=n_c,
        logs=np.array(logs, dtype=np.int64).reshape(-1, 3),
        q_matrix=SparseAdjacency.from_entries(n_e, n_c, q_e, q_c),
        dependency=SparseAdjacency.from_entries(n_c, n_c, d_k, d_m),
        id_maps=IdMaps(list(s_ids), list(ex_ids), list(c_ids)),
    )
    if min_logs is not None:
        ds = filter_students(ds, min_logs)
    validate_dataset(ds)
    return ds


def filter_students(ds: Dataset, min_logs: int) -> Dataset:
    """Drop students with fewer than `min_logs` records and reindex."""
    counts = np.bincount(ds.logs[:, 0], minlength=ds.n_students)
    keep = np.flatnonzero(counts >= min_logs)
    remap = -np.ones(ds.n_students, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    logs = ds.logs[remap[ds.logs[:, 0]] >= 0].copy()
    logs[:, 0] = remap[logs[:, 0]]
    id_maps = ds.id_maps
    if id_maps is not None:
        id_maps = IdMaps([id_maps.students[i] for i in keep], id_maps.exercises, id_maps.concepts)
    return Dataset(
        int(keep.size), ds.n_exercises, ds.n_concepts, logs, ds.q_matrix, ds.dependency, id_maps
    )


def save_dataset(ds: Dataset, logs_path, q_path, dep_path=None):
    ids = ds.id_maps or IdMaps(
        [f"s{i}" for i in range(ds.n_students)],
        [f"e{j}" for j in range(ds.n_exercises)],
        [f"c{k}" for k in range(ds.n_concepts)],
    )
    with open(q_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["exercise_id", "concept_id"])
        for j, k, _ in ds.q_matrix.entries():
            w.writerow([ids.exercises[j], ids.concepts[k]])
    with open(logs_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["student_id", "exercise_id", "response"])
        for s, e, r in ds.logs:
            w.writerow([ids.students[s], ids.exercises[e], int(r)])
    if dep_path is not None:
        with open(dep_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["concept_id", "prerequisite_concept_id"])
            for k, m, _ in ds.dependency.entries():
                w.writerow([ids.concepts[k], ids.concepts[m]])


def save_id_maps(ds: Dataset, path):
    maps = ds.id_maps or IdMaps(
        [f"s{i}" for i in range(ds.n_students)],
        [f"e{j}" for j in range(ds.n_exercises)],
        [f"c{k}" for k in range(ds.n_concepts)],
    )
    with open(path, "w") as fh:
        json.dump(maps.to_json(), fh, indent=1)


# -- splitting and perturbation ----------------------------------------------


def _split_counts(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_tr = int(math.floor(spec.train * n))
    n_val = int(math.floor((spec.train + spec.val) * n)) - n_tr
    n_te = n - n_tr - n_val
    counts = [n_tr, n_val, n_te]
    # every split gets at least one log when the student has >= 3
    while min(counts) == 0:
        counts[counts.index(max(counts))] -= 1
        counts[counts.index(0)] += 1
    return tuple(counts)


def split(ds: Dataset, spec: SplitSpec) -> SplitResult:
    """Partition logs per student by the spec fractions after a seeded shuffle."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    parts = {0: [], 1: [], 2: []}
    warnings = []
    by_student = [[] for _ in range(ds.n_students)]
    for idx, s in enumerate(ds.logs[:, 0]):
        by_student[s].append(idx)
    for s, idxs in enumerate(by_student):
        n = len(idxs)
        if n == 0:
            continue
        idxs = np.array(idxs, dtype=np.int64)[rng.permutation(n)]
        if n < 3:
            parts[0].extend(idxs.tolist())
            warnings.append(f"student {s} has {n} logs (<3); all assigned to train")
            continue
        n_tr, n_val, _ = _split_counts(n, spec)
        parts[0].extend(idxs[:n_tr].tolist())
        parts[1].extend(idxs[n_tr : n_tr + n_val].tolist())
        parts[2].extend(idxs[n_tr + n_val :].tolist())
    out = [ds.replace_logs(ds.logs[np.array(sorted(p), dtype=np.int64)]) for p in parts.values()]
    return SplitResult(out[0], out[1], out[2], warnings)


def inject_noise(ds: Dataset, ratio: float, seed: int):
    """Append ceil(ratio * n) random unanswered-exercise logs per student.

    Original logs are never touched.  Returns (dataset, warnings).
    """
    if not (0.0 <= ratio <= 1.0):
        raise ContractError(f"noise ratio must be in [0,1], got {ratio}")
    if ratio == 0.0:
        return ds.replace_logs(ds.logs), []
    rng = np.random.default_rng(seed)
    answered = [set() for _ in range(ds.n_students)]
    for s, e, _ in ds.logs:
        answered[s].add(int(e))
    new_rows = []
    warnings = []
    for s in range(ds.n_students):
        n = len(answered[s])
        if n == 0:
            continue
        need = math.ceil(ratio * n)
        pool = np.setdiff1d(np.arange(ds.n_exercises), sorted(answered[s]))
        if pool.size == 0:
            warnings.append(f"student {s} answered every exercise; no noise added")
            continue
        if pool.size < need:
            warnings.append(
                f"student {s}: only {pool.size} unanswered exercises for {need} noise logs"
            )
            need = pool.size
        chosen = rng.choice(pool, size=need, replace=False)
        resp = rng.integers(0, 2, size=need)
        new_rows.extend((s, int(e), int(r)) for e, r in zip(chosen, resp))
    if new_rows:
        logs = np.concatenate([ds.logs, np.array(new_rows, dtype=np.int64)])
    else:
        logs = ds.logs
    return ds.replace_logs(logs), warnings


def delete_records(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Seeded uniform deletion; no student drops below one log."""
    if not (0.0 <= fraction < 1.0):
        raise ContractError(f"delete fraction must be in [0,1), got {fraction}")
    if fraction == 0.0 or ds.n_logs == 0:
        return ds.replace_logs(ds.logs)
    rng = np.random.default_rng(seed)
    target = int(fraction * ds.n_logs)
    remaining = np.bincount(ds.logs[:, 0], minlength=ds.n_students)
    keep = np.ones(ds.n_logs, dtype=bool)
    removed = 0
    for idx in rng.permutation(ds.n_logs):
        if removed >= target:
            break
        s = ds.logs[idx, 0]
        if remaining[s] > 1:
            keep[idx] = False
            remaining[s] -= 1
            removed += 1
    return ds.replace_logs(ds.logs[keep])


# -- synthetic oracle ---------------------------------------------------------


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate_synthetic(
    n_students: int,
    n_exercises: int,
    n_concepts: int,
    logs_per_student: int,
    seed: int,
    dep_edge_prob: float = 0.1,
):
    """Sample a dataset with known mastery/difficulty ground truth.

    Responses follow Bernoulli(sigmoid(5 * mean over the exercise's concepts
    of (mastery - difficulty))), so the generating probabilities themselves
    are an oracle for what a diagnostic model can recover.
    """
    if min(n_students, n_exercises, n_concepts, logs_per_student) < 1:
        raise ContractError("all synthetic counts must be >= 1")
    rng = np.random.default_rng(seed)
    mastery = rng.random((n_students, n_concepts))
    difficulty = rng.random((n_exercises, n_concepts))

    q_e, q_c = [], []
    for j in range(n_exercises):
        k = int(rng.integers(1, min(3, n_concepts) + 1))
        for c in rng.choice(n_concepts, size=k, replace=False):
            q_e.append(j)
            q_c.append(int(c))
    q = SparseAdjacency.from_entries(n_exercises, n_concepts, q_e, q_c)

    d_k, d_m = [], []
    for k in range(n_concepts):
        for m in range(k):
            if rng.random() < dep_edge_prob:
                d_k.append(k)
                d_m.append(m)
    dep = SparseAdjacency.from_entries(n_concepts, n_concepts, d_k, d_m)

    concept_lists = [[] for _ in range(n_exercises)]
    for j, c, _ in q.entries():
        concept_lists[j].append(c)

    rows = []
    per = min(logs_per_student, n_exercises)
    for i in range(n_students):
        for j in rng.choice(n_exercises, size=per, replace=False):
            ks = concept_lists[j]
            p = _sigmoid(5.0 * float(np.mean(mastery[i, ks] - difficulty[j, ks])))
            rows.append((i, int(j), int(rng.random() < p)))

    ds = Dataset(
        n_students,
        n_exercises,
        n_concepts,
        np.array(rows, dtype=np.int64),
        q,
        dep,
    )
    validate_dataset(ds)
    return ds, SyntheticTruth(mastery, difficulty)


def response_probabilities(ds: Dataset, truth: SyntheticTruth) -> np.ndarray:
    """The generator's own probability for each log row (oracle predictions)."""
    concept_lists = [[] for _ in range(ds.n_exercises)]
    for j, c, _ in ds.q_matrix.entries():
        concept_lists[j].append(c)
    out = np.empty(ds.n_logs)
    for n, (i, j, _) in enumerate(ds.logs):
        ks = concept_lists[j]
        out[n] = _sigmoid(5.0 * float(np.mean(truth.mastery[i, ks] - truth.difficulty[j, ks])))
    return out
