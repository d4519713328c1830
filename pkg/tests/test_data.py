import math

import numpy as np
import pytest

from disengcd.data import (
    Dataset,
    SplitSpec,
    delete_records,
    filter_students,
    generate_synthetic,
    inject_noise,
    load_dataset,
    response_probabilities,
    save_dataset,
    split,
    validate_dataset,
)
from disengcd.errors import ContractError, DataValidationError
from disengcd.evaluation import auc_rank
from disengcd.sparse import SparseAdjacency


def write_csvs(tmp_path, logs_rows, q_rows, dep_rows=None):
    logs = tmp_path / "logs.csv"
    q = tmp_path / "q.csv"
    logs.write_text("student_id,exercise_id,response\n" + "".join(f"{s},{e},{r}\n" for s, e, r in logs_rows))
    q.write_text("exercise_id,concept_id\n" + "".join(f"{e},{c}\n" for e, c in q_rows))
    dep = None
    if dep_rows is not None:
        dep = tmp_path / "dep.csv"
        dep.write_text(
            "concept_id,prerequisite_concept_id\n" + "".join(f"{k},{m}\n" for k, m in dep_rows)
        )
    return logs, q, dep


def test_minimal_dataset_loads(tmp_path):
    logs, q, _ = write_csvs(tmp_path, [("s1", "e1", 1)], [("e1", "c1")])
    ds = load_dataset(logs, q)
    assert (ds.n_students, ds.n_exercises, ds.n_concepts, ds.n_logs) == (1, 1, 1, 1)
    assert ds.id_maps.students == ["s1"]


def test_unknown_exercise_rejected(tmp_path):
    logs, q, _ = write_csvs(tmp_path, [("s1", "eX", 1)], [("e1", "c1")])
    with pytest.raises(DataValidationError, match="eX"):
        load_dataset(logs, q)


def test_bad_response_rejected(tmp_path):
    logs, q, _ = write_csvs(tmp_path, [("s1", "e1", 2)], [("e1", "c1")])
    with pytest.raises(DataValidationError):
        load_dataset(logs, q)


def test_duplicate_pair_rejected(tmp_path):
    logs, q, _ = write_csvs(tmp_path, [("s1", "e1", 1), ("s1", "e1", 0)], [("e1", "c1")])
    with pytest.raises(DataValidationError, match="duplicate"):
        load_dataset(logs, q)


def test_dependency_self_loop_rejected(tmp_path):
    logs, q, dep = write_csvs(tmp_path, [("s1", "e1", 1)], [("e1", "c1")], [("c1", "c1")])
    with pytest.raises(DataValidationError, match="self-loop"):
        load_dataset(logs, q, dep)


def test_missing_header_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n")
    q = tmp_path / "q.csv"
    q.write_text("exercise_id,concept_id\ne1,c1\n")
    with pytest.raises(DataValidationError, match="header"):
        load_dataset(path, q)


def test_assistments_shaped_load(tmp_path):
    # same shape as the big public benchmark: 4163/17746/123 with 278868 logs
    n_s, n_e, n_c, n_logs = 4163, 17746, 123, 278868
    rng = np.random.default_rng(0)
    q_rows = [(f"e{j}", f"c{j % n_c}") for j in range(n_e)]
    per_student = n_logs // n_s
    extra = n_logs - per_student * n_s
    lines = []
    for i in range(n_s):
        want = per_student + (1 if i < extra else 0)
        for j in rng.choice(n_e, size=want, replace=False):
            lines.append((f"s{i}", f"e{j}", int(rng.integers(0, 2))))
    logs, q, _ = write_csvs(tmp_path, lines, q_rows)
    ds = load_dataset(logs, q)
    assert (ds.n_students, ds.n_exercises, ds.n_concepts) == (n_s, n_e, n_c)
    assert ds.n_logs == n_logs


def test_save_and_reload_round_trip(tmp_path):
    ds, _ = generate_synthetic(12, 9, 4, 5, seed=5)
    save_dataset(ds, tmp_path / "l.csv", tmp_path / "q.csv", tmp_path / "d.csv")
    back = load_dataset(tmp_path / "l.csv", tmp_path / "q.csv", tmp_path / "d.csv")
    assert np.array_equal(np.sort(back.logs, axis=0), np.sort(ds.logs, axis=0))
    assert back.q_matrix.nnz == ds.q_matrix.nnz
    assert back.dependency.nnz == ds.dependency.nnz


def test_filter_students_reindexes(tmp_path):
    logs, q, _ = write_csvs(
        tmp_path,
        [("a", "e1", 1), ("a", "e2", 0), ("b", "e1", 1)],
        [("e1", "c1"), ("e2", "c1")],
    )
    ds = load_dataset(logs, q, min_logs=2)
    assert ds.n_students == 1
    assert ds.id_maps.students == ["a"]
    assert ds.n_logs == 2


# -- split ---------------------------------------------------------------------


def synth(n_students=20, n_exercises=30, n_concepts=5, per=10, seed=0):
    return generate_synthetic(n_students, n_exercises, n_concepts, per, seed)[0]


def test_split_exact_fractions():
    ds = synth(per=10)
    parts = split(ds, SplitSpec(0.6, 0.1, 0.3, seed=0))
    for s in range(ds.n_students):
        assert (parts.train.logs[:, 0] == s).sum() == 6
        assert (parts.val.logs[:, 0] == s).sum() == 1
        assert (parts.test.logs[:, 0] == s).sum() == 3


def test_split_is_partition():
    ds = synth(per=7)
    parts = split(ds, SplitSpec(0.5, 0.2, 0.3, seed=3))
    merged = np.concatenate([parts.train.logs, parts.val.logs, parts.test.logs])
    assert np.array_equal(
        np.sort(merged.view([("", merged.dtype)] * 3), axis=0),
        np.sort(ds.logs.view([("", ds.logs.dtype)] * 3), axis=0),
    )


def test_split_deterministic():
    ds = synth()
    a = split(ds, SplitSpec(0.6, 0.1, 0.3, seed=42))
    b = split(ds, SplitSpec(0.6, 0.1, 0.3, seed=42))
    assert np.array_equal(a.train.logs, b.train.logs)
    assert np.array_equal(a.test.logs, b.test.logs)


def test_split_shares_q_by_reference():
    ds = synth()
    parts = split(ds, SplitSpec(0.6, 0.1, 0.3, seed=0))
    assert parts.train.q_matrix is ds.q_matrix
    assert parts.test.dependency is ds.dependency


def test_split_rejects_zero_fraction():
    ds = synth()
    with pytest.raises(ContractError):
        split(ds, SplitSpec(0.5, 0.5, 0.0, seed=0))


def test_split_rejects_bad_sum():
    ds = synth()
    with pytest.raises(ContractError):
        split(ds, SplitSpec(0.5, 0.2, 0.2, seed=0))


def test_short_student_goes_to_train_with_warning():
    logs = np.array([[0, 0, 1], [0, 1, 0], [1, 0, 1], [1, 1, 0], [1, 2, 1]], dtype=np.int64)
    q = SparseAdjacency.from_entries(3, 1, [0, 1, 2], [0, 0, 0])
    ds = Dataset(2, 3, 1, logs, q, SparseAdjacency.empty(1, 1))
    parts = split(ds, SplitSpec(0.4, 0.3, 0.3, seed=0))
    assert (parts.train.logs[:, 0] == 0).sum() == 2
    assert any("student 0" in w for w in parts.warnings)


# -- noise -----------------------------------------------------------------------


def test_noise_zero_ratio_is_identity():
    ds = synth()
    noisy, warnings = inject_noise(ds, 0.0, seed=1)
    assert np.array_equal(noisy.logs, ds.logs)
    assert warnings == []


def test_noise_appends_ceil_counts():
    ds = synth(per=10)
    noisy, _ = inject_noise(ds, 0.5, seed=1)
    for s in range(ds.n_students):
        n_old = (ds.logs[:, 0] == s).sum()
        n_new = (noisy.logs[:, 0] == s).sum()
        assert n_new - n_old == math.ceil(0.5 * n_old)


def test_noise_only_appends():
    ds = synth()
    noisy, _ = inject_noise(ds, 0.3, seed=2)
    n = ds.n_logs
    assert np.array_equal(noisy.logs[:n], ds.logs)


def test_noise_skips_saturated_student_with_warning():
    logs = np.array([[0, 0, 1], [0, 1, 0]], dtype=np.int64)
    q = SparseAdjacency.from_entries(2, 1, [0, 1], [0, 0])
    ds = Dataset(1, 2, 1, logs, q, SparseAdjacency.empty(1, 1))
    noisy, warnings = inject_noise(ds, 1.0, seed=0)
    assert noisy.n_logs == 2
    assert len(warnings) == 1


def test_noise_rejects_bad_ratio():
    with pytest.raises(ContractError):
        inject_noise(synth(), 1.5, seed=0)


def test_noise_mean_added_response_rate_near_half():
    ds = synth(n_students=150, n_exercises=200, per=20, seed=9)
    noisy, _ = inject_noise(ds, 1.0, seed=4)
    added = noisy.logs[ds.n_logs :]
    assert added.shape[0] == 150 * 20
    assert abs(added[:, 2].mean() - 0.5) < 0.05


def test_noise_preserves_no_duplicates():
    ds = synth()
    noisy, _ = inject_noise(ds, 0.8, seed=3)
    validate_dataset(noisy)


# -- deletion ---------------------------------------------------------------------


def test_delete_zero_identity():
    ds = synth()
    assert np.array_equal(delete_records(ds, 0.0, seed=0).logs, ds.logs)


def test_delete_fraction_counts():
    ds = synth(n_students=10, per=10)  # 100 logs
    out = delete_records(ds, 0.2, seed=1)
    assert abs(out.n_logs - 80) <= 1


def test_delete_deterministic():
    ds = synth()
    a = delete_records(ds, 0.3, seed=7)
    b = delete_records(ds, 0.3, seed=7)
    assert np.array_equal(a.logs, b.logs)


def test_delete_keeps_every_student():
    ds = synth(n_students=8, per=3)
    out = delete_records(ds, 0.9, seed=2)
    assert set(np.unique(out.logs[:, 0])) == set(range(8))


def test_delete_rejects_full_fraction():
    with pytest.raises(ContractError):
        delete_records(synth(), 1.0, seed=0)


# -- synthetic oracle ---------------------------------------------------------------


def test_synthetic_reproducible():
    a, ta = generate_synthetic(30, 20, 6, 10, seed=11)
    b, tb = generate_synthetic(30, 20, 6, 10, seed=11)
    assert np.array_equal(a.logs, b.logs)
    assert np.array_equal(ta.mastery, tb.mastery)
    assert np.array_equal(ta.difficulty, tb.difficulty)


def test_synthetic_mastery_all_ones_gives_sigmoid5_rate():
    ds, truth = generate_synthetic(400, 50, 5, 20, seed=0)
    truth.mastery[:] = 1.0
    truth.difficulty[:] = 0.0
    # resample responses under the forced truth via the documented model
    probs = response_probabilities(ds, truth)
    assert np.allclose(probs, 1.0 / (1.0 + np.exp(-5.0)))
    rng = np.random.default_rng(1)
    resampled = (rng.random(probs.size) < probs).astype(int)
    assert abs(resampled.mean() - 0.9933) < 0.01


def test_synthetic_equal_mastery_difficulty_gives_half():
    ds, truth = generate_synthetic(200, 50, 5, 25, seed=3)
    truth.mastery = np.full((200, 5), 0.4)
    truth.difficulty = np.full((50, 5), 0.4)
    probs = response_probabilities(ds, truth)
    assert np.allclose(probs, 0.5)


def test_synthetic_counts_and_oracle_auc():
    ds, truth = generate_synthetic(200, 100, 10, 50, seed=0)
    assert ds.n_logs == 200 * 50
    probs = response_probabilities(ds, truth)
    auc = auc_rank(probs, ds.logs[:, 2])
    assert auc >= 0.75


def test_synthetic_rejects_zero_counts():
    with pytest.raises(ContractError):
        generate_synthetic(0, 5, 3, 4, seed=0)
