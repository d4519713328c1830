"""Metrics and experiment harnesses (robustness, sparsity, hyper-node sweep,
graph-assignment ablation)."""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset, SplitSpec
from .errors import ContractError

PAIRWISE_AUC_LIMIT = 10_000


@dataclass
class MetricReport:
    acc: float
    rmse: float
    auc: float | None
    n_examples: int
    split: str = ""
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "rmse": self.rmse,
            "auc": self.auc,
            "n_examples": self.n_examples,
            "split": self.split,
            "config_digest": self.config_digest,
        }


def auc_pairwise(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Exact Mann-Whitney statistic by pair counting; ties count one half."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        return None
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return float((gt + 0.5 * eq) / (pos.size * neg.size))


def auc_rank(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Rank formulation with midranks for ties; O(n log n)."""
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    cum = np.cumsum(counts)
    midranks = cum - (counts - 1) / 2.0
    ranks = midranks[inverse]
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def metrics(predictions, labels, split_label: str = "", config_digest: str = "") -> MetricReport:
    """ACC at threshold 0.5 (ties predict positive), probability RMSE, and AUC."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != y.shape or p.size == 0:
        raise ContractError(f"predictions {p.shape} vs labels {y.shape}; need equal, nonempty")
    acc = float(np.mean((p >= 0.5) == (y == 1)))
    rmse = float(np.sqrt(np.mean((p - y) ** 2)))
    auc = auc_pairwise(p, y) if p.size <= PAIRWISE_AUC_LIMIT else auc_rank(p, y)
    return MetricReport(acc, rmse, auc, int(p.size), split_label, config_digest)


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


# -- harnesses ----------------------------------------------------------------


def _worker_count() -> int:
    raw = os.environ.get("DISENGCD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_runs(fn, items):
    workers = _worker_count()
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def train_and_score(dataset: Dataset, split_spec: SplitSpec, config) -> dict:
    """Split, perturb per config, train from scratch, score the clean test split."""
    from .trainer import prepare_splits, train_bilevel

    started = time.perf_counter()
    parts = prepare_splits(dataset, split_spec, config)
    model, history = train_bilevel(parts, config)
    probs = model.predict_probs(parts.test.logs)
    rep = metrics(probs, parts.test.logs[:, 2], split_label="test")
    return {
        "report": rep,
        "model": model,
        "history": history,
        "seconds": time.perf_counter() - started,
    }


def robustness_experiment(dataset, split_spec, config, noise_ratios) -> list[dict]:
    """One full training per noise ratio; test split stays clean."""
    from dataclasses import replace

    if any(not (0.0 <= r <= 1.0) for r in noise_ratios):
        raise ContractError("noise ratios must lie in [0, 1]")

    def run(ratio):
        out = train_and_score(dataset, split_spec, replace(config, noise_ratio=float(ratio)))
        rep = out["report"]
        return {
            "noise_ratio": float(ratio),
            "acc": rep.acc,
            "rmse": rep.rmse,
            "auc": rep.auc,
            "n_examples": rep.n_examples,
            "seconds": out["seconds"],
        }

    return _map_runs(run, list(noise_ratios))


def sparsity_experiment(dataset, split_spec, config, delete_fractions) -> list[dict]:
    from dataclasses import replace

    def run(fraction):
        out = train_and_score(
            dataset, split_spec, replace(config, delete_fraction=float(fraction))
        )
        rep = out["report"]
        return {
            "delete_fraction": float(fraction),
            "acc": rep.acc,
            "rmse": rep.rmse,
            "auc": rep.auc,
            "n_examples": rep.n_examples,
            "seconds": out["seconds"],
        }

    return _map_runs(run, list(delete_fractions))


def sensitivity_experiment(dataset, split_spec, config, hyper_node_counts) -> list[dict]:
    """Hyper-node sweep with a shared seed; wall-clock recorded, not asserted."""
    from dataclasses import replace

    if any(p < 2 for p in hyper_node_counts):
        raise ContractError("hyper-node counts must be >= 2")

    def run(p):
        out = train_and_score(dataset, split_spec, replace(config, n_hyper_nodes=int(p)))
        rep = out["report"]
        return {
            "n_hyper_nodes": int(p),
            "acc": rep.acc,
            "rmse": rep.rmse,
            "auc": rep.auc,
            "n_examples": rep.n_examples,
            "seconds": out["seconds"],
        }

    return _map_runs(run, list(hyper_node_counts))


ABLATION_ROWS = (
    ("full", "meta_multigraph"),
    ("disengcd_i", "meta_multigraph"),
    ("is_rec", "meta_multigraph"),
    ("ise_rc", "meta_multigraph"),
    ("isc_re", "meta_multigraph"),
    ("full", "naive"),
    ("full", "fixed_paths"),
    ("full", "meta_graph"),
)


def ablation_experiment(dataset, split_spec, config) -> list[dict]:
    """All graph-assignment variants plus the student-module mode variants."""
    from dataclasses import replace

    def run(row):
        variant, mode = row
        out = train_and_score(
            dataset, split_spec, replace(config, variant=variant, student_mode=mode)
        )
        rep = out["report"]
        return {
            "variant": variant,
            "student_mode": mode,
            "acc": rep.acc,
            "rmse": rep.rmse,
            "auc": rep.auc,
            "n_examples": rep.n_examples,
            "seconds": out["seconds"],
        }

    return _map_runs(run, list(ABLATION_ROWS))


def write_rows(rows: list[dict], csv_path, json_path):
    """Emit an experiment table as both CSV and JSON."""
    if rows:
        cols = list(rows[0])
        with open(csv_path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in rows:
                fh.write(",".join("" if row[c] is None else repr(row[c]) for c in cols) + "\n")
    else:
        open(csv_path, "w").close()
    with open(json_path, "w") as fh:
        json.dump(rows, fh, indent=1)
