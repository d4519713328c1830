"""Model assembly and first-order bilevel training.

Each step alternates: an Adam update of the model weights on a training
batch with the path weights frozen, then an Adam update of the path weights
on a validation batch with the model weights frozen.  Routing is re-resolved
from the current path weights at every graph build, and the pruning masks
are constants within one forward/backward pass.
"""

from __future__ import annotations

import copy
import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diagnosis, gat, student_meta
from .autograd import Graph, evaluate, gradients
from .data import Dataset, SplitResult
from .errors import CheckpointError, ConfigError, NumericError, ShapeError
from .evaluation import metrics
from .graphs import (
    build_interaction_graph,
    disentangle_dependency_graph,
    disentangle_relation_graph,
)
from .optim import AdamState, adam_update

CHECKPOINT_VERSION = 1

# Table-4-style presets: graph source per representation.
VARIANT_ASSIGNMENTS = {
    "full": ("G_I", "G_R", "G_D"),
    "disengcd_i": ("G_I", "G_I", "G_I"),
    "is_rec": ("G_I", "G_R", "G_R"),
    "ise_rc": ("G_I", "G_I", "G_R"),
    "isc_re": ("G_I", "G_R", "G_I"),
}

STUDENT_MODES = ("meta_multigraph", "meta_graph", "fixed_paths", "naive")


@dataclass
class VariantSpec:
    student: str
    exercise: str
    concept: str
    student_mode: str = "meta_multigraph"

    def validate(self):
        if self.student not in ("G_I", "naive"):
            raise ConfigError(f"student representation cannot be learned on {self.student!r}")
        if self.exercise not in ("G_R", "G_I"):
            raise ConfigError(f"exercise representation cannot be learned on {self.exercise!r}")
        if self.concept not in ("G_D", "G_R", "G_I", "naive"):
            raise ConfigError(f"concept representation cannot be learned on {self.concept!r}")
        if self.student_mode not in STUDENT_MODES:
            raise ConfigError(f"unknown student-module mode {self.student_mode!r}")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    n_hyper_nodes: int = 5
    gat_layers: int = 2
    lam: float = 0.8
    d: int | None = None  # None: use the concept count
    variant: str = "full"
    student_mode: str = "meta_multigraph"
    fixed_paths: dict | None = None
    noise_ratio: float = 0.0
    delete_fraction: float = 0.0

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.variant not in VARIANT_ASSIGNMENTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; choose from {sorted(VARIANT_ASSIGNMENTS)}"
            )
        if self.student_mode not in STUDENT_MODES:
            raise ConfigError(f"unknown student-module mode {self.student_mode!r}")
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"lambda must be in [0,1], got {self.lam}")
        if self.n_hyper_nodes < 2:
            raise ConfigError("n_hyper_nodes must be >= 2")
        if self.gat_layers < 0:
            raise ConfigError("gat_layers must be >= 0")

    def resolve_d(self, n_concepts: int) -> int:
        d = self.d if self.d is not None else n_concepts
        if d != n_concepts:
            raise ConfigError(
                f"the diagnostic head needs d == number of concepts "
                f"({n_concepts}); configured d={d}"
            )
        return d

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train-config keys: {sorted(unknown)}")
        if data.get("fixed_paths") is not None:
            data = dict(data)
            data["fixed_paths"] = {
                tuple(int(x) for x in k.split("-")) if isinstance(k, str) else tuple(k): v
                for k, v in data["fixed_paths"].items()
            }
        cfg = cls(**data)
        cfg.validate()
        return cfg


def apply_variant(config: TrainConfig) -> VariantSpec:
    """Resolve the named variant plus student mode into a wiring spec."""
    config.validate()
    student, exercise, concept = VARIANT_ASSIGNMENTS[config.variant]
    if config.student_mode == "naive":
        student = "naive"
    spec = VariantSpec(student, exercise, concept, config.student_mode)
    spec.validate()
    return spec


def default_fixed_paths(n_hyper_nodes: int) -> dict:
    """Predefined chain structure: hop along consecutive hyper-nodes mixing
    exercise-to-student messages with the identity; skip edges are zero."""
    out = {}
    for u, v in student_meta._edges(n_hyper_nodes):
        out[(u, v)] = ["A_es", "I"] if v == u + 1 else ["zero"]
    return out


class DisenModel:
    """All parameters plus the graph wiring for one variant."""

    def __init__(self, train_ds: Dataset, config: TrainConfig, params=None):
        config.validate()
        self.config = config
        self.variant = apply_variant(config)
        self.dataset = train_ds
        self.q = train_ds.q_matrix
        self.d = config.resolve_d(train_ds.n_concepts)
        self.gi = build_interaction_graph(train_ds)
        self.gr = disentangle_relation_graph(self.gi)
        self.gd = disentangle_dependency_graph(self.gr)

        v = self.variant
        self.needs_multigraph = (
            (v.student == "G_I" and v.student_mode != "naive")
            or v.exercise == "G_I"
            or v.concept == "G_I"
        )
        self.needs_relation_gat = v.exercise == "G_R" or v.concept == "G_R"
        self.needs_dependency_gat = v.concept == "G_D"

        if params is None:
            params = self._init_params()
        self.params = params
        self.opt_omega = AdamState(lr=config.lr)
        self.opt_alpha = AdamState(lr=config.lr)

    def _init_params(self) -> dict:
        rng = np.random.default_rng(self.config.seed)
        bound = 1.0 / np.sqrt(self.d)
        p: dict[str, np.ndarray] = {}
        n, m, k = self.gi.n_students, self.gi.n_exercises, self.gi.n_concepts
        p["student.w_s"] = rng.uniform(-bound, bound, (n, self.d))
        if self.needs_multigraph:
            p["student.w_e"] = rng.uniform(-bound, bound, (m, self.d))
            p["student.w_c"] = rng.uniform(-bound, bound, (k, self.d))
            p["alpha"] = student_meta.MetaMultigraph.create(
                self.config.n_hyper_nodes, self.config.lam, self.config.seed
            ).alpha
        if self.needs_relation_gat:
            p.update(gat.init_exercise_params(self.gr, self.d, self.config.gat_layers, rng))
        if self.needs_dependency_gat:
            p.update(gat.init_concept_params(self.gd, self.d, self.config.gat_layers, rng))
        elif self.variant.concept == "naive":
            p["con.w_c"] = rng.uniform(-bound, bound, (k, self.d))
        p.update(diagnosis.init_diagnosis_params(self.d, rng))
        return p

    # -- wiring ---------------------------------------------------------------

    @property
    def metagraph(self) -> student_meta.MetaMultigraph | None:
        if "alpha" not in self.params:
            return None
        return student_meta.MetaMultigraph(
            self.config.n_hyper_nodes, self.config.lam, self.params["alpha"]
        )

    def _structure(self):
        mode = self.variant.student_mode
        if mode == "naive":
            mode = "meta_multigraph"  # blocks may still be needed for G_I reps
        fixed = self.config.fixed_paths
        if mode == "fixed_paths" and fixed is None:
            fixed = default_fixed_paths(self.config.n_hyper_nodes)
        return student_meta.resolve_structure(self.metagraph, mode, fixed)

    def build_representations(self, g: Graph) -> tuple[int, int, int]:
        """Wire S-bar, E-bar, C-bar into `g`; returns their node ids."""
        v = self.variant
        blocks = None
        if self.needs_multigraph:
            blocks = student_meta.build_student_forward(
                g, self.gi, self.metagraph, self._structure(), self.d
            )
        gat_e = gat_c = None
        if self.needs_relation_gat:
            gat_e, gat_c = gat.build_exercise_forward(
                g, self.gr, self.config.gat_layers, self.d
            )

        if v.student == "naive" or v.student_mode == "naive":
            # the multigraph (when present) already declared this leaf
            if "student.w_s" in g.leaves:
                s_bar = g.leaves["student.w_s"]
            else:
                s_bar = g.input("student.w_s", (self.gi.n_students, self.d), trainable=True)
        else:
            s_bar = blocks["s"]

        e_bar = gat_e if v.exercise == "G_R" else blocks["e"]

        if v.concept == "G_R":
            c_bar = gat_c
        elif v.concept == "G_I":
            c_bar = blocks["c"]
        else:  # G_D (with naive fallback) or naive
            layers = self.config.gat_layers if v.concept == "G_D" else 0
            c_bar = gat.build_concept_forward(g, self.gd, layers, self.d)
        return s_bar, e_bar, c_bar

    def _batch_graph(self, students, exercises):
        g = Graph()
        s_bar, e_bar, c_bar = self.build_representations(g)
        r_hat = diagnosis.build_predict(
            g, s_bar, e_bar, c_bar, students, exercises, self.q, self.d
        )
        return g, r_hat

    def loss_graph(self, batch: np.ndarray):
        g, r_hat = self._batch_graph(batch[:, 0], batch[:, 1])
        diagnosis.build_bce_loss(g, r_hat, batch[:, 2].astype(np.float64))
        return g

    def predict_probs(self, logs: np.ndarray, chunk: int = 32768) -> np.ndarray:
        out = []
        for lo in range(0, logs.shape[0], chunk):
            part = logs[lo : lo + chunk]
            g, r_hat = self._batch_graph(part[:, 0], part[:, 1])
            out.append(evaluate(g, self.params)[r_hat].ravel())
        return np.concatenate(out) if out else np.zeros(0)

    def representations(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        g = Graph()
        s_bar, e_bar, c_bar = self.build_representations(g)
        values = evaluate(g, self.params)
        return values[s_bar], values[e_bar], values[c_bar]

    def mastery(self, student_index: int):
        s_all, e_all, c_all = self.representations()
        return diagnosis.mastery_report(
            s_all[student_index], e_all, c_all, self.q, self.params
        )

    def export_metagraph(self) -> dict | None:
        mg = self.metagraph
        return None if mg is None else student_meta.export_structure(mg)


# -- training loop -------------------------------------------------------------


def prepare_splits(dataset: Dataset, split_spec, config: TrainConfig) -> SplitResult:
    """Split, then apply the configured deletion/noise to train (and val for
    noise); the test split is never perturbed.  Perturbation seeds derive
    from the split seed so a (seed, config, data) triple fixes everything."""
    from .data import delete_records, inject_noise, split

    parts = split(dataset, split_spec)
    train_ds, val_ds = parts.train, parts.val
    warnings = list(parts.warnings)
    if config.delete_fraction > 0.0:
        train_ds = delete_records(train_ds, config.delete_fraction, split_spec.seed + 303)
    if config.noise_ratio > 0.0:
        train_ds, w1 = inject_noise(train_ds, config.noise_ratio, split_spec.seed + 101)
        val_ds, w2 = inject_noise(val_ds, config.noise_ratio, split_spec.seed + 202)
        warnings += w1 + w2
    return SplitResult(train_ds, val_ds, parts.test, warnings)


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,train_loss,val_loss,val_acc,val_rmse,val_auc\n")
        for r in self.rows:
            auc = "" if r["val_auc"] is None else repr(r["val_auc"])
            buf.write(
                f'{r["epoch"]},{r["train_loss"]!r},{r["val_loss"]!r},'
                f'{r["val_acc"]!r},{r["val_rmse"]!r},{auc}\n'
            )
        return buf.getvalue()


def _epoch_metrics(model: DisenModel, ds: Dataset):
    probs = model.predict_probs(ds.logs)
    labels = ds.logs[:, 2]
    rep = metrics(probs, labels)
    return diagnosis.bce_loss(probs, labels), rep


def train_bilevel(splits: SplitResult, config: TrainConfig):
    """Alternating first-order bilevel optimization; returns (model, history).

    The returned model carries the parameters (and optimizer states, exposed
    as model.opt_omega / model.opt_alpha) of the epoch with the best
    validation AUC, not the last one.
    """
    config.validate()
    train_ds, val_ds = splits.train, splits.val
    model = DisenModel(train_ds, config)
    opt_omega, opt_alpha = model.opt_omega, model.opt_alpha
    rng = np.random.default_rng(config.seed + 1)

    history = History()
    best = {
        "auc": -np.inf,
        "params": copy.deepcopy(model.params),
        "omega": copy.deepcopy(opt_omega),
        "alpha": copy.deepcopy(opt_alpha),
        "epoch": -1,
    }
    has_alpha = "alpha" in model.params
    bs = config.batch_size
    n_train, n_val = train_ds.n_logs, val_ds.n_logs
    stale = 0

    for epoch in range(config.max_epochs):
        order = rng.permutation(n_train)
        val_order = rng.permutation(n_val) if n_val else np.zeros(0, dtype=np.int64)
        val_pos = 0
        train_loss_sum = 0.0
        try:
            for lo in range(0, n_train, bs):
                batch = train_ds.logs[order[lo : lo + bs]]
                g = model.loss_graph(batch)
                values = evaluate(g, model.params)
                grads = gradients(g, values)
                grads.pop("alpha", None)
                adam_update(model.params, grads, opt_omega)
                train_loss_sum += float(values[g.loss][0, 0]) * batch.shape[0]

                if has_alpha and n_val:
                    take = val_order[val_pos : val_pos + bs]
                    val_pos += bs
                    if val_pos >= n_val:
                        val_pos = 0
                        val_order = rng.permutation(n_val)
                    vbatch = val_ds.logs[take]
                    g = model.loss_graph(vbatch)
                    values = evaluate(g, model.params)
                    a_grad = gradients(g, values)["alpha"]
                    adam_update(model.params, {"alpha": a_grad}, opt_alpha)
        except NumericError:
            history.diverged = True
            break

        val_loss, rep = _epoch_metrics(model, val_ds)
        history.rows.append(
            {
                "epoch": epoch,
                "train_loss": train_loss_sum / max(1, n_train),
                "val_loss": val_loss,
                "val_acc": rep.acc,
                "val_rmse": rep.rmse,
                "val_auc": rep.auc,
            }
        )
        score = rep.auc if rep.auc is not None else 0.5
        if score > best["auc"]:
            best = {
                "auc": score,
                "params": copy.deepcopy(model.params),
                "omega": copy.deepcopy(opt_omega),
                "alpha": copy.deepcopy(opt_alpha),
                "epoch": epoch,
            }
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break

    if best["epoch"] >= 0 or history.diverged:
        model.params = best["params"]
        opt_omega, opt_alpha = best["omega"], best["alpha"]
    history.best_epoch = best["epoch"]
    model.opt_omega, model.opt_alpha = opt_omega, opt_alpha
    return model, history


# -- checkpoints ----------------------------------------------------------------


def _config_key(k: tuple[int, int]) -> str:
    return f"{k[0]}-{k[1]}"


def save_checkpoint(
    path,
    model: DisenModel,
    opt_omega: AdamState,
    opt_alpha: AdamState,
    run_config: dict | None = None,
    epoch: int = -1,
    rng_state: dict | None = None,
):
    cfg = model.config.to_dict()
    if cfg.get("fixed_paths"):
        cfg["fixed_paths"] = {_config_key(k): v for k, v in cfg["fixed_paths"].items()}
    arrays = []

    def declare(prefix, mapping):
        for name in sorted(mapping):
            arrays.append([f"{prefix}{name}", list(mapping[name].shape)])

    declare("", model.params)
    declare("adam_w.m.", opt_omega.m)
    declare("adam_w.v.", opt_omega.v)
    declare("adam_a.m.", opt_alpha.m)
    declare("adam_a.v.", opt_alpha.v)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "train_config": cfg,
        "run_config": run_config or {},
        "epoch": epoch,
        "dims": {
            "n_students": model.gi.n_students,
            "n_exercises": model.gi.n_exercises,
            "n_concepts": model.gi.n_concepts,
            "d": model.d,
        },
        "adam": {
            "omega": {"step": opt_omega.step, "lr": opt_omega.lr},
            "alpha": {"step": opt_alpha.step, "lr": opt_alpha.lr},
        },
        "rng_state": rng_state or {},
        "arrays": arrays,
    }
    blob = json.dumps(header).encode()
    stores = {}
    stores.update(model.params)
    stores.update({f"adam_w.m.{k}": v for k, v in opt_omega.m.items()})
    stores.update({f"adam_w.v.{k}": v for k, v in opt_omega.v.items()})
    stores.update({f"adam_a.m.{k}": v for k, v in opt_alpha.m.items()})
    stores.update({f"adam_a.v.{k}": v for k, v in opt_alpha.v.items()})
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, _ in arrays:
            fh.write(np.ascontiguousarray(stores[name], dtype="<f8").tobytes())


@dataclass
class Checkpoint:
    train_config: TrainConfig
    run_config: dict
    epoch: int
    dims: dict
    params: dict
    opt_omega: AdamState
    opt_alpha: AdamState
    rng_state: dict


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 8:
        raise CheckpointError(f"checkpoint {path} is truncated (no header length)")
    (hlen,) = struct.unpack("<Q", raw[:8])
    if len(raw) < 8 + hlen:
        raise CheckpointError(f"checkpoint {path} is truncated inside the header")
    try:
        header = json.loads(raw[8 : 8 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint {path}: bad header: {exc}") from exc
    version = header.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} != supported {CHECKPOINT_VERSION}"
        )
    ofs = 8 + hlen
    stores = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape))
        end = ofs + 8 * count
        if end > len(raw):
            raise CheckpointError(f"checkpoint {path} is truncated in array {name!r}")
        stores[name] = (
            np.frombuffer(raw[ofs:end], dtype="<f8").astype(np.float64).reshape(shape)
        )
        ofs = end
    if ofs != len(raw):
        raise CheckpointError(f"checkpoint {path} has {len(raw) - ofs} trailing bytes")

    params, om_m, om_v, al_m, al_v = {}, {}, {}, {}, {}
    for name, arr in stores.items():
        if name.startswith("adam_w.m."):
            om_m[name[9:]] = arr
        elif name.startswith("adam_w.v."):
            om_v[name[9:]] = arr
        elif name.startswith("adam_a.m."):
            al_m[name[9:]] = arr
        elif name.startswith("adam_a.v."):
            al_v[name[9:]] = arr
        else:
            params[name] = arr
    adam = header["adam"]
    opt_w = AdamState(lr=adam["omega"]["lr"], step=adam["omega"]["step"], m=om_m, v=om_v)
    opt_a = AdamState(lr=adam["alpha"]["lr"], step=adam["alpha"]["step"], m=al_m, v=al_v)
    return Checkpoint(
        TrainConfig.from_dict(header["train_config"]),
        header.get("run_config", {}),
        header.get("epoch", -1),
        header["dims"],
        params,
        opt_w,
        opt_a,
        header.get("rng_state", {}),
    )


def model_from_checkpoint(ckpt: Checkpoint, train_ds: Dataset) -> DisenModel:
    dims = ckpt.dims
    for key, have in (
        ("n_students", train_ds.n_students),
        ("n_exercises", train_ds.n_exercises),
        ("n_concepts", train_ds.n_concepts),
    ):
        if dims[key] != have:
            raise ShapeError(
                f"checkpoint field {key!r} is {dims[key]}, dataset has {have}"
            )
    model = DisenModel(train_ds, ckpt.train_config, params=ckpt.params)
    model.opt_omega, model.opt_alpha = ckpt.opt_omega, ckpt.opt_alpha
    return model
