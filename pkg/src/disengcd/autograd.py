"""Deterministic expression graphs over dense matrices with reverse-mode gradients.

A :class:`Graph` is built once (append-only, acyclic by construction) and is
immutable during evaluation.  Leaves are named inputs, a subset of which is
marked trainable; everything is float64 and strictly 2-D.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError, ShapeError
from .sparse import SparseAdjacency


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    shape: tuple[int, int]
    attrs: dict = field(default_factory=dict)


def _broadcast_shape(sa, sb, where):
    out = []
    for da, db in zip(sa, sb):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(f"{where}: cannot broadcast {sa} with {sb}")
    return tuple(out)


def _unbroadcast(grad, shape):
    """Sum `grad` back down to `shape` along broadcast axes."""
    for ax in (0, 1):
        if shape[ax] == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _row_softmax(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class Graph:
    """Append-only expression graph; node ids are list indices."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: dict[str, int] = {}
        self.trainable: set[str] = set()
        self.loss: int | None = None

    # -- construction ------------------------------------------------------

    def _push(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def _shape(self, i: int) -> tuple[int, int]:
        return self.nodes[i].shape

    def input(self, name: str, shape, trainable: bool = False) -> int:
        if name in self.leaves:
            raise ContractError(f"duplicate input name {name!r}")
        shape = (int(shape[0]), int(shape[1]))
        nid = self._push(Node("input", (), shape, {"name": name}))
        self.leaves[name] = nid
        if trainable:
            self.trainable.add(name)
        return nid

    def constant(self, value) -> int:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ContractError("constants must be 2-D")
        return self._push(Node("const", (), value.shape, {"value": value}))

    def matmul(self, a: int, b: int) -> int:
        sa, sb = self._shape(a), self._shape(b)
        if sa[1] != sb[0]:
            raise ShapeError(f"matmul: {sa} @ {sb}")
        return self._push(Node("matmul", (a, b), (sa[0], sb[1])))

    def spmm(self, adj: SparseAdjacency, x: int) -> int:
        sx = self._shape(x)
        if adj.n_cols != sx[0]:
            raise ShapeError(f"spmm: sparse {adj.shape} @ dense {sx}")
        return self._push(Node("spmm", (x,), (adj.n_rows, sx[1]), {"adj": adj}))

    def add(self, a: int, b: int) -> int:
        shape = _broadcast_shape(self._shape(a), self._shape(b), "add")
        return self._push(Node("add", (a, b), shape))

    def mul(self, a: int, b: int) -> int:
        shape = _broadcast_shape(self._shape(a), self._shape(b), "mul")
        return self._push(Node("mul", (a, b), shape))

    def transpose(self, x: int) -> int:
        s = self._shape(x)
        return self._push(Node("transpose", (x,), (s[1], s[0])))

    def concat_cols(self, *xs: int) -> int:
        if not xs:
            raise ContractError("concat_cols needs at least one operand")
        rows = self._shape(xs[0])[0]
        cols = 0
        for x in xs:
            s = self._shape(x)
            if s[0] != rows:
                raise ShapeError(f"concat_cols: row mismatch {s} vs {rows} rows")
            cols += s[1]
        return self._push(Node("concat_cols", tuple(xs), (rows, cols)))

    def row_softmax(self, x: int) -> int:
        return self._push(Node("row_softmax", (x,), self._shape(x)))

    def sigmoid(self, x: int) -> int:
        return self._push(Node("sigmoid", (x,), self._shape(x)))

    def scale(self, x: int, c: float) -> int:
        return self._push(Node("scale", (x,), self._shape(x), {"c": float(c)}))

    def row_sum(self, x: int) -> int:
        return self._push(Node("row_sum", (x,), (self._shape(x)[0], 1)))

    def col_sum(self, x: int) -> int:
        return self._push(Node("col_sum", (x,), (1, self._shape(x)[1])))

    def mean(self, x: int) -> int:
        return self._push(Node("mean", (x,), (1, 1)))

    def masked_select(self, x: int, mask) -> int:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self._shape(x):
            raise ShapeError(f"masked_select: mask {mask.shape} vs value {self._shape(x)}")
        k = int(mask.sum())
        if k == 0:
            raise ContractError("masked_select: empty mask")
        return self._push(Node("masked_select", (x,), (1, k), {"mask": mask}))

    def log(self, x: int) -> int:
        return self._push(Node("log", (x,), self._shape(x)))

    def clip(self, x: int, lo: float, hi: float) -> int:
        return self._push(
            Node("clip", (x,), self._shape(x), {"lo": float(lo), "hi": float(hi)})
        )

    def mark_loss(self, x: int) -> int:
        if self._shape(x) != (1, 1):
            raise ContractError(f"loss must be scalar (1, 1), got {self._shape(x)}")
        self.loss = x
        return x

    def set_label(self, x: int, text: str) -> int:
        """Attach a human-readable tag used in numeric error messages."""
        self.nodes[x].attrs["label"] = text
        return x


@np.errstate(invalid="ignore", over="ignore", divide="ignore")
def evaluate(graph: Graph, bindings: dict[str, np.ndarray], check_finite: bool = True):
    """Forward pass; returns one value per node, indexed by node id.

    Non-finite intermediates surface as NumericError (numpy warnings are
    suppressed in favor of that check).
    """
    values: list[np.ndarray | None] = [None] * len(graph.nodes)
    for nid, node in enumerate(graph.nodes):
        op = node.op
        if op == "input":
            name = node.attrs["name"]
            if name not in bindings:
                raise ContractError(f"input {name!r} not bound")
            v = np.asarray(bindings[name], dtype=np.float64)
            if v.shape != node.shape:
                raise ShapeError(
                    f"node {nid} ({name!r}): bound shape {v.shape}, declared {node.shape}"
                )
        elif op == "const":
            v = node.attrs["value"]
        else:
            args = [values[i] for i in node.inputs]
            if op == "matmul":
                v = args[0] @ args[1]
            elif op == "spmm":
                v = node.attrs["adj"].matmul(args[0])
            elif op == "add":
                v = args[0] + args[1]
            elif op == "mul":
                v = args[0] * args[1]
            elif op == "transpose":
                v = args[0].T
            elif op == "concat_cols":
                v = np.concatenate(args, axis=1)
            elif op == "row_softmax":
                v = _row_softmax(args[0])
            elif op == "sigmoid":
                v = 1.0 / (1.0 + np.exp(-args[0]))
            elif op == "scale":
                v = args[0] * node.attrs["c"]
            elif op == "row_sum":
                v = args[0].sum(axis=1, keepdims=True)
            elif op == "col_sum":
                v = args[0].sum(axis=0, keepdims=True)
            elif op == "mean":
                v = np.array([[args[0].mean()]])
            elif op == "masked_select":
                v = args[0][node.attrs["mask"]].reshape(1, -1)
            elif op == "log":
                v = np.log(args[0])
            elif op == "clip":
                v = np.clip(args[0], node.attrs["lo"], node.attrs["hi"])
            else:
                raise ContractError(f"unknown op {op!r}")
        if check_finite and not np.all(np.isfinite(v)):
            label = node.attrs.get("label")
            suffix = f" [{label}]" if label else ""
            raise NumericError(f"non-finite value at node {nid} (op={op}){suffix}")
        values[nid] = v
    return values


def gradients(graph: Graph, values) -> dict[str, np.ndarray]:
    """Reverse pass from the marked loss; one gradient per trainable leaf."""
    if graph.loss is None:
        raise ContractError("graph has no loss node")
    if graph.nodes[graph.loss].shape != (1, 1):
        raise ContractError("loss node is not scalar")

    adjoint: list[np.ndarray | None] = [None] * len(graph.nodes)
    adjoint[graph.loss] = np.ones((1, 1))

    def acc(i, g):
        adjoint[i] = g if adjoint[i] is None else adjoint[i] + g

    for nid in range(len(graph.nodes) - 1, -1, -1):
        g = adjoint[nid]
        if g is None:
            continue
        node = graph.nodes[nid]
        op = node.op
        if op in ("input", "const"):
            continue
        args = [values[i] for i in node.inputs]
        if op == "matmul":
            acc(node.inputs[0], g @ args[1].T)
            acc(node.inputs[1], args[0].T @ g)
        elif op == "spmm":
            acc(node.inputs[0], node.attrs["adj"].t_matmul(g))
        elif op == "add":
            acc(node.inputs[0], _unbroadcast(g, args[0].shape))
            acc(node.inputs[1], _unbroadcast(g, args[1].shape))
        elif op == "mul":
            acc(node.inputs[0], _unbroadcast(g * args[1], args[0].shape))
            acc(node.inputs[1], _unbroadcast(g * args[0], args[1].shape))
        elif op == "transpose":
            acc(node.inputs[0], g.T)
        elif op == "concat_cols":
            ofs = 0
            for i in node.inputs:
                w = values[i].shape[1]
                acc(i, g[:, ofs : ofs + w])
                ofs += w
        elif op == "row_softmax":
            y = values[nid]
            acc(node.inputs[0], y * (g - (g * y).sum(axis=1, keepdims=True)))
        elif op == "sigmoid":
            y = values[nid]
            acc(node.inputs[0], g * y * (1.0 - y))
        elif op == "scale":
            acc(node.inputs[0], g * node.attrs["c"])
        elif op == "row_sum":
            acc(node.inputs[0], np.broadcast_to(g, args[0].shape).copy())
        elif op == "col_sum":
            acc(node.inputs[0], np.broadcast_to(g, args[0].shape).copy())
        elif op == "mean":
            acc(node.inputs[0], np.full(args[0].shape, g[0, 0] / args[0].size))
        elif op == "masked_select":
            dx = np.zeros(args[0].shape)
            dx[node.attrs["mask"]] = g.ravel()
            acc(node.inputs[0], dx)
        elif op == "log":
            acc(node.inputs[0], g / args[0])
        elif op == "clip":
            lo, hi = node.attrs["lo"], node.attrs["hi"]
            inside = (args[0] >= lo) & (args[0] <= hi)
            acc(node.inputs[0], g * inside)
        else:
            raise ContractError(f"unknown op {op!r}")

    out = {}
    for name in graph.trainable:
        nid = graph.leaves[name]
        g = adjoint[nid]
        out[name] = np.zeros(graph.nodes[nid].shape) if g is None else g
    return out


def loss_value(graph: Graph, bindings, check_finite: bool = True) -> float:
    if graph.loss is None:
        raise ContractError("graph has no loss node")
    return float(evaluate(graph, bindings, check_finite)[graph.loss][0, 0])


def finite_difference_check(
    graph: Graph,
    point: dict[str, np.ndarray],
    eps: float = 1e-5,
    max_entries_per_param: int = 64,
    seed: int = 0,
) -> float:
    """Max relative disagreement between analytic and central-difference gradients.

    Relative error per sampled entry is |a - n| / max(1, |a|, |n|).
    """
    if eps <= 0:
        raise ContractError("eps must be > 0")
    values = evaluate(graph, point)
    analytic = gradients(graph, values)
    rng = np.random.default_rng(seed)
    probe = {k: np.array(v, dtype=np.float64) for k, v in point.items()}

    worst = 0.0
    for name in sorted(graph.trainable):
        arr = probe[name]
        flat_idx = np.arange(arr.size)
        if arr.size > max_entries_per_param:
            flat_idx = rng.choice(arr.size, size=max_entries_per_param, replace=False)
        for fi in flat_idx:
            i, j = np.unravel_index(fi, arr.shape)
            keep = arr[i, j]
            arr[i, j] = keep + eps
            up = loss_value(graph, probe)
            arr[i, j] = keep - eps
            down = loss_value(graph, probe)
            arr[i, j] = keep
            numeric = (up - down) / (2.0 * eps)
            a = analytic[name][i, j]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
