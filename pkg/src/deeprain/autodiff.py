"""Reverse-mode automatic differentiation over the tensor primitives.

A ``Tape`` is a define-by-run graph: node values are computed eagerly as
operations are recorded, ``forward`` validates and returns the terminal
scalar loss, and ``backward`` walks the arena in reverse creation order,
accumulating gradients at fan-out points by in-order addition over consumer
creation order so reruns are bitwise identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T

__all__ = ["GraphError", "Node", "Tape", "grad_check", "GradCheckReport"]


class GraphError(RuntimeError):
    """Misuse of the tape protocol (non-scalar loss, backward before forward)."""


class Node:
    """One value in the graph: payload, provenance, and its backward rule."""

    __slots__ = ("value", "op", "parents", "vjp", "needs_grad", "index", "grad", "_pending")

    def __init__(self, value, op, parents, vjp, needs_grad, index):
        self.value = value
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.needs_grad = needs_grad
        self.index = index
        self.grad = None
        self._pending = []

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Node arena plus the registry of named parameter leaves."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}
        self._forward_done = False

    # -- leaves ----------------------------------------------------------

    def param(self, name: str, value: np.ndarray) -> Node:
        if name in self.params:
            raise GraphError(f"duplicate parameter name {name!r}")
        node = self._record(T.as_tensor(value), "param", (), None, needs_grad=True)
        self.params[name] = node
        return node

    def const(self, value: np.ndarray) -> Node:
        return self._record(T.as_tensor(value), "const", (), None, needs_grad=False)

    def _record(self, value, op, parents, vjp, needs_grad) -> Node:
        node = Node(value, op, parents, vjp, needs_grad, len(self.nodes))
        self.nodes.append(node)
        self._forward_done = False
        return node

    def _unary(self, op, x: Node, value, vjp):
        return self._record(value, op, (x,), vjp, x.needs_grad)

    # -- primitives ------------------------------------------------------

    def conv2d(self, x: Node, kernels: Node, bias: Node | None = None) -> Node:
        out, cols = T._conv2d_parts(x.value, kernels.value)
        c, h, w = x.value.shape
        o, _, kh, kw = kernels.value.shape
        if bias is not None:
            if bias.value.shape != (o,):
                raise T.ShapeError(
                    "conv2d", "bias", f"expected shape ({o},), got {bias.value.shape}"
                )
            out = out + bias.value[:, None, None]
        kmat = kernels.value.reshape(o, c * kh * kw)
        ph, pw = kh // 2, kw // 2

        def vjp(g):
            gm = g.reshape(o, h * w)
            gx = gk = gb = None
            if x.needs_grad:
                dcols = (kmat.T @ gm).reshape(c, kh, kw, h, w)
                dpad = np.zeros((c, h + 2 * ph, w + 2 * pw))
                for dy in range(kh):
                    for dx in range(kw):
                        dpad[:, dy : dy + h, dx : dx + w] += dcols[:, dy, dx]
                gx = dpad[:, ph : ph + h, pw : pw + w]
            if kernels.needs_grad:
                gk = (gm @ cols.T).reshape(o, c, kh, kw)
            if bias is not None and bias.needs_grad:
                gb = g.sum(axis=(1, 2))
            return (gx, gk) if bias is None else (gx, gk, gb)

        parents = (x, kernels) if bias is None else (x, kernels, bias)
        needs = any(p.needs_grad for p in parents)
        return self._record(out, "conv2d", parents, vjp, needs)

    def affine(self, x: Node, weight: Node, bias: Node | None = None) -> Node:
        if bias is not None:
            out = T.affine(x.value, weight.value, bias.value)
        else:
            if x.value.shape[0] != weight.value.shape[1]:
                raise T.ShapeError(
                    "affine",
                    "inner extent",
                    f"input has {x.value.shape[0]}, weight expects {weight.value.shape[1]}",
                )
            out = weight.value @ x.value

        def vjp(g):
            gx = weight.value.T @ g if x.needs_grad else None
            gw = np.outer(g, x.value) if weight.needs_grad else None
            if bias is None:
                return gx, gw
            return gx, gw, (g if bias.needs_grad else None)

        parents = (x, weight) if bias is None else (x, weight, bias)
        needs = any(p.needs_grad for p in parents)
        return self._record(out, "affine", parents, vjp, needs)

    def concat0(self, items: list[Node]) -> Node:
        """Concatenate along axis 0 (stacks per-gate weights for fused steps)."""
        if not items:
            raise GraphError("concat0: empty input")
        out = np.concatenate([it.value for it in items], axis=0)
        sizes = [it.value.shape[0] for it in items]
        offsets = np.cumsum([0] + sizes)

        def vjp(g):
            return tuple(
                g[offsets[i] : offsets[i + 1]] if it.needs_grad else None
                for i, it in enumerate(items)
            )

        needs = any(it.needs_grad for it in items)
        return self._record(out, "concat0", tuple(items), vjp, needs)

    def slice0(self, x: Node, start: int, stop: int) -> Node:
        """Contiguous slice along axis 0; the inverse of concat0 for fan-out."""
        out = x.value[start:stop].copy()

        def vjp(g):
            gx = np.zeros_like(x.value)
            gx[start:stop] = g
            return (gx,)

        return self._unary("slice0", x, out, vjp)

    def sigmoid(self, x: Node) -> Node:
        out = T.map_sigmoid(x.value)
        return self._unary("sigmoid", x, out, lambda g: (g * out * (1.0 - out),))

    def tanh(self, x: Node) -> Node:
        out = T.map_tanh(x.value)
        return self._unary("tanh", x, out, lambda g: (g * (1.0 - out * out),))

    def mul(self, a: Node, b: Node) -> Node:
        out = T.hadamard(a.value, b.value)

        def vjp(g):
            ga = g * b.value if a.needs_grad else None
            gb = g * a.value if b.needs_grad else None
            return ga, gb

        return self._record(out, "mul", (a, b), vjp, a.needs_grad or b.needs_grad)

    def add(self, a: Node, b: Node) -> Node:
        out = T.add(a.value, b.value)
        return self._record(
            out, "add", (a, b), lambda g: (g, g), a.needs_grad or b.needs_grad
        )

    def abs(self, x: Node) -> Node:
        out = np.abs(x.value)
        return self._unary("abs", x, out, lambda g: (g * np.sign(x.value),))

    def scale(self, x: Node, c: float) -> Node:
        out = x.value * c
        return self._unary("scale", x, out, lambda g: (g * c,))

    def global_avg_pool(self, x: Node) -> Node:
        out = T.global_avg_pool(x.value)
        _, h, w = x.value.shape

        def vjp(g):
            return (np.broadcast_to(g[:, None, None] / (h * w), x.value.shape),)

        return self._unary("global_avg_pool", x, out, vjp)

    def avg_pool2d(self, x: Node, factor: int) -> Node:
        out = T.avg_pool2d(x.value, factor)
        c, h, w = x.value.shape

        def vjp(g):
            if factor == 1:
                return (g,)
            ys = np.arange(0, h, factor)
            xs = np.arange(0, w, factor)
            hc = np.minimum(ys + factor, h) - ys
            wc = np.minimum(xs + factor, w) - xs
            scaled = g / (hc[:, None] * wc[None, :])
            up = np.repeat(np.repeat(scaled, factor, axis=1), factor, axis=2)
            return (up[:, :h, :w],)

        return self._unary("avg_pool2d", x, out, vjp)

    def squared_error(self, pred: Node, target: Node) -> Node:
        """Sum of elementwise squared differences, as a [1] scalar node."""
        if pred.value.shape != target.value.shape:
            raise T.ShapeError(
                "squared_error", "shape", f"{pred.value.shape} vs {target.value.shape}"
            )
        diff = pred.value - target.value
        out = np.array([float(np.dot(diff.ravel(), diff.ravel()))])

        def vjp(g):
            gp = 2.0 * g[0] * diff if pred.needs_grad else None
            gt = -2.0 * g[0] * diff if target.needs_grad else None
            return gp, gt

        needs = pred.needs_grad or target.needs_grad
        return self._record(out, "squared_error", (pred, target), vjp, needs)

    def mean_scalars(self, items: list[Node]) -> Node:
        """Mean of [1] scalar nodes; the batch-loss reduction."""
        if not items:
            raise GraphError("mean_scalars: empty input")
        n = len(items)
        out = np.array([math.fsum(float(it.value[0]) for it in items) / n])

        def vjp(g):
            share = g / n
            return tuple(share if it.needs_grad else None for it in items)

        needs = any(it.needs_grad for it in items)
        return self._record(out, "mean_scalars", tuple(items), vjp, needs)

    # -- evaluation ------------------------------------------------------

    def forward(self) -> float:
        """Validate the terminal node and return the scalar loss value."""
        if not self.nodes:
            raise GraphError("forward on an empty tape")
        loss = self.nodes[-1]
        if loss.value.shape != (1,):
            raise GraphError(
                f"terminal node must have shape (1,), got {loss.value.shape}"
            )
        self._forward_done = True
        return float(loss.value[0])

    def backward(self) -> dict[str, np.ndarray]:
        """Gradient of the terminal loss for every registered parameter."""
        if not self._forward_done:
            raise GraphError("backward called before forward")
        for node in self.nodes:
            node.grad = None
            node._pending = []
        loss = self.nodes[-1]
        loss._pending.append(np.ones(1))
        for node in reversed(self.nodes):
            if not node._pending or not node.needs_grad:
                continue
            # Contributions arrived in reverse consumer order; sum them in
            # creation order for a reproducible accumulation sequence.
            acc = node._pending[-1]
            for contrib in reversed(node._pending[:-1]):
                acc = acc + contrib
            node.grad = acc
            if node.vjp is None:
                continue
            for parent, contrib in zip(node.parents, node.vjp(node.grad)):
                if contrib is not None and parent.needs_grad:
                    parent._pending.append(contrib)
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.value))
            for name, p in self.params.items()
        }


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    ok: bool
    unreliable: bool = False
    note: str = ""


@dataclass
class GradCheckReport:
    step: float
    tol: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.ok for e in self.entries)

    def render(self) -> str:
        lines = []
        for e in self.entries:
            status = "PASS" if e.ok else "FAIL"
            extra = ""
            if e.unreliable:
                extra += " [unreliable: one-sided slopes disagree]"
            if e.note:
                extra += f" ({e.note})"
            lines.append(f"{e.name}: max_rel_err={e.max_rel_err:.3e} {status}{extra}")
        return "\n".join(lines)


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(loss_fn, params, step: float = 1e-3, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` maps a name->array dict to a Tape whose terminal node is the
    scalar loss. Every element of every parameter is probed at +-step; the
    relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    Elements whose one-sided difference quotients disagree strongly are
    flagged unreliable (a symptom of probing a non-smooth point).
    """
    if step <= 0:
        raise ValueError(f"grad_check: step must be > 0, got {step}")
    tape = loss_fn(params)
    base = tape.forward()
    grads = tape.backward()
    report = GradCheckReport(step=step, tol=tol)
    for name, arr in params.items():
        analytic = grads[name]
        worst = 0.0
        unreliable = False
        note = ""
        ok = True
        for idx in np.ndindex(arr.shape):
            plus = arr.copy()
            plus[idx] += step
            lp = loss_fn({**params, name: plus}).forward()
            minus = arr.copy()
            minus[idx] -= step
            lm = loss_fn({**params, name: minus}).forward()
            if not (math.isfinite(lp) and math.isfinite(lm)):
                ok = False
                note = f"non-finite loss while probing element {idx}"
                worst = math.inf
                break
            numeric = (lp - lm) / (2.0 * step)
            worst = max(worst, _rel_err(float(analytic[idx]), numeric))
            d_plus = (lp - base) / step
            d_minus = (base - lm) / step
            jump = abs(d_plus - d_minus)
            if jump > 0.5 * max(abs(d_plus), abs(d_minus), 1.0) and jump > 100.0 * step:
                unreliable = True
        if worst > tol:
            ok = False
        report.entries.append(GradCheckEntry(name, worst, ok, unreliable, note))
    return report
