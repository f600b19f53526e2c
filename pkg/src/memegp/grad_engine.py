"""Reverse-mode differentiation of program trees through the sigmoid +
cross-entropy head, with a finite-difference checking harness.

The only trainable parameters are the 3x3 filter coefficients attached to
convolve nodes. ``backward`` seeds the recursion with the loss derivative
with respect to the raw tree output, which for sigmoid + cross-entropy
collapses to ``y - t``, and applies per-node rules on the way down:

* arithmetic: d(a+b) = (1, 1); d(a-b) = (1, -1); d(a*b) = (b, a);
  d(a/b) = (1/b, -a/b^2), with both partials defined as 0 at the protected
  b = 0 point (the function is constant there).
* aggregation: by default the upstream scalar is broadcast unchanged to
  every pixel of the image child (a deliberate, cheap approximation that
  treats the aggregation Jacobian as all-ones). ``exact_agg=True`` instead
  applies the true window-masked Jacobian; the finite-difference harness
  uses that path, since only the exact Jacobian can match numerical
  derivatives.
* pooling: the gradient is routed to each block's max pixel only, ties to
  the first in row-major order.
* convolution: dL/dw = valid_conv(x, g) and dL/dx = full_conv(g, flip(w)),
  where g is the upstream gradient gated by the ReLU (zero wherever the
  activation is <= 0). Full convolution means zero-padding g by 2 before a
  valid pass with the 180-degree-rotated kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .gp_program import AGG_KINDS, AGG_STATS, Kind, Node, ProgramTree
from .image_ops import Stat, aggregate, convolve, pool, realize_window
from .util import sigmoid

GradientSet = dict  # Node -> 3x3 ndarray of dL/dw, one entry per convolve node


@dataclass
class ForwardTape:
    """Cached per-node outputs for one (tree, image) evaluation."""

    tree: ProgramTree
    image: np.ndarray
    values: dict  # Node -> output (ndarray for image nodes, float for scalars)
    x: float  # raw tree output
    y: float  # sigmoid(x), clamped inside (0, 1)


def forward(tree: ProgramTree, img: np.ndarray) -> ForwardTape:
    """Evaluate the tree, recording every intermediate value."""
    values: dict = {}

    def rec(node: Node):
        kind = node.kind
        if kind is Kind.INPUT:
            value = img
        elif kind is Kind.CONST:
            value = node.payload
        elif kind is Kind.FILTER or kind is Kind.WINDOW:
            value = node.payload
        elif kind is Kind.CONVOLVE:
            value = convolve(rec(node.children[0]), node.children[1].payload)
            rec(node.children[1])
        elif kind is Kind.POOL:
            value = pool(rec(node.children[0]))
        elif kind in AGG_STATS:
            value = aggregate(rec(node.children[0]), node.children[1].payload, AGG_STATS[kind])
            rec(node.children[1])
        else:
            a = rec(node.children[0])
            b = rec(node.children[1])
            if kind is Kind.ADD:
                value = a + b
            elif kind is Kind.SUB:
                value = a - b
            elif kind is Kind.MUL:
                value = a * b
            else:
                value = 0.0 if b == 0 else a / b
        values[node] = value
        return value

    x = float(rec(tree.root))
    return ForwardTape(tree, img, values, x, sigmoid(x))


def ce_loss(y: float, t: int) -> float:
    """Binary cross-entropy for one prediction; batch losses are averaged."""
    y = min(max(y, 1e-12), 1.0 - 1e-12)
    return -(t * math.log(y) + (1 - t) * math.log(1.0 - y))


def output_gradient(y: float, t: int) -> float:
    """dL/dx for cross-entropy through a sigmoid: simplifies to y - t."""
    return y - t


def _rot180(w: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(w[::-1, ::-1])


def _agg_exact_grad(img_val: np.ndarray, node: Node, up: float) -> np.ndarray:
    """True Jacobian of an aggregation node w.r.t. its image input."""
    spec = node.children[1].payload
    r0, c0, mask = realize_window(spec, img_val.shape[0], img_val.shape[1])
    grad = np.zeros_like(img_val)
    sub = img_val[r0 : r0 + mask.shape[0], c0 : c0 + mask.shape[1]]
    stat = AGG_STATS[node.kind]
    n = int(mask.sum())
    region = grad[r0 : r0 + mask.shape[0], c0 : c0 + mask.shape[1]]
    if stat is Stat.MEAN:
        region[mask] = up / n
    elif stat is Stat.MIN or stat is Stat.MAX:
        guarded = np.where(mask, sub, np.inf if stat is Stat.MIN else -np.inf)
        flat = guarded.argmin() if stat is Stat.MIN else guarded.argmax()
        region[np.unravel_index(flat, sub.shape)] = up
    else:  # population std
        vals = sub[mask]
        sd = vals.std()
        if sd > 0:
            region[mask] = up * (vals - vals.mean()) / (n * sd)
    return grad


def _backprop(node: Node, up, values: dict, grads: GradientSet, exact_agg: bool):
    kind = node.kind
    if not node.children:
        return
    if kind is Kind.CONVOLVE:
        x = values[node.children[0]]
        w = node.children[1].payload
        post = values[node]
        gated = np.where(post > 0, up, 0.0)
        grads[node] += kernels.conv2d_valid(x, gated)
        pad = w.shape[0] - 1
        grad_x = kernels.conv2d_valid(np.pad(gated, pad), _rot180(w))
        _backprop(node.children[0], grad_x, values, grads, exact_agg)
        return
    if kind is Kind.POOL:
        child_val = values[node.children[0]]
        _backprop(
            node.children[0],
            kernels.maxpool2x2_backward(child_val, up),
            values,
            grads,
            exact_agg,
        )
        return
    if kind in AGG_KINDS:
        img_val = values[node.children[0]]
        if exact_agg:
            grad = _agg_exact_grad(img_val, node, up)
        else:
            grad = np.full(img_val.shape, up, dtype=np.float64)
        _backprop(node.children[0], grad, values, grads, exact_agg)
        return
    a_node, b_node = node.children
    if kind is Kind.ADD:
        _backprop(a_node, up, values, grads, exact_agg)
        _backprop(b_node, up, values, grads, exact_agg)
    elif kind is Kind.SUB:
        _backprop(a_node, up, values, grads, exact_agg)
        _backprop(b_node, -up, values, grads, exact_agg)
    elif kind is Kind.MUL:
        _backprop(a_node, up * values[b_node], values, grads, exact_agg)
        _backprop(b_node, up * values[a_node], values, grads, exact_agg)
    else:  # protected division: constant (zero gradient) at b == 0
        b = values[b_node]
        if b == 0:
            _backprop(a_node, 0.0, values, grads, exact_agg)
            _backprop(b_node, 0.0, values, grads, exact_agg)
        else:
            a = values[a_node]
            _backprop(a_node, up / b, values, grads, exact_agg)
            _backprop(b_node, -up * a / (b * b), values, grads, exact_agg)


def backward(tape: ForwardTape, t: int, exact_agg: bool = False) -> GradientSet:
    """Loss gradients w.r.t. every filter coefficient, one 3x3 entry per
    convolve node (entries stay zero when no gradient reaches a node)."""
    grads: GradientSet = {n: np.zeros((3, 3)) for n in tape.tree.conv_nodes()}
    _backprop(tape.tree.root, output_gradient(tape.y, t), tape.values, grads, exact_agg)
    return grads


# ---------------------------------------------------------------------------
# finite-difference harness


def grad_check(tree: ProgramTree, img: np.ndarray, t: int, h: float = 1e-4,
               analytic_offset: float = 0.0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Each filter coefficient is perturbed by +-h; the comparison falls back to
    absolute error when both values are below 1e-8. Runs the exact
    aggregation Jacobian, since the broadcast training approximation is not
    a derivative of the loss and cannot match finite differences.

    ``analytic_offset`` shifts every analytic entry; it exists purely so the
    harness can prove it detects wrong gradients (see the gradcheck CLI's
    --break-grad flag).
    """
    work = tree.copy()
    tape = forward(work, img)
    grads = backward(tape, t, exact_agg=True)
    worst = 0.0
    for conv in work.conv_nodes():
        filt = conv.children[1].payload
        for i in range(3):
            for j in range(3):
                orig = filt[i, j]
                filt[i, j] = orig + h
                lo = ce_loss(forward(work, img).y, t)
                filt[i, j] = orig - h
                hi = ce_loss(forward(work, img).y, t)
                filt[i, j] = orig
                fd = (lo - hi) / (2.0 * h)
                an = grads[conv][i, j] + analytic_offset
                if abs(an) < 1e-8 and abs(fd) < 1e-8:
                    err = abs(an - fd)
                else:
                    err = abs(an - fd) / max(abs(an), abs(fd))
                worst = max(worst, err)
    return worst


def _contains_conv(node: Node) -> bool:
    return any(n.kind is Kind.CONVOLVE for n in _iter(node))


def _iter(node: Node):
    yield node
    for c in node.children:
        yield from _iter(c)


def finite_difference_safe(tape: ForwardTape, margin: float = 1e-3) -> bool:
    """Whether (tree, image) is far enough from every derivative kink for a
    central-difference check to be trustworthy.

    Checks ReLU pre-activations, protected-division denominators, pooling
    argmax gaps, and (for min/max/std aggregations) extremum gaps and the
    std scale -- all only where the quantity actually moves with the filter
    coefficients. Samples failing this are resampled by the gradcheck
    harness rather than excused after the fact.
    """
    # A saturated sigmoid flattens the (clamped) loss, so finite differences
    # lose the analytic seed entirely.
    if abs(tape.x) > 15.0:
        return False
    for node in _iter(tape.tree.root):
        kind = node.kind
        if kind is Kind.CONVOLVE:
            x = tape.values[node.children[0]]
            raw = kernels.conv2d_valid(x, node.children[1].payload)
            if np.any(np.abs(raw) < margin):
                return False
        elif kind is Kind.DIV:
            b_node = node.children[1]
            if _contains_conv(b_node) or _contains_conv(node.children[0]):
                if abs(tape.values[b_node]) < margin:
                    return False
        elif kind is Kind.POOL and _contains_conv(node.children[0]):
            a = tape.values[node.children[0]]
            h2, w2 = a.shape[0] // 2, a.shape[1] // 2
            blocks = a[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
            flat = blocks.transpose(0, 2, 1, 3).reshape(h2, w2, 4)
            top2 = np.sort(flat, axis=2)[:, :, -2:]
            if np.any(top2[:, :, 1] - top2[:, :, 0] < margin):
                return False
        elif kind in AGG_KINDS and _contains_conv(node.children[0]):
            img_val = tape.values[node.children[0]]
            spec = node.children[1].payload
            r0, c0, mask = realize_window(spec, img_val.shape[0], img_val.shape[1])
            vals = img_val[r0 : r0 + mask.shape[0], c0 : c0 + mask.shape[1]][mask]
            stat = AGG_STATS[kind]
            if stat in (Stat.MIN, Stat.MAX) and vals.size > 1:
                ordered = np.sort(vals)
                gap = ordered[1] - ordered[0] if stat is Stat.MIN else ordered[-1] - ordered[-2]
                if gap < margin:
                    return False
            elif stat is Stat.STD and vals.std() < margin:
                return False
    return True
