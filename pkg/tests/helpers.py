"""Shared test utilities: independent brute-force oracles, tree builders,
and small harness helpers.

The oracles intentionally re-derive results with plain Python loops and do
not call the package's kernels, so implementation and check stay separate.
"""

import math
import re

import numpy as np

from memegp.gp_program import Kind, Node, ProgramTree
from memegp.image_ops import WindowShape, WindowSpec

FULL_WINDOW = WindowSpec(WindowShape.RECTANGLE, 0.0, 0.0, 1.0, 1.0)
QUADRANT_WINDOW = WindowSpec(WindowShape.RECTANGLE, 0.0, 0.0, 0.5, 0.5)


# ---------------------------------------------------------------------------
# oracles


def conv_oracle(img, filt, relu=True):
    """Four-loop sliding-window convolution; optional ReLU."""
    h, w = img.shape
    out = np.zeros((h - 2, w - 2))
    for r in range(h - 2):
        for c in range(w - 2):
            acc = 0.0
            for a in range(3):
                for b in range(3):
                    acc += img[r + a][c + b] * filt[a][b]
            out[r][c] = max(0.0, acc) if relu else acc
    return out


def pool_oracle(img):
    """Blockwise 2x2 max with trailing odd row/column dropped."""
    h2, w2 = img.shape[0] // 2, img.shape[1] // 2
    out = np.zeros((h2, w2))
    for r in range(h2):
        for c in range(w2):
            out[r][c] = max(
                img[2 * r][2 * c],
                img[2 * r][2 * c + 1],
                img[2 * r + 1][2 * c],
                img[2 * r + 1][2 * c + 1],
            )
    return out


def window_oracle(spec, height, width):
    """Pixel set of a realized window, enumerated per pixel from the
    documented rounding rule."""
    r0 = min(math.floor(spec.pos_y * height), height - 1)
    c0 = min(math.floor(spec.pos_x * width), width - 1)
    eh = 1 if spec.shape is WindowShape.ROW else max(1, math.floor(spec.size_h * height + 0.5))
    ew = 1 if spec.shape is WindowShape.COLUMN else max(1, math.floor(spec.size_w * width + 0.5))
    r1 = min(r0 + eh, height)
    c1 = min(c0 + ew, width)
    pixels = set()
    for r in range(r0, r1):
        for c in range(c0, c1):
            if spec.shape is WindowShape.ELLIPSE:
                cy, cx = (r0 + r1) / 2, (c0 + c1) / 2
                ay, ax = (r1 - r0) / 2, (c1 - c0) / 2
                if ((r + 0.5 - cy) / ay) ** 2 + ((c + 0.5 - cx) / ax) ** 2 > 1.0:
                    continue
            pixels.add((r, c))
    return pixels


def realized_pixels(r0, c0, mask):
    """Convert the package's (row0, col0, mask) form into a pixel set."""
    rows, cols = np.nonzero(mask)
    return {(r0 + int(r), c0 + int(c)) for r, c in zip(rows, cols)}


def grad_w_oracle(x, gy):
    """dL/dw by direct per-pixel accumulation over the whole output."""
    gw = np.zeros((3, 3))
    for a in range(3):
        for b in range(3):
            for r in range(gy.shape[0]):
                for c in range(gy.shape[1]):
                    gw[a][b] += gy[r][c] * x[r + a][c + b]
    return gw


def grad_x_oracle(gy, w, shape):
    """dL/dx by direct per-pixel accumulation over the filter footprint."""
    gx = np.zeros(shape)
    for r in range(shape[0]):
        for c in range(shape[1]):
            for a in range(3):
                for b in range(3):
                    rr, cc = r - a, c - b
                    if 0 <= rr < gy.shape[0] and 0 <= cc < gy.shape[1]:
                        gx[r][c] += gy[rr][cc] * w[a][b]
    return gx


# ---------------------------------------------------------------------------
# tree builders


def minimal_tree(agg=Kind.AGG_MEAN, window=FULL_WINDOW):
    return ProgramTree(Node(agg, (Node(Kind.INPUT), Node(Kind.WINDOW, payload=window))))


def conv_agg_tree(filt, agg=Kind.AGG_MEAN, window=FULL_WINDOW):
    conv = Node(
        Kind.CONVOLVE,
        (Node(Kind.INPUT), Node(Kind.FILTER, payload=np.asarray(filt, dtype=np.float64))),
    )
    return ProgramTree(Node(agg, (conv, Node(Kind.WINDOW, payload=window))))


def const_tree(value):
    return ProgramTree(Node(Kind.CONST, payload=float(value)))


class ScriptRng:
    """Duck-typed rng whose integer draws follow a fixed script."""

    def __init__(self, values):
        self.values = list(values)

    def integers(self, n):
        return self.values.pop(0) if self.values else 0

    def random(self):
        return 0.0

    def uniform(self, lo, hi, size=None):
        if size is None:
            return lo
        return np.full(size, lo)


# ---------------------------------------------------------------------------
# text-level checks


def check_dot_syntax(text):
    """Minimal DOT digraph validator: header, node/edge statements, brace
    balance. Returns (node_count, edge_count)."""
    lines = [ln.strip() for ln in text.strip().splitlines()]
    assert lines[0] == "digraph program {"
    assert lines[-1] == "}"
    node_re = re.compile(r'^n\d+ \[label="(?:[^"\\]|\\.)*"\];$')
    edge_re = re.compile(r"^n\d+ -> n\d+;$")
    nodes = edges = 0
    for ln in lines[1:-1]:
        if node_re.match(ln):
            nodes += 1
        elif edge_re.match(ln):
            edges += 1
        else:
            raise AssertionError(f"unexpected DOT line: {ln!r}")
    return nodes, edges


def sexp_tokens(text):
    """Tokenize an s-expression, tagging each token with whether it sits
    inside a (filter ...) form."""
    raw = text.replace("(", " ( ").replace(")", " ) ").split()
    out = []
    stack = []
    for i, tok in enumerate(raw):
        if tok == "(":
            stack.append(None)
        elif tok == ")":
            stack.pop()
        elif stack and stack[-1] is None:
            stack[-1] = tok
        out.append((tok, any(head == "filter" for head in stack)))
    return out


def diff_outside_filters(text_a, text_b):
    """Return tokens that differ outside filter forms (empty when SGD only
    touched coefficients)."""
    ta, tb = sexp_tokens(text_a), sexp_tokens(text_b)
    if len(ta) != len(tb):
        return [("<length>", len(ta), len(tb))]
    bad = []
    for (tok_a, in_f_a), (tok_b, in_f_b) in zip(ta, tb):
        if tok_a != tok_b and not (in_f_a and in_f_b):
            bad.append((tok_a, tok_b))
    return bad
