"""Typed program trees: grammar, random generation, evaluation, and
serialization.

A program maps one grayscale image to a raw score. The type system enforces
a tiered layout: arithmetic over scalars at the top, a mandatory windowed
aggregation in the middle (the only way to turn an image into a scalar), and
an optional stack of convolution/pooling operators over the raw input at the
bottom. Because no node turns a scalar back into an image, every path from
the root to an image leaf crosses exactly one aggregation node.

Trees are immutable after construction; genetic operators and local search
always build fresh copies.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParseError
from .image_ops import Stat, WindowShape, WindowSpec, aggregate, convolve, pool
from .util import sigmoid

DEPTH_MIN = 2
DEPTH_MAX = 10
INIT_DEPTH_MIN = 2
INIT_DEPTH_MAX = 6


class VType(enum.Enum):
    DOUBLE = "double"
    IMAGE = "image"
    FILTER = "filter"
    WINDOW = "window"


class Kind(enum.Enum):
    """Node kinds; the value doubles as the s-expression token."""

    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    AGG_MIN = "agg-min"
    AGG_MAX = "agg-max"
    AGG_MEAN = "agg-mean"
    AGG_STD = "agg-std"
    CONVOLVE = "convolve"
    POOL = "pool"
    INPUT = "input"
    FILTER = "filter"
    WINDOW = "window"
    CONST = "const"


_D, _I, _F, _W = VType.DOUBLE, VType.IMAGE, VType.FILTER, VType.WINDOW

# kind -> (child types, output type)
SIGNATURES: dict[Kind, tuple[tuple[VType, ...], VType]] = {
    Kind.ADD: ((_D, _D), _D),
    Kind.SUB: ((_D, _D), _D),
    Kind.MUL: ((_D, _D), _D),
    Kind.DIV: ((_D, _D), _D),
    Kind.AGG_MIN: ((_I, _W), _D),
    Kind.AGG_MAX: ((_I, _W), _D),
    Kind.AGG_MEAN: ((_I, _W), _D),
    Kind.AGG_STD: ((_I, _W), _D),
    Kind.CONVOLVE: ((_I, _F), _I),
    Kind.POOL: ((_I,), _I),
    Kind.INPUT: ((), _I),
    Kind.FILTER: ((), _F),
    Kind.WINDOW: ((), _W),
    Kind.CONST: ((), _D),
}

ARITH_KINDS = (Kind.ADD, Kind.SUB, Kind.MUL, Kind.DIV)
AGG_KINDS = (Kind.AGG_MIN, Kind.AGG_MAX, Kind.AGG_MEAN, Kind.AGG_STD)

AGG_STATS = {
    Kind.AGG_MIN: Stat.MIN,
    Kind.AGG_MAX: Stat.MAX,
    Kind.AGG_MEAN: Stat.MEAN,
    Kind.AGG_STD: Stat.STD,
}

_WINDOW_SHAPES = tuple(WindowShape)
_SHAPE_TOKENS = {s.value: s for s in WindowShape}


class Node:
    """One tree node.

    ``payload`` holds terminal data: a 3x3 float array for FILTER, a
    WindowSpec for WINDOW, a float for CONST, None otherwise.
    """

    __slots__ = ("kind", "children", "payload")

    def __init__(self, kind: Kind, children: tuple = (), payload=None):
        self.kind = kind
        self.children = tuple(children)
        self.payload = payload

    @property
    def out_type(self) -> VType:
        return SIGNATURES[self.kind][1]

    def copy(self) -> "Node":
        """Deep structural copy; filter coefficient arrays are duplicated."""
        payload = self.payload
        if isinstance(payload, np.ndarray):
            payload = payload.copy()
        return Node(self.kind, tuple(c.copy() for c in self.children), payload)

    def __repr__(self):
        return f"Node({self.kind.name}, {len(self.children)} children)"


def iter_nodes(node: Node):
    """Pre-order traversal."""
    yield node
    for child in node.children:
        yield from iter_nodes(child)


def _depth(node: Node) -> int:
    if not node.children:
        return 1
    return 1 + max(_depth(c) for c in node.children)


class ProgramTree:
    """Wrapper around a root node with cached size metrics."""

    __slots__ = ("root", "depth", "node_count")

    def __init__(self, root: Node):
        self.root = root
        self.depth = _depth(root)
        self.node_count = sum(1 for _ in iter_nodes(root))

    def nodes(self) -> list[Node]:
        return list(iter_nodes(self.root))

    def conv_nodes(self) -> list[Node]:
        return [n for n in iter_nodes(self.root) if n.kind is Kind.CONVOLVE]

    def copy(self) -> "ProgramTree":
        return ProgramTree(self.root.copy())


@dataclass
class Individual:
    """A tree plus its cached training accuracy (None until evaluated)."""

    tree: ProgramTree
    fitness: float | None = None


# ---------------------------------------------------------------------------
# validation


def _check(node: Node, depth: int, depth_max: int) -> str | None:
    if depth > depth_max:
        return f"depth exceeds {depth_max}"
    child_types, _ = SIGNATURES[node.kind]
    if len(node.children) != len(child_types):
        return f"{node.kind.value} expects {len(child_types)} children"
    for child, want in zip(node.children, child_types):
        if child.out_type is not want:
            return f"{node.kind.value} child must be {want.value}"
        problem = _check(child, depth + 1, depth_max)
        if problem:
            return problem
    if node.kind is Kind.FILTER:
        if not (isinstance(node.payload, np.ndarray) and node.payload.shape == (3, 3)):
            return "filter payload must be a 3x3 array"
    elif node.kind is Kind.WINDOW:
        if not isinstance(node.payload, WindowSpec):
            return "window payload must be a WindowSpec"
    elif node.kind is Kind.CONST:
        if not isinstance(node.payload, float) or not math.isfinite(node.payload):
            return "const payload must be a finite float"
    elif node.payload is not None:
        return f"{node.kind.value} carries no payload"
    return None


def check_tree(tree: ProgramTree, depth_min: int = DEPTH_MIN, depth_max: int = DEPTH_MAX) -> str | None:
    """Return None for a legal tree, else a description of the first problem."""
    if tree.root.out_type is not VType.DOUBLE:
        return "root must output a double"
    if not any(n.kind in AGG_KINDS for n in iter_nodes(tree.root)):
        return "program must contain an aggregation node"
    if tree.depth < depth_min:
        return f"depth below {depth_min}"
    return _check(tree.root, 1, depth_max)


def validate(tree: ProgramTree, depth_min: int = DEPTH_MIN, depth_max: int = DEPTH_MAX) -> bool:
    return check_tree(tree, depth_min, depth_max) is None


# ---------------------------------------------------------------------------
# random generation


def _random_filter(rng) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, (3, 3))


def _random_window(rng) -> WindowSpec:
    shape = _WINDOW_SHAPES[rng.integers(len(_WINDOW_SHAPES))]
    # 1 - random() lands in (0, 1], keeping sizes strictly positive
    return WindowSpec(
        shape,
        pos_x=float(rng.random()),
        pos_y=float(rng.random()),
        size_w=float(1.0 - rng.random()),
        size_h=float(1.0 - rng.random()),
    )


def random_subtree(rng, vtype: VType, budget: int, full: bool = False, need_agg: bool = False) -> Node:
    """Grow a random typed subtree of depth at most ``budget``.

    ``full`` expands function nodes until the budget runs out (leaf types
    still terminate early where the grammar forces them to). ``need_agg``
    guarantees at least one aggregation node in a DOUBLE subtree and needs
    ``budget >= 2``.
    """
    if vtype is VType.FILTER:
        return Node(Kind.FILTER, payload=_random_filter(rng))
    if vtype is VType.WINDOW:
        return Node(Kind.WINDOW, payload=_random_window(rng))

    if vtype is VType.IMAGE:
        if budget == 1:
            return Node(Kind.INPUT)
        options = (Kind.CONVOLVE, Kind.POOL) if full else (Kind.CONVOLVE, Kind.POOL, Kind.INPUT)
        kind = options[rng.integers(len(options))]
        if kind is Kind.INPUT:
            return Node(Kind.INPUT)
        if kind is Kind.POOL:
            return Node(Kind.POOL, (random_subtree(rng, VType.IMAGE, budget - 1, full),))
        return Node(
            Kind.CONVOLVE,
            (
                random_subtree(rng, VType.IMAGE, budget - 1, full),
                random_subtree(rng, VType.FILTER, budget - 1, full),
            ),
        )

    # DOUBLE
    if budget == 1:
        if need_agg:
            raise ValueError("cannot place an aggregation subtree in depth budget 1")
        return Node(Kind.CONST, payload=float(rng.uniform(-1.0, 1.0)))
    if need_agg:
        options = AGG_KINDS + ARITH_KINDS if budget >= 3 else AGG_KINDS
    elif full:
        options = AGG_KINDS + ARITH_KINDS
    else:
        options = AGG_KINDS + ARITH_KINDS + (Kind.CONST,)
    kind = options[rng.integers(len(options))]
    if kind is Kind.CONST:
        return Node(Kind.CONST, payload=float(rng.uniform(-1.0, 1.0)))
    if kind in AGG_KINDS:
        return Node(
            kind,
            (
                random_subtree(rng, VType.IMAGE, budget - 1, full),
                random_subtree(rng, VType.WINDOW, budget - 1, full),
            ),
        )
    if need_agg:
        agg_side = int(rng.integers(2))
        needs = (agg_side == 0, agg_side == 1)
    else:
        needs = (False, False)
    return Node(
        kind,
        (
            random_subtree(rng, VType.DOUBLE, budget - 1, full, needs[0]),
            random_subtree(rng, VType.DOUBLE, budget - 1, full, needs[1]),
        ),
    )


def generate(rng, depth_min: int = INIT_DEPTH_MIN, depth_max: int = INIT_DEPTH_MAX) -> ProgramTree:
    """Ramped half-and-half initialization.

    Target depth is uniform over [depth_min, depth_max]; the full and grow
    methods are used with equal probability. Every tree contains at least
    one aggregation node and respects the depth bounds.
    """
    if not (2 <= depth_min <= depth_max):
        raise ValueError(f"need 2 <= depth_min <= depth_max, got {depth_min}..{depth_max}")
    target = int(rng.integers(depth_min, depth_max + 1))
    full = bool(rng.integers(2))
    return ProgramTree(random_subtree(rng, VType.DOUBLE, target, full, need_agg=True))


# ---------------------------------------------------------------------------
# evaluation


def _eval(node: Node, img: np.ndarray):
    kind = node.kind
    if kind is Kind.INPUT:
        return img
    if kind is Kind.CONST:
        return node.payload
    if kind is Kind.CONVOLVE:
        return convolve(_eval(node.children[0], img), node.children[1].payload)
    if kind is Kind.POOL:
        return pool(_eval(node.children[0], img))
    stat = AGG_STATS.get(kind)
    if stat is not None:
        return aggregate(_eval(node.children[0], img), node.children[1].payload, stat)
    a = _eval(node.children[0], img)
    b = _eval(node.children[1], img)
    if kind is Kind.ADD:
        return a + b
    if kind is Kind.SUB:
        return a - b
    if kind is Kind.MUL:
        return a * b
    # protected division
    return 0.0 if b == 0 else a / b


def evaluate(tree: ProgramTree, img: np.ndarray) -> float:
    """Raw (pre-sigmoid) scalar output of the tree on one image.

    Propagates ImageTooSmallError when stacked tier-1 operators shrink the
    image below an operator's minimum.
    """
    return float(_eval(tree.root, img))


def classify(tree: ProgramTree, img: np.ndarray) -> int:
    """Predicted class: 0 when sigmoid(output) > 0.5, else 1."""
    return 0 if sigmoid(evaluate(tree, img)) > 0.5 else 1


def sigmoid_target(label: int) -> int:
    """Regression target for a class label under the classification rule.

    Class 0 lives on the y > 0.5 side of the decision boundary, so its
    cross-entropy target is 1 (and class 1's is 0). Gradient descent toward
    the raw label would drive predictions to the wrong side.
    """
    return 1 - label


# ---------------------------------------------------------------------------
# serialization

_KIND_TOKENS = {k.value: k for k in Kind}


def _fmt(x: float) -> str:
    return repr(float(x))


def _write(node: Node) -> str:
    kind = node.kind
    if kind is Kind.INPUT:
        return "(input)"
    if kind is Kind.CONST:
        return f"(const {_fmt(node.payload)})"
    if kind is Kind.FILTER:
        coeffs = " ".join(_fmt(v) for v in node.payload.ravel())
        return f"(filter {coeffs})"
    if kind is Kind.WINDOW:
        w = node.payload
        return (
            f"(window {w.shape.value} {_fmt(w.pos_x)} {_fmt(w.pos_y)}"
            f" {_fmt(w.size_w)} {_fmt(w.size_h)})"
        )
    inner = " ".join(_write(c) for c in node.children)
    return f"({kind.value} {inner})"


def serialize(tree: ProgramTree) -> str:
    """S-expression form of the tree; floats keep full round-trip precision."""
    return _write(tree.root)


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "()":
            tokens.append((ch, i))
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace() and text[j] not in "()":
            j += 1
        tokens.append((text[i:j], i))
        i = j
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.end = len(text)

    def _peek(self) -> tuple[str, int]:
        if self.pos >= len(self.tokens):
            raise ParseError("unexpected end of input", self.end)
        return self.tokens[self.pos]

    def _take(self) -> tuple[str, int]:
        tok = self._peek()
        self.pos += 1
        return tok

    def _expect(self, literal: str):
        tok, at = self._take()
        if tok != literal:
            raise ParseError(f"expected {literal!r}, got {tok!r}", at)

    def _number(self) -> float:
        tok, at = self._take()
        try:
            return float(tok)
        except ValueError:
            raise ParseError(f"expected a number, got {tok!r}", at) from None

    def parse_node(self) -> Node:
        self._expect("(")
        head, at = self._take()
        kind = _KIND_TOKENS.get(head)
        if kind is None:
            raise ParseError(f"unknown node kind {head!r}", at)
        if kind is Kind.INPUT:
            self._expect(")")
            return Node(Kind.INPUT)
        if kind is Kind.CONST:
            value = self._number()
            self._expect(")")
            return Node(Kind.CONST, payload=value)
        if kind is Kind.FILTER:
            coeffs = [self._number() for _ in range(9)]
            self._expect(")")
            return Node(Kind.FILTER, payload=np.array(coeffs, dtype=np.float64).reshape(3, 3))
        if kind is Kind.WINDOW:
            shape_tok, shape_at = self._take()
            shape = _SHAPE_TOKENS.get(shape_tok)
            if shape is None:
                raise ParseError(f"unknown window shape {shape_tok!r}", shape_at)
            nums = [self._number() for _ in range(4)]
            self._expect(")")
            try:
                spec = WindowSpec(shape, *nums)
            except ValueError as exc:
                raise ParseError(str(exc), at) from None
            return Node(Kind.WINDOW, payload=spec)
        child_types, _ = SIGNATURES[kind]
        children = []
        for want in child_types:
            _, child_at = self._peek()
            child = self.parse_node()
            if child.out_type is not want:
                raise ParseError(f"{head} operand must be {want.value}-typed", child_at)
            children.append(child)
        self._expect(")")
        return Node(kind, tuple(children))


def deserialize(text: str) -> ProgramTree:
    """Parse an s-expression program; inverse of :func:`serialize`.

    Raises ParseError (with the offending character position) on malformed
    or ill-typed input.
    """
    parser = _Parser(text)
    root = parser.parse_node()
    if parser.pos != len(parser.tokens):
        raise ParseError("trailing content after program", parser.tokens[parser.pos][1])
    tree = ProgramTree(root)
    problem = check_tree(tree)
    if problem:
        raise ParseError(problem, 0)
    return tree


def trees_equal(a: ProgramTree, b: ProgramTree) -> bool:
    """Structural equality, comparing payloads exactly."""

    def eq(x: Node, y: Node) -> bool:
        if x.kind is not y.kind or len(x.children) != len(y.children):
            return False
        if isinstance(x.payload, np.ndarray):
            if not np.array_equal(x.payload, y.payload):
                return False
        elif x.payload != y.payload:
            return False
        return all(eq(cx, cy) for cx, cy in zip(x.children, y.children))

    return eq(a.root, b.root)


# ---------------------------------------------------------------------------
# DOT export


def _dot_label(node: Node) -> str:
    kind = node.kind
    if kind is Kind.CONST:
        return f"const {node.payload:.6g}"
    if kind is Kind.FILTER:
        rows = " ".join(
            "[" + " ".join(f"{v:.4g}" for v in row) + "]" for row in node.payload
        )
        return f"filter {rows}"
    if kind is Kind.WINDOW:
        w = node.payload
        return (
            f"{w.shape.value} pos=({w.pos_x:.3g},{w.pos_y:.3g})"
            f" size=({w.size_w:.3g},{w.size_h:.3g})"
        )
    return kind.value


def to_dot(tree: ProgramTree) -> str:
    """DOT digraph with one labeled node per tree node."""
    lines = ["digraph program {"]
    ids: dict[int, int] = {}
    for i, node in enumerate(iter_nodes(tree.root)):
        ids[id(node)] = i
        label = _dot_label(node).replace("\\", "\\\\").replace('"', '\\"')
        lines.append(f'  n{i} [label="{label}"];')
    for node in iter_nodes(tree.root):
        for child in node.children:
            lines.append(f"  n{ids[id(node)]} -> n{ids[id(child)]};")
    lines.append("}")
    return "\n".join(lines) + "\n"
