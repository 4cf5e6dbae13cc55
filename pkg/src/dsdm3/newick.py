"""Strict Newick reader and writer.

Grammar (whitespace allowed between tokens)::

    tree      := subtree ';'
    subtree   := '(' subtree length? (',' subtree length?)* ')' label? | label
    length    := ':' number

Leaves must be labelled and labels must be unique. Quoted labels use single
quotes with ``''`` as the escaped quote. Comments, empty siblings, and
internal nodes with a single child are rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Node", "PhyloTree", "NewickError", "parse_newick", "read_newick", "to_newick"]


class NewickError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} at offset {offset}")


@dataclass(eq=False)
class Node:
    name: str | None = None
    length: float | None = None
    children: list["Node"] = field(default_factory=list)
    concentration: list[float] | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def iter_preorder(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


class PhyloTree:
    """Rooted tree. Internal nodes carry one Dirichlet concentration per child
    (default 1.0)."""

    def __init__(self, root: Node):
        self.root = root
        leaves = self.leaves()
        if len(leaves) < 2:
            raise NewickError("a tree needs at least two leaves")
        seen = set()
        for leaf in leaves:
            if leaf.name in seen:
                raise NewickError(f"duplicate leaf label {leaf.name!r}")
            seen.add(leaf.name)
        for node in self.internal_nodes():
            if len(node.children) < 2:
                raise NewickError("internal node with fewer than two children")
            if node.concentration is not None and len(node.concentration) != len(node.children):
                raise ValueError("concentration needs one entry per child")

    def leaves(self) -> list[Node]:
        return [n for n in self.root.iter_preorder() if n.is_leaf]

    def internal_nodes(self) -> list[Node]:
        return [n for n in self.root.iter_preorder() if not n.is_leaf]

    @property
    def leaf_names(self) -> list[str]:
        return [leaf.name for leaf in self.leaves()]

    def concentration(self, node: Node) -> list[float]:
        if node.concentration is None:
            return [1.0] * len(node.children)
        return list(node.concentration)

    def leaf_sets(self) -> dict[int, np.ndarray]:
        """Map ``id(node)`` to the indices (in ``leaves()`` order) beneath it."""
        index = {id(leaf): j for j, leaf in enumerate(self.leaves())}
        out: dict[int, np.ndarray] = {}

        def visit(node):
            if node.is_leaf:
                out[id(node)] = np.array([index[id(node)]])
            else:
                out[id(node)] = np.concatenate([visit(ch) for ch in node.children])
            return out[id(node)]

        visit(self.root)
        return out

    def __repr__(self):
        return f"PhyloTree({to_newick(self)!r})"


_UNQUOTED = re.compile(r"[^\s()\[\]':;,]+")
_NUMBER = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch):
        if self.peek() != ch:
            found = repr(self.text[self.pos]) if self.pos < len(self.text) else "end of input"
            raise NewickError(f"expected {ch!r}, found {found}", self.pos)
        self.pos += 1

    def label(self):
        ch = self.peek()
        if ch == "'":
            start = self.pos
            self.pos += 1
            chars = []
            while True:
                if self.pos >= len(self.text):
                    raise NewickError("unterminated quoted label", start)
                c = self.text[self.pos]
                if c == "'":
                    if self.text[self.pos + 1: self.pos + 2] == "'":
                        chars.append("'")
                        self.pos += 2
                        continue
                    self.pos += 1
                    return "".join(chars)
                chars.append(c)
                self.pos += 1
        m = _UNQUOTED.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return m.group()
        return None

    def length(self):
        if self.peek() != ":":
            return None
        self.pos += 1
        self.skip_ws()
        m = _NUMBER.match(self.text, self.pos)
        if not m:
            raise NewickError("malformed branch length", self.pos)
        self.pos = m.end()
        return float(m.group())

    def subtree(self):
        ch = self.peek()
        if ch == "[":
            raise NewickError("comments are not supported", self.pos)
        if ch == "(":
            open_at = self.pos
            self.pos += 1
            children = [self.branch()]
            while self.peek() == ",":
                self.pos += 1
                children.append(self.branch())
            if self.peek() != ")":
                if self.pos >= len(self.text):
                    raise NewickError(
                        f"unbalanced parenthesis (opened at offset {open_at})", self.pos
                    )
                self.expect(")")
            self.pos += 1
            if len(children) < 2:
                raise NewickError("internal node with a single child", open_at)
            return Node(name=self.label(), children=children)
        start = self.pos
        name = self.label()
        if name is None:
            if self.pos >= len(self.text):
                raise NewickError("unexpected end of input", self.pos)
            raise NewickError(f"empty or unlabelled leaf before {self.text[self.pos]!r}", start)
        return Node(name=name)

    def branch(self):
        node = self.subtree()
        node.length = self.length()
        return node

    def parse(self):
        root = self.subtree()
        root.length = self.length()
        self.expect(";")
        self.skip_ws()
        if self.pos != len(self.text):
            raise NewickError("trailing characters after ';'", self.pos)
        return root


def parse_newick(text: str) -> PhyloTree:
    return PhyloTree(_Parser(text).parse())


def read_newick(path) -> PhyloTree:
    with open(path, encoding="utf-8") as fh:
        return parse_newick(fh.read())


def _format_label(name):
    if name is None:
        return ""
    if _UNQUOTED.fullmatch(name):
        return name
    return "'" + name.replace("'", "''") + "'"


def _format(node: Node) -> str:
    out = ""
    if node.children:
        out = "(" + ",".join(_format(ch) for ch in node.children) + ")"
    out += _format_label(node.name)
    if node.length is not None:
        out += f":{node.length!r}"
    return out


def to_newick(tree: PhyloTree | Node) -> str:
    root = tree.root if isinstance(tree, PhyloTree) else tree
    return _format(root) + ";"
