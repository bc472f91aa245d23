"""Hierarchical sector framework: an immutable tree of uniquely named sectors.

Framework file format (UTF-8, one node per line, ``#`` starts a comment)::

    id <TAB> parent_id <TAB> ordinal <TAB> name

``parent_id`` is ``ROOT`` for top-level sectors; ``ordinal`` orders siblings.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

from sectorgen.persistence import atomic_write_text
from sectorgen.text import normalize

ROOT = "ROOT"


class FrameworkError(ValueError):
    code = "FrameworkError"


class DuplicateName(FrameworkError):
    code = "DuplicateName"


class DuplicateId(FrameworkError):
    code = "DuplicateId"


class UnknownParent(FrameworkError):
    code = "UnknownParent"


class UnknownId(FrameworkError):
    code = "UnknownId"


class EmptyName(FrameworkError):
    code = "EmptyName"


class RootRemoval(FrameworkError):
    code = "RootRemoval"


class MalformedRecord(FrameworkError):
    code = "MalformedRecord"


@dataclass(frozen=True)
class SectorNode:
    id: str
    name: str
    parent: str
    depth: int


@dataclass(frozen=True)
class FrameworkDelta:
    added: frozenset = frozenset()
    removed: frozenset = frozenset()
    changed: frozenset = frozenset()  # same id, different name or parent
    layer_added: bool = False

    @property
    def empty(self) -> bool:
        return not (self.added or self.removed or self.changed)


def _clean_name(name: str) -> str:
    cleaned = " ".join(name.strip().lower().split())
    if not cleaned:
        raise EmptyName("sector name is empty")
    return cleaned


class SectorTree:
    """Immutable sector tree; edits return new trees."""

    def __init__(self, records: Iterable[tuple[str, str, str]]):
        # records: (id, parent_id, name) with siblings already in insertion order
        nodes_raw: dict[str, tuple[str, str]] = {}
        children: dict[str, list[str]] = {ROOT: []}
        names: dict[str, str] = {}
        for node_id, parent, name in records:
            node_id = str(node_id).strip()
            if not node_id or node_id == ROOT:
                raise MalformedRecord(f"invalid node id {node_id!r}")
            if node_id in nodes_raw:
                raise DuplicateId(node_id)
            name = _clean_name(name)
            key = normalize(name)
            if key in names:
                raise DuplicateName(f"'{name}' used by {names[key]} and {node_id}")
            names[key] = node_id
            nodes_raw[node_id] = (parent, name)
            children.setdefault(node_id, [])
        for node_id, (parent, _) in nodes_raw.items():
            if parent != ROOT and parent not in nodes_raw:
                raise UnknownParent(f"{node_id} references unknown parent {parent!r}")
            children.setdefault(parent, []).append(node_id)

        nodes: dict[str, SectorNode] = {}
        stack = [(ROOT, 0)]
        while stack:
            nid, depth = stack.pop()
            for child in children[nid]:
                parent, name = nodes_raw[child]
                nodes[child] = SectorNode(child, name, parent, depth + 1)
                stack.append((child, depth + 1))
        if len(nodes) != len(nodes_raw):
            cyclic = sorted(set(nodes_raw) - set(nodes))
            raise UnknownParent(f"nodes not reachable from root (cycle): {cyclic}")

        self._nodes = MappingProxyType(nodes)
        self._children = MappingProxyType({k: tuple(v) for k, v in children.items()})
        self._by_name = MappingProxyType(names)
        triples = sorted((n.id, n.name, n.parent) for n in nodes.values())
        self.fingerprint = hashlib.sha256(repr(triples).encode("utf-8")).hexdigest()

    # -- queries -----------------------------------------------------------

    @property
    def nodes(self) -> Mapping[str, SectorNode]:
        return self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._nodes

    def __getitem__(self, node_id: str) -> SectorNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownId(node_id) from None

    @property
    def size(self) -> int:
        """Number of sectors, M."""
        return len(self._nodes)

    @property
    def depth(self) -> int:
        """Number of layers, L (0 for an empty framework)."""
        return max((n.depth for n in self._nodes.values()), default=0)

    def children(self, node_id: str = ROOT) -> tuple[str, ...]:
        if node_id != ROOT and node_id not in self._nodes:
            raise UnknownId(node_id)
        return self._children.get(node_id, ())

    def by_name(self, name: str) -> SectorNode | None:
        node_id = self._by_name.get(normalize(name))
        return self._nodes[node_id] if node_id is not None else None

    def ancestors(self, node_id: str) -> list[str]:
        """Proper ancestors from parent upwards, root sentinel excluded."""
        out = []
        cur = self[node_id].parent
        while cur != ROOT:
            out.append(cur)
            cur = self._nodes[cur].parent
        return out

    def subtree(self, node_id: str) -> list[str]:
        """Node and all descendants in depth-first order."""
        self[node_id]
        return self.depth_first_index(node_id)

    def depth_first_index(self, start: str = ROOT) -> list[str]:
        """Preorder traversal (children in insertion order).  Position i holds sector s_(i+1)."""
        order: list[str] = []
        stack = [start] if start != ROOT else list(reversed(self._children[ROOT]))
        while stack:
            nid = stack.pop()
            order.append(nid)
            stack.extend(reversed(self._children.get(nid, ())))
        return order

    def records(self) -> list[tuple[str, str, str]]:
        """(id, parent, name) in preorder, which reconstructs the same tree."""
        return [(nid, self._nodes[nid].parent, self._nodes[nid].name) for nid in self.depth_first_index()]

    # -- edits ---------------------------------------------------------------

    def next_id(self) -> str:
        n = len(self._nodes) + 1
        while f"s{n}" in self._nodes:
            n += 1
        return f"s{n}"

    def add_node(self, parent_id: str, name: str, node_id: str | None = None) -> "SectorTree":
        if parent_id != ROOT and parent_id not in self._nodes:
            raise UnknownParent(parent_id)
        node_id = node_id or self.next_id()
        return SectorTree(self.records() + [(node_id, parent_id, name)])

    def remove_node(self, node_id: str) -> tuple["SectorTree", list[str]]:
        """Tree without the node and its subtree, plus the removed ids (preorder)."""
        if node_id == ROOT:
            raise RootRemoval("the root sentinel cannot be removed")
        removed = self.subtree(node_id)
        gone = set(removed)
        return SectorTree([r for r in self.records() if r[0] not in gone]), removed

    def rename(self, node_id: str, name: str) -> "SectorTree":
        self[node_id]
        return SectorTree([(i, p, name if i == node_id else n) for i, p, n in self.records()])

    def __eq__(self, other) -> bool:
        return isinstance(other, SectorTree) and self.records() == other.records()

    def __hash__(self) -> int:
        return hash(self.fingerprint)

    def __repr__(self) -> str:
        return f"SectorTree(M={self.size}, L={self.depth}, fingerprint={self.fingerprint[:12]})"


def diff_frameworks(old: SectorTree, new: SectorTree) -> FrameworkDelta:
    old_ids, new_ids = set(old.nodes), set(new.nodes)
    changed = {
        i for i in old_ids & new_ids
        if (old.nodes[i].name, old.nodes[i].parent) != (new.nodes[i].name, new.nodes[i].parent)
    }
    return FrameworkDelta(
        added=frozenset(new_ids - old_ids),
        removed=frozenset(old_ids - new_ids),
        changed=frozenset(changed),
        layer_added=new.depth > old.depth,
    )


# -- file I/O ----------------------------------------------------------------


def parse_framework(text: str) -> SectorTree:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 4:
            raise MalformedRecord(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
        node_id, parent, ordinal, name = parts
        try:
            order = int(ordinal)
        except ValueError:
            raise MalformedRecord(f"line {lineno}: ordinal {ordinal!r} is not an integer") from None
        rows.append((order, lineno, node_id.strip(), parent.strip(), name))
    rows.sort(key=lambda r: (r[0], r[1]))
    return SectorTree((node_id, parent, name) for _, _, node_id, parent, name in rows)


def load_framework(path: str | os.PathLike) -> SectorTree:
    return parse_framework(Path(path).read_text(encoding="utf-8"))


def dump_framework(tree: SectorTree) -> str:
    lines = ["# id\tparent\tordinal\tname"]
    for nid in tree.depth_first_index():
        node = tree[nid]
        ordinal = tree.children(node.parent).index(nid)
        lines.append(f"{nid}\t{node.parent}\t{ordinal}\t{node.name}")
    return "\n".join(lines) + "\n"


def save_framework(tree: SectorTree, path: str | os.PathLike) -> None:
    atomic_write_text(path, dump_framework(tree))


def show(tree: SectorTree, counts: Mapping[str, int] | None = None) -> str:
    lines = []
    for i, nid in enumerate(tree.depth_first_index(), 1):
        node = tree[nid]
        suffix = f" [{counts.get(nid, 0)}]" if counts is not None else ""
        lines.append(f"{'  ' * (node.depth - 1)}s{i} {node.name} ({nid}){suffix}")
    return "\n".join(lines)
