"""Additive w-ary signature trees, one per CSP.

Every internal node holds the mod-p sum of its children, so the root is
the sum of all leaf signatures. Two layers: a record tree per table whose
leaves are HF*_i(record bytes), and a table layer whose leaf j carries
HF*_i(0) plus the j-th table's record-signature total. Appends and updates
propagate a delta along one root path; verification walks top-down and
only descends into children whose stored sum disagrees with an
authoritative recomputation, which pins a breach to its exact leaf in
about w * depth comparisons.

The tree is deliberately not hash-chained: additivity is what lets a
record update touch O(depth) nodes, and compensating double edits are the
inner signature's problem, not this layer's.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DuplicateTable, UnknownRecordPosition, UnknownTable
from .keyed import KeyMaterial

_EMPTY_MARKER_BYTES = (0).to_bytes(8, "big")


class WaryTree:
    """Append-only additive tree; levels[0] is the leaf level."""

    def __init__(self, w: int, p: int):
        if w < 2:
            raise ValueError(f"fan-out must be >= 2, got {w}")
        self.w = w
        self.p = p
        self.levels: list[list[int]] = [[]]

    @classmethod
    def from_leaves(cls, w: int, p: int, leaves) -> "WaryTree":
        tree = cls(w, p)
        for v in leaves:
            tree.append(v)
        return tree

    @classmethod
    def from_triples(cls, w: int, p: int, triples) -> "WaryTree":
        tree = cls(w, p)
        for level, idx, value in triples:
            while level >= len(tree.levels):
                tree.levels.append([])
            nodes = tree.levels[level]
            if idx != len(nodes):
                raise ValueError(f"non-contiguous triple ({level}, {idx})")
            nodes.append(value % p)
        return tree

    @property
    def leaf_count(self) -> int:
        return len(self.levels[0])

    @property
    def depth(self) -> int:
        """Node levels including the leaves."""
        return len(self.levels) if self.levels[0] else 0

    @property
    def root(self) -> int:
        if not self.levels[0]:
            return 0
        return self.levels[-1][0]

    def leaf(self, g: int) -> int:
        if not 0 <= g < len(self.levels[0]):
            raise UnknownRecordPosition(f"no leaf {g}")
        return self.levels[0][g]

    def append(self, value: int) -> int:
        value %= self.p
        self.levels[0].append(value)
        pos = len(self.levels[0]) - 1
        idx, delta = pos, value
        level = 0
        while not (len(self.levels[level]) == 1 and level == len(self.levels) - 1):
            if level + 1 == len(self.levels):
                self.levels.append([])
            parent = idx // self.w
            upper = self.levels[level + 1]
            if parent < len(upper):
                upper[parent] = (upper[parent] + delta) % self.p
            else:
                # fresh parent: nothing above has counted its children yet
                val = sum(self.levels[level][parent * self.w:(parent + 1) * self.w]) % self.p
                upper.append(val)
                delta = val
            level += 1
            idx = parent
        return pos

    def add_delta(self, g: int, delta: int):
        if not 0 <= g < len(self.levels[0]):
            raise UnknownRecordPosition(f"no leaf {g}")
        delta %= self.p
        idx = g
        for level in range(len(self.levels)):
            self.levels[level][idx] = (self.levels[level][idx] + delta) % self.p
            idx //= self.w

    def set_leaf(self, g: int, value: int):
        self.add_delta(g, value - self.leaf(g))

    def triples(self) -> list[tuple[int, int, int]]:
        return [
            (level, idx, v)
            for level, nodes in enumerate(self.levels)
            for idx, v in enumerate(nodes)
        ]


@dataclass(frozen=True)
class BreachEntry:
    table: str
    position: int
    path: tuple[tuple[int, int], ...]  # (level, index) pairs walked, root first


@dataclass
class BreachReport:
    entries: list[BreachEntry] = field(default_factory=list)
    inspected: int = 0

    @property
    def ok(self) -> bool:
        return not self.entries


class SignatureTree:
    """Both layers for one CSP, plus verification against recomputed leaves."""

    def __init__(self, csp: int, w: int, km: KeyMaterial):
        self.csp = csp
        self.w = w
        self.km = km
        self.p = km.p
        self.table_layer = WaryTree(w, km.p)
        self.record_trees: dict[str, WaryTree] = {}
        self.table_pos: dict[str, int] = {}
        self.table_order: list[str] = []

    @property
    def empty_marker(self) -> int:
        return self.km.hf_star(self.csp, _EMPTY_MARKER_BYTES)

    @property
    def root(self) -> int:
        return self.table_layer.root

    def record_sig(self, record_bytes: bytes) -> int:
        return self.km.hf_star(self.csp, record_bytes)

    def create_table(self, table: str):
        if table in self.record_trees:
            raise DuplicateTable(table)
        self.record_trees[table] = WaryTree(self.w, self.p)
        self.table_pos[table] = self.table_layer.append(self.empty_marker)
        self.table_order.append(table)

    def insert_record(self, table: str, record_bytes: bytes) -> int:
        tree = self._tree(table)
        sig = self.record_sig(record_bytes)
        pos = tree.append(sig)
        self.table_layer.add_delta(self.table_pos[table], sig)
        return pos

    def update_record(self, table: str, g: int, new_record_bytes: bytes):
        tree = self._tree(table)
        new_sig = self.record_sig(new_record_bytes)
        delta = (new_sig - tree.leaf(g)) % self.p
        tree.add_delta(g, delta)
        self.table_layer.add_delta(self.table_pos[table], delta)

    def _tree(self, table: str) -> WaryTree:
        try:
            return self.record_trees[table]
        except KeyError:
            raise UnknownTable(table) from None

    # verification

    def verify(
        self,
        authoritative: dict[str, list[int]],
        scope: str | tuple[str, int] = "whole",
    ) -> BreachReport:
        """Compare stored sums against trees rebuilt from authoritative leaf
        signatures, descending only where they disagree.

        authoritative maps table -> leaf signatures recomputed from the
        actual stored records; it must cover the scope (every table for
        "whole"). Every stored-node comparison counts toward
        report.inspected, the top check included.
        """
        report = BreachReport()

        def auth_tree(table: str) -> WaryTree:
            return WaryTree.from_leaves(self.w, self.p, authoritative[table])

        if isinstance(scope, tuple):
            table, g = scope
            tree = self._tree(table)
            report.inspected += 1
            if tree.leaf(g) != auth_tree(table).leaf(g):
                report.entries.append(BreachEntry(table, g, ((0, g),)))
            return report

        if scope == "whole":
            auth_tables = {t: auth_tree(t) for t in self.table_order}
            layer_leaves = [
                (self.empty_marker + auth_tables[t].root) % self.p
                for t in self.table_order
            ]
            auth_layer = WaryTree.from_leaves(self.w, self.p, layer_leaves)
            report.inspected += 1
            if self.table_layer.root == auth_layer.root:
                return report
            for leaf_idx, path in self._descend(self.table_layer, auth_layer, report):
                table = self.table_order[leaf_idx]
                for g, rec_path in self._descend(self._tree(table), auth_tables[table], report):
                    report.entries.append(BreachEntry(table, g, path + rec_path))
            return report

        tree = self._tree(scope)
        auth = auth_tree(scope)
        report.inspected += 1
        if tree.root != auth.root:
            for g, rec_path in self._descend(tree, auth, report):
                report.entries.append(BreachEntry(scope, g, rec_path))
        return report

    def _descend(self, stored: WaryTree, auth: WaryTree, report: BreachReport):
        """Walk failing nodes from the root down; yields (leaf index, path).

        The subtree root is already known bad when this is called, so only
        children are compared on the way down.
        """
        if stored.leaf_count == 0:
            return []
        out = []
        top = len(stored.levels) - 1
        pending = [(top, 0, ((top, 0),))]
        while pending:
            level, idx, path = pending.pop()
            if level == 0:
                out.append((idx, path))
                continue
            lo, hi = idx * stored.w, (idx + 1) * stored.w
            for child in range(lo, min(hi, len(stored.levels[level - 1]))):
                report.inspected += 1
                if stored.levels[level - 1][child] != auth.levels[level - 1][child]:
                    pending.append((level - 1, child, path + ((level - 1, child),)))
        return out
