"""Simulated CSP stores, the trusted index server, and the warehouse facade.

Each CSP keeps its slice of every shared table (records in insertion
order, positions feed its signature tree), an alive/failed flag for
experiments, and monotone byte counters. The index server keeps the
Type I location bitmaps, Type II plaintext ordered indices and the
Type III derived-column registry; by design it is a trusted node, so
order keys are stored in the clear there.

On disk (all integers decimal text):
    <root>/csp<i>/<table>.shares     tab-separated records, share lists
                                     comma-joined, NULL literal for nulls
    <root>/csp<i>/<table>.sigtree    record-layer (level, index, value)
    <root>/csp<i>/_tables.sigtree    table order plus table-layer triples
    <root>/csp<i>/state              alive flag and byte counters
    <root>/index/type1.bitmap        table, pk, bitmap lines
    <root>/index/type2/<t>.<a>.idx   one JSON [key, pk] entry per line
"""

from __future__ import annotations

import json
from bisect import bisect_left, bisect_right, insort
from dataclasses import dataclass
from datetime import timedelta
from fractions import Fraction
from itertools import combinations
from pathlib import Path

from .errors import (
    CspUnavailable,
    DuplicateTable,
    EmptyInput,
    MissingShare,
    NotEnoughAliveCsps,
    NotIndexed,
    SchemaMismatch,
    UnknownParticipant,
    UnknownRecordPosition,
    UnknownTable,
)
from .keyed import KeyMaterial
from .sharing import (
    DEFAULT_BIAS,
    PLAIN_KINDS,
    _EPOCH,
    Column,
    Schema,
    ShareBundle,
    decode,
    group_from_bitmap,
    recover_share,
    reconstruct_value,
    share_record,
)
from .sigtree import BreachReport, SignatureTree, WaryTree

NULL_LITERAL = "NULL"


@dataclass
class StoredRecord:
    pk: int
    plain: dict[str, int]                       # fk columns
    shares: dict[str, tuple[int, ...] | None]   # this CSP's chunks, None = null


def canonical_record_bytes(schema: Schema, rec: StoredRecord) -> bytes:
    """Signature input: pk, then every non-key column in schema order,
    8-byte big-endian per integer, a single 0xFF for null."""
    out = [rec.pk.to_bytes(8, "big")]
    for col in schema.columns[1:]:
        if col.kind == "fk":
            out.append(rec.plain[col.name].to_bytes(8, "big"))
            continue
        chunks = rec.shares.get(col.name)
        if chunks is None:
            out.append(b"\xff")
        else:
            out.extend(c.to_bytes(8, "big") for c in chunks)
    return b"".join(out)


def _record_line(schema: Schema, rec: StoredRecord) -> str:
    fields = [str(rec.pk)]
    for col in schema.columns[1:]:
        if col.kind == "fk":
            fields.append(str(rec.plain[col.name]))
        else:
            chunks = rec.shares.get(col.name)
            fields.append(NULL_LITERAL if chunks is None else ",".join(map(str, chunks)))
    return "\t".join(fields)


def _parse_record_line(schema: Schema, line: str) -> StoredRecord:
    fields = line.rstrip("\n").split("\t")
    pk = int(fields[0])
    plain: dict[str, int] = {}
    shares: dict[str, tuple[int, ...] | None] = {}
    for col, raw in zip(schema.columns[1:], fields[1:]):
        if col.kind == "fk":
            plain[col.name] = int(raw)
        elif raw == NULL_LITERAL:
            shares[col.name] = None
        else:
            shares[col.name] = tuple(int(x) for x in raw.split(","))
    return StoredRecord(pk=pk, plain=plain, shares=shares)


class CspStore:
    """One provider: table slices, its signature tree, failure state."""

    def __init__(self, index: int, w: int, km: KeyMaterial):
        self.index = index
        self.km = km
        self.alive = True
        self.tables: dict[str, list[StoredRecord]] = {}
        self.positions: dict[str, dict[int, int]] = {}
        self.sigtree = SignatureTree(index, w, km)
        self.bytes_stored = 0
        self.bytes_transferred = 0

    def _check_alive(self):
        if not self.alive:
            raise CspUnavailable(f"CSP {self.index} is failed")

    def create_table(self, table: str):
        if table in self.tables:
            raise DuplicateTable(table)
        self.tables[table] = []
        self.positions[table] = {}
        self.sigtree.create_table(table)

    def has_table(self, table: str) -> bool:
        return table in self.tables

    def _records(self, table: str) -> list[StoredRecord]:
        try:
            return self.tables[table]
        except KeyError:
            raise UnknownTable(table) from None

    def put_shared_record(self, schema: Schema, rec: StoredRecord) -> int:
        self._check_alive()
        records = self._records(schema.table)
        records.append(rec)
        pos = len(records) - 1
        self.positions[schema.table][rec.pk] = pos
        self.sigtree.insert_record(schema.table, canonical_record_bytes(schema, rec))
        self.bytes_stored += len(_record_line(schema, rec).encode()) + 1
        return pos

    def update_shared_record(self, schema: Schema, pos: int, rec: StoredRecord):
        self._check_alive()
        records = self._records(schema.table)
        if not 0 <= pos < len(records):
            raise UnknownRecordPosition(f"{schema.table}[{pos}] at CSP {self.index}")
        records[pos] = rec
        self.sigtree.update_record(schema.table, pos, canonical_record_bytes(schema, rec))
        self.bytes_stored += len(_record_line(schema, rec).encode()) + 1

    def get_record(self, table: str, pos: int, nbytes: int = 64) -> StoredRecord:
        self._check_alive()
        records = self._records(table)
        if not 0 <= pos < len(records):
            raise UnknownRecordPosition(f"{table}[{pos}] at CSP {self.index}")
        self.bytes_transferred += nbytes
        return records[pos]

    def position_of(self, table: str, pk: int) -> int:
        pos = self.positions.get(table, {}).get(pk)
        if pos is None:
            raise UnknownRecordPosition(f"pk {pk} not stored at CSP {self.index}")
        return pos

    def fetch_share(self, table: str, pk: int, attr: str) -> tuple[int, ...] | None:
        self._check_alive()
        rec = self._records(table)[self.position_of(table, pk)]
        chunks = rec.shares.get(attr)
        self.bytes_transferred += 8 * (len(chunks) if chunks else 1)
        return chunks

    def fetch_plain(self, table: str, pk: int, attr: str) -> int:
        self._check_alive()
        rec = self._records(table)[self.position_of(table, pk)]
        self.bytes_transferred += 8
        return rec.plain[attr]

    def null_pks(self, table: str, attr: str, pks) -> set[int]:
        """Primary keys among pks stored here whose attr is null."""
        self._check_alive()
        out = set()
        for pk in pks:
            pos = self.positions.get(table, {}).get(pk)
            if pos is not None and self._records(table)[pos].shares.get(attr) is None:
                out.add(pk)
        self.bytes_transferred += len(out) * 8
        return out

    def share_sum(self, table: str, attr: str, pks, combine=None) -> int:
        """Sum of this CSP's first-chunk shares of attr over stored pks.

        combine, when given, maps a record to the contribution instead
        (used for the X +- Y aggregates). The mod reduction happens at the
        caller; stored shares are already < p.
        """
        self._check_alive()
        total = 0
        n = 0
        for pk in pks:
            pos = self.positions.get(table, {}).get(pk)
            if pos is None:
                continue
            rec = self._records(table)[pos]
            if combine is not None:
                total += combine(rec)
            else:
                chunks = rec.shares.get(attr)
                if chunks is not None:
                    total += chunks[0]
            n += 1
        self.bytes_transferred += 8
        return total % self.km.p

    def tamper(self, table: str, pos: int, attr: str, chunk: int, new_share: int):
        """Overwrite one share without touching the signature tree."""
        records = self._records(table)
        if not 0 <= pos < len(records):
            raise UnknownRecordPosition(f"{table}[{pos}] at CSP {self.index}")
        chunks = records[pos].shares.get(attr)
        if chunks is None:
            raise UnknownRecordPosition(f"{table}[{pos}].{attr} is null")
        mutated = list(chunks)
        mutated[chunk] = new_share % self.km.p
        records[pos].shares[attr] = tuple(mutated)

    def reset_table(self, schema: Schema, records: list[StoredRecord]):
        """Replace a table slice wholesale (recovery path); rebuilds the
        record tree and patches the table layer by delta."""
        table = schema.table
        if table not in self.tables:
            raise UnknownTable(table)
        self.tables[table] = list(records)
        self.positions[table] = {r.pk: i for i, r in enumerate(records)}
        tree = self.sigtree
        old_root = tree.record_trees[table].root
        leaves = [tree.record_sig(canonical_record_bytes(schema, r)) for r in records]
        tree.record_trees[table] = WaryTree.from_leaves(tree.w, tree.p, leaves)
        new_root = tree.record_trees[table].root
        tree.table_layer.add_delta(tree.table_pos[table], new_root - old_root)
        for r in records:
            self.bytes_stored += len(_record_line(schema, r).encode()) + 1


class TypeOneIndex:
    """(table, pk) -> location bitmap, in insertion order per table."""

    def __init__(self):
        self.entries: dict[str, dict[int, str]] = {}

    def create_table(self, table: str):
        self.entries.setdefault(table, {})

    def set(self, table: str, pk: int, bitmap: str):
        self.entries.setdefault(table, {})[pk] = bitmap

    def bitmap(self, table: str, pk: int) -> str:
        try:
            return self.entries[table][pk]
        except KeyError:
            raise UnknownRecordPosition(f"no bitmap for {table} pk {pk}") from None

    def has(self, table: str, pk: int) -> bool:
        return pk in self.entries.get(table, {})

    def pks(self, table: str) -> list[int]:
        if table not in self.entries:
            raise UnknownTable(table)
        return list(self.entries[table])

    def pseudo_sum(self, table: str, pks, i: int, p: int) -> int:
        """Sum mod p of filtered pks whose shares are NOT stored at CSP i;
        this is the quantity fed to HE2 in share-space aggregation."""
        total = 0
        for pk in pks:
            if self.bitmap(table, pk)[i - 1] == "0":
                total += pk
        return total % p


class TypeTwoIndex:
    """Plaintext ordered multimaps at the index server.

    Order keys are canonical integers (scaled reals, epoch days, 0/1
    booleans) or raw strings; nulls are simply absent.
    """

    def __init__(self):
        self.maps: dict[tuple[str, str], list[tuple]] = {}

    def register(self, table: str, attr: str):
        self.maps.setdefault((table, attr), [])

    def is_indexed(self, table: str, attr: str) -> bool:
        return (table, attr) in self.maps

    def _entries(self, table: str, attr: str) -> list[tuple]:
        try:
            return self.maps[(table, attr)]
        except KeyError:
            raise NotIndexed(f"{table}.{attr} has no Type II index") from None

    def insert(self, table: str, attr: str, key, pk: int):
        insort(self._entries(table, attr), (key, pk))

    def remove(self, table: str, attr: str, key, pk: int):
        entries = self._entries(table, attr)
        i = bisect_left(entries, (key, pk))
        if i < len(entries) and entries[i] == (key, pk):
            entries.pop(i)

    def lookup(self, table: str, attr: str, op: str, operand) -> set[int]:
        entries = self._entries(table, attr)
        if op == "=":
            lo = bisect_left(entries, (operand,))
            hi = bisect_right(entries, (operand, float("inf"))) if entries else 0
            return {pk for _, pk in entries[lo:hi] if _ == operand}
        if op in ("!=", "<>"):
            return {pk for k, pk in entries if k != operand}
        if op == "<":
            return {pk for k, pk in entries[: bisect_left(entries, (operand,))]}
        if op == "<=":
            return {pk for k, pk in entries if k <= operand}
        if op == ">":
            return {pk for k, pk in entries if k > operand}
        if op == ">=":
            return {pk for k, pk in entries[bisect_left(entries, (operand,)):]}
        if op == "between":
            lo, hi = operand
            return {pk for k, pk in entries if lo <= k <= hi}
        if op == "in":
            wanted = set(operand)
            return {pk for k, pk in entries if k in wanted}
        raise NotIndexed(f"unsupported predicate {op!r}")

    def aggregate(self, table: str, attr: str, fn: str, pks) -> int:
        """MAX/MIN/MEDIAN return the extremal or median record's pk;
        COUNT returns the cardinality (non-null by construction)."""
        entries = self._entries(table, attr)
        filtered = [(k, pk) for k, pk in entries if pk in pks]
        if fn == "count":
            return len(filtered)
        if not filtered:
            raise EmptyInput(f"{fn} over empty {table}.{attr} filter")
        if fn == "max":
            return filtered[-1][1]
        if fn == "min":
            return filtered[0][1]
        if fn == "median":
            # lower middle of the (value, pk) order keeps it deterministic
            return filtered[(len(filtered) - 1) // 2][1]
        raise EmptyInput(f"unknown index aggregate {fn!r}")

    def value_map(self, table: str, attr: str) -> dict[int, object]:
        return {pk: k for k, pk in self._entries(table, attr)}


@dataclass(frozen=True)
class DerivedColumn:
    """Type III registration: an extra shared column derived at load time."""
    table: str
    name: str
    kind: str          # square | product | quotient
    x: str
    y: str | None = None
    scale: int = 0     # decimal scale of the derived value

    def compute(self, row: dict) -> Fraction | None:
        xv = row.get(self.x)
        if xv is None:
            return None
        x = xv if isinstance(xv, Fraction) else Fraction(str(xv))
        if self.kind == "square":
            return x * x
        yv = row.get(self.y)
        if yv is None:
            return None
        y = yv if isinstance(yv, Fraction) else Fraction(str(yv))
        if self.kind == "product":
            return x * y
        if self.kind == "quotient":
            # quotients rarely terminate; round to the registered scale
            scaled = round(x / y * 10**self.scale)
            return Fraction(scaled, 10**self.scale)
        raise SchemaMismatch(f"unknown derived kind {self.kind!r}")


class TypeThreeRegistry:
    def __init__(self):
        self.columns: dict[str, list[DerivedColumn]] = {}

    def register(self, col: DerivedColumn):
        self.columns.setdefault(col.table, []).append(col)

    def for_table(self, table: str) -> list[DerivedColumn]:
        return self.columns.get(table, [])

    def find(self, table: str, kind: str, x: str, y: str | None = None) -> DerivedColumn | None:
        for col in self.for_table(table):
            if col.kind != kind:
                continue
            if kind == "square" and col.x == x:
                return col
            if kind == "product" and {col.x, col.y} == {x, y}:
                return col
            if kind == "quotient" and (col.x, col.y) == (x, y):
                return col
        return None


def order_key(value, col: Column):
    """Plaintext order key for a Type II entry.

    Numeric kinds map to signed integers (scaled for reals, epoch days for
    dates, 0/1 for booleans) so comparisons match plaintext semantics;
    strings stay strings; None means the value is absent from the index.
    """
    if value is None:
        return None
    kind = col.kind
    if kind in ("key", "fk", "int"):
        return int(value)
    if kind == "bool":
        return int(bool(value))
    if kind == "date":
        return (value - _EPOCH).days
    if kind == "real":
        v = value if isinstance(value, Fraction) else Fraction(str(value))
        return int(round(v * 10**col.scale))
    if kind == "string":
        return str(value)
    raise SchemaMismatch(f"no order key for kind {kind!r}")


def display_value(key, col: Column):
    """Inverse of order_key: canonical index key back to a plaintext value."""
    if key is None:
        return None
    kind = col.kind
    if kind == "real":
        return Fraction(key, 10**col.scale)
    if kind == "date":
        return _EPOCH + timedelta(days=key)
    if kind == "bool":
        return bool(key)
    return key


class Warehouse:
    """Data-owner view over the n simulated CSPs plus the index server.

    Everything the trusted side does goes through here: table creation,
    sharing records out, reconstructing values, signature verification,
    failure and tamper injection, and recovery of a lost CSP's slice.
    """

    def __init__(self, km: KeyMaterial, w: int = 3, weights=None, bias: int = None,
                 svm_prices=None):
        self.km = km
        self.w = w
        self.weights = tuple(weights) if weights is not None else (1.0,) * km.n
        self.bias = DEFAULT_BIAS if bias is None else bias
        self.svm_prices = tuple(svm_prices) if svm_prices is not None else None
        self.csps = {i: CspStore(i, w, km) for i in range(1, km.n + 1)}
        self.type1 = TypeOneIndex()
        self.type2 = TypeTwoIndex()
        self.type3 = TypeThreeRegistry()
        self.schemas: dict[str, Schema] = {}
        self.table_order: list[str] = []
        self.indexed_attrs: dict[str, list[str]] = {}

    # participants

    def alive_csps(self) -> list[int]:
        return [i for i in sorted(self.csps) if self.csps[i].alive]

    def inject_failure(self, i: int):
        self.csps[i].alive = False

    def heal(self, i: int):
        self.csps[i].alive = True

    def _ordered_alive(self, exclude=()) -> list[int]:
        alive = [i for i in self.alive_csps() if i not in exclude]
        if self.svm_prices is None:
            return alive
        return sorted(alive, key=lambda i: (self.svm_prices[i - 1], i))

    def rg_candidates(self, exclude=()):
        """Deterministic sequence of reconstruction groups: cheapest-first,
        then the remaining t-subsets in combination order for retries."""
        order = self._ordered_alive(exclude)
        if len(order) < self.km.t:
            raise NotEnoughAliveCsps(
                f"need t={self.km.t} alive CSPs for reconstruction, have {len(order)}"
            )
        for combo in combinations(order, self.km.t):
            yield tuple(sorted(combo))

    def choose_rg(self, exclude=()) -> tuple[int, ...]:
        return next(self.rg_candidates(exclude))

    def _validate_rg(self, rg) -> tuple[int, ...]:
        rg = tuple(sorted(set(rg)))
        for i in rg:
            if i not in self.csps:
                raise UnknownParticipant(f"no CSP {i}")
            if not self.csps[i].alive:
                raise CspUnavailable(f"CSP {i} in reconstruction group is failed")
        return rg

    # schema registration

    def _schema(self, table: str) -> Schema:
        try:
            return self.schemas[table]
        except KeyError:
            raise UnknownTable(table) from None

    def _register(self, schema: Schema, index_attrs=(), derived=()) -> Schema:
        if schema.table in self.schemas:
            raise DuplicateTable(schema.table)
        columns = list(schema.columns)
        for d in derived:
            if d.table != schema.table:
                raise SchemaMismatch(f"derived column {d.name} targets {d.table}")
            columns.append(Column(d.name, "real" if d.scale else "int", scale=d.scale))
            self.type3.register(d)
        full = Schema(schema.table, tuple(columns))
        self.schemas[full.table] = full
        self.table_order.append(full.table)
        self.type1.create_table(full.table)
        indexed = []
        for col in full.columns[1:]:
            if col.kind == "fk" or col.name in index_attrs:
                self.type2.register(full.table, col.name)
                indexed.append(col.name)
        missing = set(index_attrs) - {c.name for c in full.columns}
        if missing:
            raise SchemaMismatch(f"cannot index unknown columns {sorted(missing)}")
        self.indexed_attrs[full.table] = indexed
        return full

    def create_table(self, schema: Schema, index_attrs=(), derived=()) -> Schema:
        full = self._register(schema, index_attrs, derived)
        for csp in self.csps.values():
            csp.create_table(full.table)
        return full

    # loading records

    def _with_derived(self, table: str, row: dict) -> dict:
        full = dict(row)
        for d in self.type3.for_table(table):
            full[d.name] = d.compute(full)
        return full

    def _stored_record(self, bundle: ShareBundle, i: int) -> StoredRecord:
        shares = {
            attr: (None if per_csp is None else per_csp[i])
            for attr, per_csp in bundle.shares.items()
        }
        return StoredRecord(pk=bundle.pk, plain=dict(bundle.plain), shares=shares)

    def insert(self, table: str, row: dict) -> int:
        """Share one record out; an existing primary key means update in
        place at the original storage group."""
        schema = self._schema(table)
        full = self._with_derived(table, row)
        pk = int(full[schema.key])
        if self.type1.has(table, pk):
            self._update(schema, pk, full)
            return pk
        bundle = share_record(
            full, schema, self.weights, self.alive_csps(), self.km, bias=self.bias
        )
        for i in sorted(bundle.group.sg):
            self.csps[i].put_shared_record(schema, self._stored_record(bundle, i))
        self.type1.set(table, pk, bundle.group.bitmap)
        self._index_row(schema, pk, full, old=None)
        return pk

    def _update(self, schema: Schema, pk: int, full: dict):
        table = schema.table
        group = group_from_bitmap(self.type1.bitmap(table, pk))
        for i in sorted(group.sg):
            if not self.csps[i].alive:
                raise CspUnavailable(
                    f"CSP {i} stores pk {pk} of {table} and is failed; recover first"
                )
        bundle = share_record(
            full, schema, self.weights, self.alive_csps(), self.km,
            bias=self.bias, group=group,
        )
        old = {
            attr: self.type2.value_map(table, attr).get(pk)
            for attr in self.indexed_attrs.get(table, [])
        }
        for i in sorted(group.sg):
            pos = self.csps[i].position_of(table, pk)
            self.csps[i].update_shared_record(schema, pos, self._stored_record(bundle, i))
        self._index_row(schema, pk, full, old=old)

    def _index_row(self, schema: Schema, pk: int, full: dict, old):
        for attr in self.indexed_attrs.get(schema.table, []):
            if old is not None and old.get(attr) is not None:
                self.type2.remove(schema.table, attr, old[attr], pk)
            key = order_key(full.get(attr), schema.column(attr))
            if key is not None:
                self.type2.insert(schema.table, attr, key, pk)

    def load_rows(self, table: str, rows) -> int:
        count = 0
        for row in rows:
            self.insert(table, row)
            count += 1
        return count

    # index server passthroughs

    def type2_lookup(self, table: str, attr: str, op: str, operand) -> set[int]:
        return self.type2.lookup(table, attr, op, operand)

    def type2_aggregate(self, table: str, attr: str, fn: str, pks) -> int:
        return self.type2.aggregate(table, attr, fn, pks)

    def type1_pseudo_sum(self, table: str, pks, i: int) -> int:
        return self.type1.pseudo_sum(table, pks, i, self.km.p)

    # reconstruction

    def reconstruct_value(self, table: str, pk: int, attr: str, rg=None):
        """Fetch shares from rg and rebuild one attribute's plaintext."""
        schema = self._schema(table)
        col = schema.column(attr)
        group = group_from_bitmap(self.type1.bitmap(table, pk))
        rg = self._validate_rg(rg) if rg is not None else self.choose_rg()
        if col.kind in PLAIN_KINDS:
            if col.name == schema.key:
                return pk
            donor = next(i for i in rg if i in group.sg)
            return self.csps[donor].fetch_plain(table, pk, attr)
        fetched = {
            i: self.csps[i].fetch_share(table, pk, attr)
            for i in rg if i in group.sg
        }
        if not fetched:
            raise MissingShare(f"no CSP of rg {rg} stores pk {pk} of {table}")
        lengths = {len(c) for c in fetched.values() if c is not None}
        if any(c is None for c in fetched.values()):
            if lengths:
                raise MissingShare(f"pk {pk} of {table}: null marks disagree across CSPs")
            return None
        if len(lengths) != 1:
            raise MissingShare(f"pk {pk} of {table}: chunk counts disagree across CSPs")
        chunks = []
        for k in range(lengths.pop()):
            per_chunk = {i: c[k] for i, c in fetched.items()}
            chunks.append(reconstruct_value(pk, group.sg, per_chunk, rg, self.km))
        return decode(chunks, col.kind, scale=col.scale, bias=self.bias)

    def reconstruct_record(self, table: str, pk: int, rg=None) -> dict:
        schema = self._schema(table)
        rg = self._validate_rg(rg) if rg is not None else self.choose_rg()
        out = {schema.key: pk}
        for col in schema.columns[1:]:
            out[col.name] = self.reconstruct_value(table, pk, col.name, rg)
        return out

    def reconstruct_table(self, table: str, rg=None) -> list[dict]:
        rg = self._validate_rg(rg) if rg is not None else self.choose_rg()
        return [self.reconstruct_record(table, pk, rg) for pk in self.type1.pks(table)]

    # integrity

    def authoritative_sigs(self, i: int, table: str) -> list[int]:
        """Leaf signatures recomputed from what the CSP actually stores."""
        csp = self.csps[i]
        schema = self._schema(table)
        return [
            csp.sigtree.record_sig(canonical_record_bytes(schema, rec))
            for rec in csp.tables[table]
        ]

    def verify_csp(self, i: int, scope="whole") -> BreachReport:
        csp = self.csps[i]
        if not csp.alive:
            raise CspUnavailable(f"CSP {i} is failed")
        if scope == "whole":
            auth = {t: self.authoritative_sigs(i, t) for t in self.table_order}
        elif isinstance(scope, tuple):
            auth = {scope[0]: self.authoritative_sigs(i, scope[0])}
        else:
            auth = {scope: self.authoritative_sigs(i, scope)}
        return csp.sigtree.verify(auth, scope)

    def verify_all(self, scope="whole") -> dict[int, BreachReport]:
        return {i: self.verify_csp(i, scope) for i in self.alive_csps()}

    def inject_tamper(self, csp: int, table: str, pk: int, attr: str,
                      chunk: int = 0, delta: int = 1):
        """Flip one stored share without maintaining the signature tree."""
        store = self.csps[csp]
        pos = store.position_of(table, pk)
        current = store.tables[table][pos].shares[attr]
        store.tamper(table, pos, attr, chunk, (current[chunk] + delta) % self.km.p)

    # recovery

    def recover_csp_shares(self, target: int, rg=None) -> int:
        """Regenerate every share a CSP lost, from t healthy peers.

        Walks all tables in creation order, rebuilds the target's slice
        record by record via polynomial re-evaluation, and resets its
        signature trees. Returns the number of share values regenerated.
        """
        if target not in self.csps:
            raise UnknownParticipant(f"no CSP {target}")
        if rg is None:
            rg = self.choose_rg(exclude=(target,))
        else:
            rg = self._validate_rg(rg)
            if target in rg:
                raise CspUnavailable(f"CSP {target} cannot donate to its own recovery")
            if len(rg) != self.km.t:
                raise NotEnoughAliveCsps(
                    f"recovery needs t={self.km.t} donors, got {len(rg)}"
                )
        regenerated = 0
        for table in self.table_order:
            schema = self._schema(table)
            records = []
            for pk in self.type1.pks(table):
                group = group_from_bitmap(self.type1.bitmap(table, pk))
                if target not in group.sg:
                    continue
                donors = [j for j in rg if j in group.sg]
                plain = {
                    c.name: self.csps[donors[0]].fetch_plain(table, pk, c.name)
                    for c in schema.plain_columns() if c.name != schema.key
                }
                shares: dict[str, tuple[int, ...] | None] = {}
                for col in schema.data_columns():
                    donor_chunks = {
                        j: self.csps[j].fetch_share(table, pk, col.name) for j in donors
                    }
                    if donor_chunks[donors[0]] is None:
                        shares[col.name] = None
                        continue
                    count = len(donor_chunks[donors[0]])
                    rebuilt = []
                    for k in range(count):
                        per_chunk = {j: donor_chunks[j][k] for j in donors}
                        rebuilt.append(
                            recover_share(pk, group.sg, per_chunk, rg, target, self.km)
                        )
                        regenerated += 1
                    shares[col.name] = tuple(rebuilt)
                records.append(StoredRecord(pk=pk, plain=plain, shares=shares))
            self.csps[target].reset_table(schema, records)
        return regenerated

    # persistence

    def save(self, root) -> None:
        """Write the whole simulated deployment under root.

        One directory per CSP with its table slices, signature trees and
        state; the index server's files under index/. Plain text, decimal
        integers throughout, so diffs stay readable.
        """
        root = Path(root)
        for i, csp in self.csps.items():
            d = root / f"csp{i}"
            d.mkdir(parents=True, exist_ok=True)
            for table in self.table_order:
                schema = self.schemas[table]
                lines = [_record_line(schema, r) for r in csp.tables[table]]
                (d / f"{table}.shares").write_text(
                    "".join(line + "\n" for line in lines)
                )
                (d / f"{table}.sigtree").write_text(
                    _triples_text(csp.sigtree.record_trees[table].triples())
                )
            layer = ["\t".join(["tables"] + csp.sigtree.table_order)]
            layer.append(_triples_text(csp.sigtree.table_layer.triples()).rstrip("\n"))
            (d / "_tables.sigtree").write_text(
                "\n".join(part for part in layer if part) + "\n"
            )
            (d / "state").write_text(
                f"alive\t{int(csp.alive)}\n"
                f"bytes_stored\t{csp.bytes_stored}\n"
                f"bytes_transferred\t{csp.bytes_transferred}\n"
            )
        idx = root / "index"
        idx.mkdir(parents=True, exist_ok=True)
        bitmap_lines = []
        for table in self.table_order:
            for pk in self.type1.pks(table):
                bitmap_lines.append(f"{table}\t{pk}\t{self.type1.bitmap(table, pk)}")
        (idx / "type1.bitmap").write_text(
            "".join(line + "\n" for line in bitmap_lines)
        )
        t2 = idx / "type2"
        t2.mkdir(exist_ok=True)
        for (table, attr), entries in self.type2.maps.items():
            lines = [json.dumps([key, pk]) for key, pk in entries]
            (t2 / f"{table}.{attr}.idx").write_text(
                "".join(line + "\n" for line in lines)
            )
        (idx / "tables").write_text(
            "".join(name + "\n" for name in self.table_order)
        )

    @classmethod
    def load(cls, root, km: KeyMaterial, table_specs, w: int = 3, weights=None,
             bias: int = None, svm_prices=None) -> "Warehouse":
        """Rebuild a Warehouse from disk.

        table_specs: iterable of (schema, index_attrs, derived) exactly as
        passed to create_table; the on-disk tables file fixes the order.
        """
        root = Path(root)
        wh = cls(km, w=w, weights=weights, bias=bias, svm_prices=svm_prices)
        specs = {}
        for schema, index_attrs, derived in table_specs:
            specs[schema.table] = (schema, index_attrs, derived)
        order = [
            line for line in (root / "index" / "tables").read_text().splitlines() if line
        ]
        for name in order:
            if name not in specs:
                raise UnknownTable(f"{name} on disk but not configured")
            wh._register(*specs[name])
        for i, csp in wh.csps.items():
            d = root / f"csp{i}"
            state = dict(
                line.split("\t") for line in (d / "state").read_text().splitlines()
            )
            csp.alive = state["alive"] == "1"
            csp.bytes_stored = int(state["bytes_stored"])
            csp.bytes_transferred = int(state["bytes_transferred"])
            layer_lines = (d / "_tables.sigtree").read_text().splitlines()
            names = layer_lines[0].split("\t")[1:]
            csp.sigtree.table_order = names
            csp.sigtree.table_pos = {nm: j for j, nm in enumerate(names)}
            csp.sigtree.table_layer = WaryTree.from_triples(
                w, km.p, _parse_triples(layer_lines[1:])
            )
            for table in order:
                schema = wh.schemas[table]
                records = [
                    _parse_record_line(schema, line)
                    for line in (d / f"{table}.shares").read_text().splitlines()
                    if line
                ]
                csp.tables[table] = records
                csp.positions[table] = {r.pk: pos for pos, r in enumerate(records)}
                csp.sigtree.record_trees[table] = WaryTree.from_triples(
                    w, km.p,
                    _parse_triples((d / f"{table}.sigtree").read_text().splitlines()),
                )
        for line in (root / "index" / "type1.bitmap").read_text().splitlines():
            if not line:
                continue
            table, pk, bitmap = line.split("\t")
            wh.type1.set(table, int(pk), bitmap)
        t2 = root / "index" / "type2"
        if t2.is_dir():
            for path in sorted(t2.glob("*.idx")):
                table, attr = path.name[: -len(".idx")].split(".", 1)
                entries = wh.type2.maps.setdefault((table, attr), [])
                for line in path.read_text().splitlines():
                    if line:
                        key, pk = json.loads(line)
                        entries.append((key, pk))
                entries.sort()
        return wh


def _triples_text(triples) -> str:
    return "".join(f"{level}\t{index}\t{value}\n" for level, index, value in triples)


def _parse_triples(lines) -> list[tuple[int, int, int]]:
    out = []
    for line in lines:
        if line:
            level, index, value = line.split("\t")
            out.append((int(level), int(index), int(value)))
    return out
