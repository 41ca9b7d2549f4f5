"""Shared OLAP cubes: build, refresh and slice without full rebuilds.

A cube is an ordinary shared table (id ``cube:<name>``) whose rows live
at every provider. Base-table sharing leans on pk-derived pseudo shares
so a subset of providers can hold a record; a cube cell has no source
pk to derive them from, so its polynomial is pinned instead at the t-2
reserved filler abscissas with seeded pseudo-random ordinates. Every
provider stores a real share and any t of them rebuild a measure along
with its inner signature.

Dimension columns hold plaintext group keys and double as the level
encoding: NULL means "aggregated away". The grand total row is NULL
across every dimension; a per-year row keeps only the year, and so on
through the lattice of hierarchy prefixes.

Refreshing after new facts never rebuilds. SUM cells absorb an Eq-2
style correction added share by share at each provider (no cell is
ever reconstructed); COUNT cells are reconstructed, incremented and
re-shared; MAX/MIN cells re-share the value of the new extremal record
found through the record index.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

from .errors import (
    CspUnavailable,
    EmptyInput,
    NotIndexed,
    SchemaMismatch,
    UnknownRecordPosition,
    UnknownTable,
    UnsupportedFeature,
)
from .field import lagrange_interpolate
from .keyed import KeyMaterial
from .sharing import Column, Schema, encode
from .store import StoredRecord, Warehouse, display_value, order_key
from .query import (
    GroupSource,
    exec_count,
    exec_minmax_count,
    exec_sum,
    exec_sum_combined,
    group_key_fn,
)

MEASURE_FNS = ("sum", "count", "min", "max", "avg")


@dataclass(frozen=True)
class CubeHierarchy:
    """One dimension, coarse to fine (e.g. year, month, day).

    Attributes live either on the fact table itself (table=None) or on a
    dimension table reached through the fact's fk column.
    """
    attrs: tuple[str, ...]
    table: str | None = None
    fk: str | None = None


@dataclass(frozen=True)
class CubeMeasure:
    fn: str
    attr: str | None = None   # None counts rows; "x+y" / "x-y" sums a pair
    name: str | None = None   # cube column label, defaulted from fn and attr


@dataclass(frozen=True)
class CubeSpec:
    name: str
    table: str
    hierarchies: tuple[CubeHierarchy, ...]
    measures: tuple[CubeMeasure, ...]


def cube_table(spec: CubeSpec) -> str:
    return f"cube:{spec.name}"


def _split_pair(attr: str):
    for op in "+-":
        if op in attr:
            x, y = attr.split(op, 1)
            return x.strip(), op, y.strip()
    return None


def measure_label(m: CubeMeasure) -> str:
    if m.name:
        return m.name
    if m.attr is None:
        return f"{m.fn}_rows"
    pair = _split_pair(m.attr)
    if pair:
        x, op, y = pair
        word = "plus" if op == "+" else "minus"
        return f"{m.fn}_{x}_{word}_{y}"
    return f"{m.fn}_{m.attr}"


# storage layout: avg is never stored directly, its sum and count are


@dataclass(frozen=True)
class _StoredMeasure:
    column: Column
    fn: str                   # sum | sum_pair | count | min | max
    attr: str | None = None
    x: str | None = None
    y: str | None = None
    op: str | None = None


def _sum_column(schema: Schema, name: str, attr: str) -> Column:
    col = schema.column(attr)
    if col.kind not in ("int", "real", "bool"):
        raise UnsupportedFeature(f"cannot sum a {col.kind} column into a cube")
    if col.kind == "real":
        return Column(name, "real", scale=col.scale)
    return Column(name, "int")


def _storage_measures(spec: CubeSpec, schema: Schema) -> list[_StoredMeasure]:
    out: list[_StoredMeasure] = []
    seen: set[str] = set()

    def add(sm: _StoredMeasure):
        if sm.column.name not in seen:
            seen.add(sm.column.name)
            out.append(sm)

    for m in spec.measures:
        if m.fn not in MEASURE_FNS:
            raise UnsupportedFeature(f"unknown cube measure {m.fn!r}")
        pair = _split_pair(m.attr) if m.attr else None
        if m.fn in ("sum", "avg"):
            if m.attr is None:
                raise SchemaMismatch(f"{m.fn.upper()} needs a measure attribute")
            if pair:
                x, op, y = pair
                cx, cy = schema.column(x), schema.column(y)
                if cx.scale != cy.scale:
                    raise SchemaMismatch(f"{x} and {y} have different scales")
                base = _sum_column(schema, _pair_name("sum", x, op, y),
                                   x if cx.kind == "real" else y)
                add(_StoredMeasure(base, "sum_pair", x=x, y=y, op=op))
            else:
                add(_StoredMeasure(_sum_column(schema, f"sum_{m.attr}", m.attr),
                                   "sum", attr=m.attr))
            if m.fn == "avg":
                counted = pair[0] if pair else m.attr
                add(_StoredMeasure(Column(f"count_{counted}", "int"),
                                   "count", attr=counted))
        elif m.fn == "count":
            if pair:
                raise UnsupportedFeature("COUNT over a pair is not supported")
            label = f"count_{m.attr}" if m.attr else "count_rows"
            add(_StoredMeasure(Column(label, "int"), "count", attr=m.attr))
        else:
            if m.attr is None or pair:
                raise UnsupportedFeature(f"{m.fn.upper()} needs a single attribute")
            col = schema.column(m.attr)
            add(_StoredMeasure(Column(f"{m.fn}_{m.attr}", col.kind, scale=col.scale),
                               m.fn, attr=m.attr))
    return out


def _pair_name(prefix: str, x: str, op: str, y: str) -> str:
    word = "plus" if op == "+" else "minus"
    return f"{prefix}_{x}_{word}_{y}"


def _dim_sources(wh: Warehouse, spec: CubeSpec) -> list[tuple[Column, GroupSource]]:
    """Cube dimension columns paired with their plaintext key resolution."""
    fact = spec.table
    fact_schema = wh.schemas[fact]
    out = []
    seen = set()
    for h in spec.hierarchies:
        if not h.attrs:
            raise SchemaMismatch("a cube hierarchy cannot be empty")
        for attr in h.attrs:
            if attr in seen:
                raise SchemaMismatch(f"duplicate cube dimension {attr}")
            seen.add(attr)
            if h.table is None:
                col = fact_schema.column(attr)
                if col.kind == "key":
                    src = GroupSource("pk", fact, attr, col)
                elif col.kind == "fk":
                    src = GroupSource("fk", fact, attr, col)
                else:
                    if not wh.type2.is_indexed(fact, attr):
                        raise NotIndexed(f"{fact}.{attr} must be indexed to key a cube")
                    src = GroupSource("fact_attr", fact, attr, col)
            else:
                if h.table not in wh.schemas:
                    raise UnknownTable(h.table)
                if h.fk is None:
                    raise SchemaMismatch(f"hierarchy on {h.table} needs the fact fk column")
                fk_col = fact_schema.column(h.fk)
                if fk_col.kind != "fk" or fk_col.fk_table not in (None, h.table):
                    raise SchemaMismatch(f"{fact}.{h.fk} does not reference {h.table}")
                dim_schema = wh.schemas[h.table]
                col = dim_schema.column(attr)
                if attr == dim_schema.key:
                    src = GroupSource("dim_pk", h.table, attr, col, fk=h.fk)
                else:
                    if not wh.type2.is_indexed(h.table, attr):
                        raise NotIndexed(f"{h.table}.{attr} must be indexed to key a cube")
                    src = GroupSource("dim_attr", h.table, attr, col, fk=h.fk)
            kind = "int" if col.kind in ("key", "fk") else col.kind
            out.append((Column(attr, kind, scale=col.scale), src))
    return out


def cube_schema(wh: Warehouse, spec: CubeSpec) -> Schema:
    """The cube's table shape: synthetic cell key, then one plaintext-keyed
    column per hierarchy attribute, then the stored measure columns."""
    if spec.table not in wh.schemas:
        raise UnknownTable(spec.table)
    dims = [col for col, _ in _dim_sources(wh, spec)]
    measures = [sm.column for sm in _storage_measures(spec, wh.schemas[spec.table])]
    clash = {c.name for c in dims} & {c.name for c in measures}
    if clash:
        raise SchemaMismatch(f"cube column name collision: {sorted(clash)}")
    return Schema(cube_table(spec), (Column("cell", "key"), *dims, *measures))


# sharing: every provider stores a real share, fillers replace pseudo shares


def _filler_ordinate(km: KeyMaterial, table: str, pk: int, attr: str,
                     chunk: int, j: int) -> int:
    msg = f"cubefill|{table}|{pk}|{attr}|{chunk}|{j}".encode()
    digest = hmac.new(km.seed, msg, hashlib.sha256).digest()
    return int.from_bytes(digest[:16], "big") % km.p


def share_cell_chunk(km: KeyMaterial, table: str, pk: int, attr: str,
                     chunk_index: int, value: int) -> dict[int, int]:
    """Shares of one cube field element for all n providers."""
    value %= km.p
    points = [(km.x_kd, value), (km.x_ks, km.he1(value))]
    for j in range(km.t - 2):
        points.append(
            (km.x_filler(j), _filler_ordinate(km, table, pk, attr, chunk_index, j))
        )
    f = lagrange_interpolate(points, km.p)
    return {i: f(km.x_id(i)) for i in range(1, km.n + 1)}


def _share_cell_value(wh: Warehouse, table: str, pk: int, col: Column, value):
    enc = encode(value, col.kind, scale=col.scale, bias=wh.bias, p=wh.km.p)
    if not enc.chunks:
        return None
    per_chunk = [
        share_cell_chunk(wh.km, table, pk, col.name, k, chunk)
        for k, chunk in enumerate(enc.chunks)
    ]
    return {
        i: tuple(m[i] for m in per_chunk) for i in range(1, wh.km.n + 1)
    }


def _put_cube_row(wh: Warehouse, schema: Schema, pk: int, row: dict):
    shared = {}
    for col in schema.columns[1:]:
        shared[col.name] = _share_cell_value(wh, schema.table, pk, col, row.get(col.name))
    for i in sorted(wh.csps):
        shares_i = {
            attr: (None if per_csp is None else per_csp[i])
            for attr, per_csp in shared.items()
        }
        wh.csps[i].put_shared_record(schema, StoredRecord(pk, {}, shares_i))
    wh.type1.set(schema.table, pk, "1" * wh.km.n)
    wh._index_row(schema, pk, row, old=None)


def _require_all_alive(wh: Warehouse):
    dead = [i for i in sorted(wh.csps) if not wh.csps[i].alive]
    if dead:
        raise CspUnavailable(
            f"cube rows live at every CSP; recover {dead} before writing"
        )


# lattice bookkeeping


def _lattice(spec: CubeSpec):
    return product(*(range(len(h.attrs) + 1) for h in spec.hierarchies))


def _active_flags(spec: CubeSpec, combo) -> list[bool]:
    flags = []
    for h, depth in zip(spec.hierarchies, combo):
        flags.extend(i < depth for i in range(len(h.attrs)))
    return flags


def _fact_keys(wh: Warehouse, spec: CubeSpec, pks) -> dict[int, tuple]:
    sources = _dim_sources(wh, spec)
    fns = [group_key_fn(wh, spec.table, src) for _, src in sources]
    out = {}
    for pk in pks:
        key = tuple(fn(pk) for fn in fns)
        if any(v is None for v in key):
            raise SchemaMismatch(
                f"fact {pk} has a NULL dimension value; NULL is reserved "
                "for cube superaggregates"
            )
        out[pk] = key
    return out


def _cells_by_key(wh: Warehouse, spec: CubeSpec) -> dict[tuple, int]:
    """Existing cube rows addressed by their (padded) dimension tuple."""
    table = cube_table(spec)
    dims = [col for col, _ in _dim_sources(wh, spec)]
    maps = [wh.type2.value_map(table, col.name) for col in dims]
    out = {}
    for pk in wh.type1.pks(table):
        key = tuple(
            display_value(vm.get(pk), col) for vm, col in zip(maps, dims)
        )
        out[key] = pk
    return out


def _sort_cell_keys(keys):
    return sorted(keys, key=lambda k: tuple(
        (v is None, isinstance(v, str), v) for v in k
    ))


def _nonnull(wh: Warehouse, table: str, attr: str, pks) -> list[int]:
    nulls: set[int] = set()
    for csp in wh.csps.values():
        nulls |= csp.null_pks(table, attr, pks)
    return sorted(set(pks) - nulls)


def _measure_value(wh: Warehouse, spec: CubeSpec, sm: _StoredMeasure, pks, rg):
    fact = spec.table
    if sm.fn == "sum":
        return exec_sum(wh, fact, sm.attr, pks, rg)
    if sm.fn == "sum_pair":
        return exec_sum_combined(wh, fact, sm.x, sm.y, sm.op, pks, rg)
    if sm.fn == "count":
        return exec_count(wh, fact, sm.attr, pks, rg)
    try:
        return exec_minmax_count(wh, fact, sm.attr, sm.fn, pks, rg)
    except EmptyInput:
        return None


def cube_build(wh: Warehouse, spec: CubeSpec, rg=None) -> int:
    """Aggregate every lattice cell through the share-space query paths and
    store the cube at all n providers. Returns the number of cells."""
    _require_all_alive(wh)
    schema = cube_schema(wh, spec)
    dims = [col for col, _ in _dim_sources(wh, spec)]
    stored = _storage_measures(spec, wh.schemas[spec.table])
    wh.create_table(schema, index_attrs=tuple(col.name for col in dims))
    rg = tuple(sorted(rg)) if rg is not None else wh.choose_rg()

    fact_pks = wh.type1.pks(spec.table)
    keys = _fact_keys(wh, spec, fact_pks)
    cell_pk = 0
    for combo in _lattice(spec):
        flags = _active_flags(spec, combo)
        groups: dict[tuple, list[int]] = {}
        for pk in fact_pks:
            cell = tuple(
                v if on else None for v, on in zip(keys[pk], flags)
            )
            groups.setdefault(cell, []).append(pk)
        for cell in _sort_cell_keys(groups):
            cell_pk += 1
            row = dict(zip((c.name for c in dims), cell))
            for sm in stored:
                row[sm.column.name] = _measure_value(wh, spec, sm, groups[cell], rg)
            _put_cube_row(wh, schema, cell_pk, row)
    return cell_pk


# refresh


def _bias_correction_poly(km: KeyMaterial, table: str, terms: int, bias: int):
    """Polynomial subtracted share-wise so the updated cell keeps exactly
    one bias offset: it carries terms*bias at the data point, the matching
    signature value, and zero at every filler."""
    c = (terms * bias) % km.p
    points = [(km.x_kd, c), (km.x_ks, km.he1(c))]
    for j in range(km.t - 2):
        points.append((km.x_filler(j), 0))
    return lagrange_interpolate(points, km.p)


def _apply_share_deltas(wh: Warehouse, schema: Schema, cell_pk: int,
                        deltas: dict[str, dict[int, int]],
                        replacements: dict[str, object]):
    """Rewrite one cube row at every provider: summable measures get their
    per-provider delta added in share space, the rest are re-shared."""
    table = schema.table
    cols = {c.name: c for c in schema.columns}
    reshared = {
        attr: _share_cell_value(wh, table, cell_pk, cols[attr], value)
        for attr, value in replacements.items()
    }
    for i in sorted(wh.csps):
        csp = wh.csps[i]
        pos = csp.position_of(table, cell_pk)
        rec = csp.get_record(table, pos)
        shares = dict(rec.shares)
        for attr, per_csp in deltas.items():
            (old,) = shares[attr]
            shares[attr] = ((old + per_csp[i]) % wh.km.p,)
        for attr, per_csp in reshared.items():
            shares[attr] = None if per_csp is None else per_csp[i]
        csp.update_shared_record(schema, pos, StoredRecord(cell_pk, {}, shares))


def cube_refresh(wh: Warehouse, spec: CubeSpec, new_pks, rg=None) -> int:
    """Fold freshly loaded fact records into an existing cube.

    SUM cells update purely in share space (never reconstructed), COUNT
    cells are reconstructed, incremented and re-shared, and MAX/MIN cells
    re-share the extremal record found through the record index. Returns
    the number of touched or created cells.
    """
    _require_all_alive(wh)
    table = cube_table(spec)
    if table not in wh.schemas:
        raise UnknownTable(table)
    new_pks = sorted(set(new_pks))
    if not new_pks:
        return 0
    unknown = [pk for pk in new_pks if not wh.type1.has(spec.table, pk)]
    if unknown:
        raise UnknownRecordPosition(f"not fact records: {unknown}")
    schema = wh.schemas[table]
    dims = [col for col, _ in _dim_sources(wh, spec)]
    stored = _storage_measures(spec, wh.schemas[spec.table])
    rg = tuple(sorted(rg)) if rg is not None else wh.choose_rg()
    km = wh.km
    fact = spec.table

    all_pks = wh.type1.pks(fact)
    keys = _fact_keys(wh, spec, all_pks)
    cells = _cells_by_key(wh, spec)
    next_pk = max(wh.type1.pks(table), default=0)
    touched = 0

    for combo in _lattice(spec):
        flags = _active_flags(spec, combo)
        new_groups: dict[tuple, list[int]] = {}
        for pk in new_pks:
            cell = tuple(v if on else None for v, on in zip(keys[pk], flags))
            new_groups.setdefault(cell, []).append(pk)
        for cell in _sort_cell_keys(new_groups):
            members_new = new_groups[cell]
            touched += 1
            if cell not in cells:
                next_pk += 1
                row = dict(zip((c.name for c in dims), cell))
                for sm in stored:
                    row[sm.column.name] = _measure_value(wh, spec, sm, members_new, rg)
                _put_cube_row(wh, schema, next_pk, row)
                continue
            cell_pk = cells[cell]
            deltas: dict[str, dict[int, int]] = {}
            replacements: dict[str, object] = {}
            for sm in stored:
                if sm.fn == "sum":
                    present = _nonnull(wh, fact, sm.attr, members_new)
                    if present:
                        deltas[sm.column.name] = _eq2_delta(
                            wh, fact, sm.attr, present, bias_terms=1
                        )
                elif sm.fn == "sum_pair":
                    px = set(_nonnull(wh, fact, sm.x, members_new))
                    py = set(_nonnull(wh, fact, sm.y, members_new))
                    if px != py:
                        raise SchemaMismatch(
                            f"{sm.x} and {sm.y} have different NULL patterns"
                        )
                    if px:
                        deltas[sm.column.name] = _eq3_delta(
                            wh, fact, sm.x, sm.y, sm.op, sorted(px)
                        )
                elif sm.fn == "count":
                    delta = len(members_new) if sm.attr is None else \
                        len(_nonnull(wh, fact, sm.attr, members_new))
                    if delta:
                        old = wh.reconstruct_value(table, cell_pk, sm.column.name, rg)
                        replacements[sm.column.name] = (old or 0) + delta
                else:
                    members_all = [
                        pk for pk in all_pks
                        if tuple(v if on else None for v, on in zip(keys[pk], flags)) == cell
                    ]
                    try:
                        value = exec_minmax_count(wh, fact, sm.attr, sm.fn,
                                                  members_all, rg)
                    except EmptyInput:
                        value = None
                    replacements[sm.column.name] = value
            if deltas or replacements:
                _apply_share_deltas(wh, schema, cell_pk, deltas, replacements)
    return touched


def _eq2_delta(wh: Warehouse, fact: str, attr: str, pks, bias_terms: int):
    """Each provider's increment for SUM over pks: its own stored share sum
    plus the pseudo-share correction, minus the surplus bias offsets."""
    km = wh.km
    h = _bias_correction_poly(km, fact, bias_terms * len(pks), wh.bias)
    out = {}
    for i in sorted(wh.csps):
        a = wh.csps[i].share_sum(fact, attr, pks)
        a = (a + km.he2(wh.type1_pseudo_sum(fact, pks, i), km.id_of(i))) % km.p
        out[i] = (a - h(km.x_id(i))) % km.p
    return out


def _eq3_delta(wh: Warehouse, fact: str, x: str, y: str, op: str, pks):
    km = wh.km
    sign = 1 if op == "+" else -1
    terms = 2 * len(pks) if op == "+" else 0
    h = _bias_correction_poly(km, fact, terms, wh.bias)
    out = {}
    for i in sorted(wh.csps):
        a = wh.csps[i].share_sum(
            fact, x, pks,
            combine=lambda rec: rec.shares[x][0] + sign * rec.shares[y][0],
        )
        if op == "+":
            pseudo = wh.type1_pseudo_sum(fact, pks, i)
            a = (a + 2 * km.he2(pseudo, km.id_of(i))) % km.p
        out[i] = (a - h(km.x_id(i))) % km.p
    return out


# querying


def cube_query(wh: Warehouse, spec: CubeSpec, level, where=(), rg=None):
    """Read one grouping set straight from the cube.

    level names the dimension attributes that stay concrete (a prefix of
    each hierarchy); everything else must be NULL, which is exactly how
    the aggregation level is stored. where holds (attr, op, value)
    predicates on level attributes. Returns (headers, rows) with measures
    reconstructed from any t providers.
    """
    table = cube_table(spec)
    if table not in wh.schemas:
        raise UnknownTable(table)
    level = tuple(level)
    dims = [col for col, _ in _dim_sources(wh, spec)]
    by_name = {col.name: col for col in dims}
    for h in spec.hierarchies:
        chosen = [a for a in h.attrs if a in level]
        if chosen != list(h.attrs[: len(chosen)]):
            raise SchemaMismatch(
                f"level must be a prefix of hierarchy {h.attrs}; got {chosen}"
            )
    unknown = set(level) - set(by_name)
    if unknown:
        raise SchemaMismatch(f"not cube dimensions: {sorted(unknown)}")

    pks = set(wh.type1.pks(table))
    maps = {col.name: wh.type2.value_map(table, col.name) for col in dims}
    for col in dims:
        if col.name in level:
            pks &= set(maps[col.name])
        else:
            pks -= set(maps[col.name])
    for attr, op, value in where:
        if attr not in level:
            raise SchemaMismatch(f"{attr} is aggregated away at this level")
        col = by_name[attr]
        if op in ("between", "in"):
            operand = tuple(order_key(v, col) for v in value)
        else:
            operand = order_key(value, col)
        pks &= wh.type2_lookup(table, attr, op, operand)

    rg = tuple(sorted(rg)) if rg is not None else wh.choose_rg()

    def measure_out(m: CubeMeasure, pk: int):
        if m.fn == "avg":
            pair = _split_pair(m.attr)
            if pair:
                x, op, y = pair
                s = wh.reconstruct_value(table, pk, _pair_name("sum", x, op, y), rg)
                c = wh.reconstruct_value(table, pk, f"count_{x}", rg)
            else:
                s = wh.reconstruct_value(table, pk, f"sum_{m.attr}", rg)
                c = wh.reconstruct_value(table, pk, f"count_{m.attr}", rg)
            return None if not c else Fraction(s) / c
        pair = _split_pair(m.attr) if m.attr else None
        if m.fn == "sum" and pair:
            name = _pair_name("sum", *pair)
        elif m.attr is None:
            name = "count_rows"
        else:
            name = f"{m.fn}_{m.attr}"
        return wh.reconstruct_value(table, pk, name, rg)

    rows = []
    for pk in sorted(pks):
        dims_out = tuple(display_value(maps[a].get(pk), by_name[a]) for a in level)
        rows.append(dims_out + tuple(measure_out(m, pk) for m in spec.measures))
    rows.sort(key=lambda r: tuple(
        (v is None, isinstance(v, str), v) for v in r[: len(level)]
    ))
    headers = list(level) + [measure_label(m) for m in spec.measures]
    return headers, rows
