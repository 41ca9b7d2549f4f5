"""Query language over shared tables: parse, plan, execute.

A query never reconstructs whole tables. The planner rewrites it into
index-server work (Type II lookups resolve predicates to primary-key
sets, Type I bitmaps supply pseudo-share sums) plus per-provider share
sums, and the client recombines: interpolate the summed shares, check
the aggregate's inner signature, strip bias and scale. Grouping runs on
plaintext keys, either directly (primary and foreign keys) or through
the index server for other attributes.

Grammar, roughly::

    SELECT item (, item)*
    FROM table (AS? alias)?
    (JOIN table (AS? alias)? ON attr = attr)*
    (WHERE pred (AND pred)*)?
    (GROUP BY attr (, attr)*)?

    item := attr | * | FN ( * | attr ((+|-|*|/) attr)? ) (AS name)?
    pred := attr (=|!=|<>|<|<=|>|>=) literal
          | attr BETWEEN literal AND literal
          | attr IN ( literal (, literal)* )

OR, NOT, HAVING, subqueries and implicit joins are out of scope and
rejected as unsupported rather than misparsed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import date as _date
from decimal import Decimal, localcontext
from fractions import Fraction

from .errors import (
    CspUnavailable,
    EmptyInput,
    InnerSignatureMismatch,
    MissingShare,
    MissingTypeThreeColumn,
    NotIndexed,
    QuerySyntaxError,
    SchemaMismatch,
    UnknownTable,
    UnsupportedFeature,
)
from .field import lagrange_interpolate
from .sharing import Column
from .store import Warehouse, display_value, order_key

AGG_FNS = ("sum", "avg", "var", "variance", "stddev", "count", "min", "max", "median")

KEYWORDS = {
    "select", "from", "join", "on", "where", "and", "group", "by", "as",
    "between", "in", "true", "false",
    "or", "not", "having", "exists", "is", "null", "union", "cube",
} | set(AGG_FNS)

UNSUPPORTED_KEYWORDS = {"or", "not", "having", "exists", "is", "union", "cube"}


# abstract syntax


@dataclass(frozen=True)
class Star:
    def display(self) -> str:
        return "*"


@dataclass(frozen=True)
class AttrRef:
    qualifier: str | None
    name: str

    def display(self) -> str:
        return f"{self.qualifier}.{self.name}" if self.qualifier else self.name


@dataclass(frozen=True)
class Combo:
    op: str  # + - * /
    x: AttrRef
    y: AttrRef

    def display(self) -> str:
        return f"{self.x.display()}{self.op}{self.y.display()}"


@dataclass(frozen=True)
class Aggregate:
    fn: str
    arg: AttrRef | Combo | Star

    def display(self) -> str:
        return f"{self.fn.upper()}({self.arg.display()})"


@dataclass(frozen=True)
class SelectItem:
    expr: AttrRef | Aggregate | Star
    alias: str | None = None

    def display(self) -> str:
        return self.alias or self.expr.display()


@dataclass(frozen=True)
class Join:
    table: str
    alias: str | None
    left: AttrRef
    right: AttrRef


@dataclass(frozen=True)
class Predicate:
    attr: AttrRef
    op: str       # = != < <= > >= between in
    operand: object


@dataclass(frozen=True)
class Query:
    select: tuple[SelectItem, ...]
    table: str
    alias: str | None
    joins: tuple[Join, ...]
    where: tuple[Predicate, ...]
    group_by: tuple[AttrRef, ...]


# tokenizer

_TOKEN_RE = re.compile(
    r"""
      (?P<number>\d+(?:\.\d+)?)
    | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
    | (?P<string>'(?:[^']|'')*')
    | (?P<symbol><=|>=|!=|<>|[(),.=<>*+\-/])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # number ident string symbol kw end
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    out = []
    i = 0
    while i < len(text):
        if text[i].isspace():
            i += 1
            continue
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise QuerySyntaxError(f"cannot read character {text[i]!r} at position {i}")
        kind = m.lastgroup
        tok = m.group()
        if kind == "ident" and tok.lower() in KEYWORDS:
            out.append(_Token("kw", tok.lower(), i))
        elif kind == "string":
            out.append(_Token("string", tok[1:-1].replace("''", "'"), i))
        else:
            out.append(_Token(kind, tok, i))
        i = m.end()
    out.append(_Token("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.i]

    def _advance(self) -> _Token:
        tok = self.cur
        self.i += 1
        return tok

    def _fail(self, want: str):
        tok = self.cur
        shown = tok.text or "end of query"
        raise QuerySyntaxError(f"expected {want} at position {tok.pos}, found {shown!r}")

    def _accept(self, kind: str, text: str | None = None) -> _Token | None:
        tok = self.cur
        if tok.kind == kind and (text is None or tok.text == text):
            return self._advance()
        return None

    def _expect(self, kind: str, text: str | None = None) -> _Token:
        tok = self._accept(kind, text)
        if tok is None:
            self._fail(text or kind)
        return tok

    def _name(self) -> str:
        tok = self.cur
        if tok.kind == "kw" and tok.text in UNSUPPORTED_KEYWORDS:
            raise UnsupportedFeature(f"{tok.text.upper()} is not supported")
        if tok.kind != "ident":
            self._fail("a name")
        return self._advance().text

    # grammar

    def parse(self) -> Query:
        self._expect("kw", "select")
        select = [self._select_item()]
        while self._accept("symbol", ","):
            select.append(self._select_item())
        self._expect("kw", "from")
        table = self._name()
        alias = self._alias()
        if self.cur.kind == "symbol" and self.cur.text == ",":
            raise UnsupportedFeature("implicit joins (comma in FROM) are not supported")
        joins = []
        while self._accept("kw", "join"):
            joins.append(self._join())
        where = []
        if self._accept("kw", "where"):
            where.append(self._predicate())
            while True:
                if self.cur.kind == "kw" and self.cur.text in UNSUPPORTED_KEYWORDS:
                    raise UnsupportedFeature(f"{self.cur.text.upper()} is not supported")
                if not self._accept("kw", "and"):
                    break
                where.append(self._predicate())
        group_by = []
        if self._accept("kw", "group"):
            self._expect("kw", "by")
            group_by.append(self._attr())
            while self._accept("symbol", ","):
                group_by.append(self._attr())
        if self.cur.kind != "end":
            if self.cur.kind == "kw" and self.cur.text in UNSUPPORTED_KEYWORDS:
                raise UnsupportedFeature(f"{self.cur.text.upper()} is not supported")
            self._fail("end of query")
        return Query(tuple(select), table, alias, tuple(joins),
                     tuple(where), tuple(group_by))

    def _alias(self) -> str | None:
        if self._accept("kw", "as"):
            return self._name()
        if self.cur.kind == "ident":
            return self._advance().text
        return None

    def _select_item(self) -> SelectItem:
        tok = self.cur
        if tok.kind == "symbol" and tok.text == "*":
            self._advance()
            return SelectItem(Star())
        if tok.kind == "kw" and tok.text in AGG_FNS:
            fn = self._advance().text
            fn = {"variance": "var"}.get(fn, fn)
            self._expect("symbol", "(")
            if self._accept("symbol", "*"):
                arg: AttrRef | Combo | Star = Star()
            else:
                arg = self._agg_arg()
            self._expect("symbol", ")")
            expr: AttrRef | Aggregate = Aggregate(fn, arg)
        else:
            expr = self._attr()
        alias = None
        if self._accept("kw", "as"):
            alias = self._name()
        return SelectItem(expr, alias)

    def _agg_arg(self) -> AttrRef | Combo:
        x = self._attr()
        tok = self.cur
        if tok.kind == "symbol" and tok.text in "+-*/":
            op = self._advance().text
            y = self._attr()
            return Combo(op, x, y)
        return x

    def _attr(self) -> AttrRef:
        first = self._name()
        if self._accept("symbol", "."):
            return AttrRef(first, self._name())
        return AttrRef(None, first)

    def _join(self) -> Join:
        table = self._name()
        alias = self._alias()
        self._expect("kw", "on")
        left = self._attr()
        self._expect("symbol", "=")
        right = self._attr()
        return Join(table, alias, left, right)

    def _predicate(self) -> Predicate:
        attr = self._attr()
        if self._accept("kw", "between"):
            lo = self._literal()
            self._expect("kw", "and")
            hi = self._literal()
            return Predicate(attr, "between", (lo, hi))
        if self._accept("kw", "in"):
            self._expect("symbol", "(")
            items = [self._literal()]
            while self._accept("symbol", ","):
                items.append(self._literal())
            self._expect("symbol", ")")
            return Predicate(attr, "in", tuple(items))
        tok = self.cur
        if tok.kind == "kw" and tok.text in UNSUPPORTED_KEYWORDS:
            raise UnsupportedFeature(f"{tok.text.upper()} is not supported")
        if tok.kind != "symbol" or tok.text not in ("=", "!=", "<>", "<", "<=", ">", ">="):
            self._fail("a comparison operator")
        op = self._advance().text
        if op == "<>":
            op = "!="
        return Predicate(attr, op, self._literal())

    def _literal(self):
        tok = self.cur
        if tok.kind == "number":
            self._advance()
            return tok.text  # column kind decides int vs scaled real later
        if tok.kind == "string":
            self._advance()
            return tok.text
        if tok.kind == "kw" and tok.text in ("true", "false"):
            self._advance()
            return tok.text == "true"
        if tok.kind == "symbol" and tok.text == "(":
            raise UnsupportedFeature("subqueries are not supported")
        self._fail("a literal")


def parse(text: str) -> Query:
    """Parse query text; bad syntax reports the offending position."""
    return _Parser(text).parse()


# planning: resolve names against the warehouse, route every piece of the
# query either to the index server or to the per-provider share sums


@dataclass(frozen=True)
class Resolved:
    table: str
    name: str
    col: Column


@dataclass(frozen=True)
class FilterStep:
    route: str            # fact_pk | fact_attr | dim_pk | dim_attr
    table: str
    attr: str | None
    op: str
    operand: object
    fk: str | None = None  # fact column joining to the dim table


@dataclass(frozen=True)
class GroupSource:
    route: str            # pk | fk | fact_attr | dim_attr
    table: str
    attr: str
    col: Column
    fk: str | None = None


@dataclass(frozen=True)
class PlannedAgg:
    fn: str
    mode: str             # star | plain | combined | derived
    attr: str | None = None
    col: Column | None = None
    x: str | None = None
    y: str | None = None
    op: str | None = None
    square: str | None = None       # derived x^2 column backing var/stddev
    square_col: Column | None = None


@dataclass(frozen=True)
class PlannedItem:
    header: str
    kind: str             # group | agg | attr
    group_index: int | None = None
    agg: PlannedAgg | None = None
    attr: Resolved | None = None


@dataclass(frozen=True)
class QueryPlan:
    query: Query
    fact: str
    filter_steps: tuple[FilterStep, ...]
    group_sources: tuple[GroupSource, ...]
    items: tuple[PlannedItem, ...]
    row_mode: bool        # no aggregates: emit one row per matching record
    join_fk: tuple[tuple[str, str], ...] = ()  # dim table -> fact fk column


def plan(query: Query, wh: Warehouse) -> QueryPlan:
    """Validate the query against the warehouse and fix the execution route
    for every predicate, group key and projection."""
    if query.table not in wh.schemas:
        raise UnknownTable(query.table)
    fact = query.table
    names = {query.alias or fact: fact, fact: fact}
    join_fk: dict[str, str] = {}  # dim table -> fact fk column

    for join in query.joins:
        if join.table not in wh.schemas:
            raise UnknownTable(join.table)
        names[join.alias or join.table] = join.table
        names[join.table] = join.table
        sides = {}
        for ref in (join.left, join.right):
            r = _resolve(ref, names, wh, fact)
            sides[r.table] = r
        if set(sides) != {fact, join.table}:
            raise UnsupportedFeature(
                f"join must link {fact} to {join.table} on a key"
            )
        fk_side, dim_side = sides[fact], sides[join.table]
        dim_schema = wh.schemas[join.table]
        if fk_side.col.kind != "fk" or dim_side.name != dim_schema.key:
            raise UnsupportedFeature(
                "joins must match a foreign key to the joined table's key"
            )
        if fk_side.col.fk_table not in (None, join.table):
            raise SchemaMismatch(
                f"{fk_side.name} references {fk_side.col.fk_table}, not {join.table}"
            )
        join_fk[join.table] = fk_side.name

    def _dim_fk(table: str) -> str:
        if table == fact:
            raise AssertionError("not a dim table")
        if table not in join_fk:
            raise UnsupportedFeature(f"{table} is referenced but not joined")
        return join_fk[table]

    filter_steps = []
    for pred in query.where:
        r = _resolve(pred.attr, names, wh, fact)
        schema = wh.schemas[r.table]
        operand = _canonical_operand(pred.operand, r.col, pred.op)
        if r.table == fact:
            if r.name == schema.key:
                filter_steps.append(FilterStep("fact_pk", fact, None, pred.op, operand))
            else:
                _require_index(wh, fact, r.name)
                filter_steps.append(FilterStep("fact_attr", fact, r.name, pred.op, operand))
        else:
            fk = _dim_fk(r.table)
            if r.name == schema.key:
                filter_steps.append(FilterStep("dim_pk", r.table, None, pred.op, operand, fk=fk))
            else:
                _require_index(wh, r.table, r.name)
                filter_steps.append(FilterStep("dim_attr", r.table, r.name, pred.op, operand, fk=fk))

    group_sources = []
    for ref in query.group_by:
        r = _resolve(ref, names, wh, fact)
        schema = wh.schemas[r.table]
        if r.table == fact:
            if r.name == schema.key:
                group_sources.append(GroupSource("pk", fact, r.name, r.col))
            elif r.col.kind == "fk":
                group_sources.append(GroupSource("fk", fact, r.name, r.col))
            else:
                _require_index(wh, fact, r.name)
                group_sources.append(GroupSource("fact_attr", fact, r.name, r.col))
        else:
            fk = _dim_fk(r.table)
            if r.name == schema.key:
                group_sources.append(GroupSource("dim_pk", r.table, r.name, r.col, fk=fk))
            else:
                _require_index(wh, r.table, r.name)
                group_sources.append(GroupSource("dim_attr", r.table, r.name, r.col, fk=fk))

    has_agg = any(isinstance(item.expr, Aggregate) for item in query.select)
    row_mode = not has_agg

    items = []
    for item in query.select:
        expr = item.expr
        if isinstance(expr, Star):
            if has_agg:
                raise UnsupportedFeature("bare * cannot mix with aggregates")
            derived = {d.name for d in wh.type3.for_table(fact)}
            for col in wh.schemas[fact].columns:
                if col.name not in derived:
                    items.append(PlannedItem(col.name, "attr",
                                             attr=Resolved(fact, col.name, col)))
            continue
        if isinstance(expr, Aggregate):
            items.append(PlannedItem(item.display(), "agg",
                                     agg=_plan_aggregate(expr, names, wh, fact)))
            continue
        r = _resolve(expr, names, wh, fact)
        header = item.alias or expr.name
        if has_agg:
            idx = _group_index(r, group_sources)
            if idx is None:
                raise UnsupportedFeature(
                    f"{expr.display()} is projected but not grouped"
                )
            items.append(PlannedItem(header, "group", group_index=idx))
        else:
            items.append(PlannedItem(header, "attr", attr=r))
    if row_mode:
        for it in items:
            if it.kind == "attr" and it.attr.table != fact:
                _dim_fk(it.attr.table)  # must be joined to be reachable
    return QueryPlan(query, fact, tuple(filter_steps), tuple(group_sources),
                     tuple(items), row_mode, tuple(sorted(join_fk.items())))


def _resolve(ref: AttrRef, names, wh, fact: str) -> Resolved:
    if ref.qualifier is not None:
        if ref.qualifier not in names:
            raise UnknownTable(f"{ref.qualifier} is not a table or alias in this query")
        candidates = [names[ref.qualifier]]
    else:
        candidates = []
        seen = set()
        for table in names.values():
            if table in seen:
                continue
            seen.add(table)
            if any(c.name == ref.name for c in wh.schemas[table].columns):
                candidates.append(table)
        if not candidates:
            raise SchemaMismatch(f"no table in this query has a column {ref.name}")
        if len(candidates) > 1:
            raise SchemaMismatch(f"{ref.name} is ambiguous, qualify it")
    table = candidates[0]
    schema = wh.schemas[table]
    for col in schema.columns:
        if col.name == ref.name:
            return Resolved(table, col.name, col)
    raise SchemaMismatch(f"{table} has no column {ref.name}")


def _require_index(wh: Warehouse, table: str, attr: str):
    if not wh.type2.is_indexed(table, attr):
        raise NotIndexed(f"{table}.{attr} needs a Type II index for this query")


def _group_index(r: Resolved, group_sources) -> int | None:
    for i, g in enumerate(group_sources):
        if (g.table, g.attr) == (r.table, r.name):
            return i
    return None


def _canonical_operand(operand, col: Column, op: str):
    if op == "between":
        lo, hi = operand
        return (_canonical_literal(lo, col), _canonical_literal(hi, col))
    if op == "in":
        return tuple(_canonical_literal(v, col) for v in operand)
    return _canonical_literal(operand, col)


def _canonical_literal(raw, col: Column):
    kind = col.kind
    try:
        if kind in ("key", "fk", "int"):
            return int(raw)
        if kind == "bool":
            if isinstance(raw, bool):
                return int(raw)
            return 1 if int(raw) else 0
        if kind == "date":
            return order_key(_date.fromisoformat(raw), col)
        if kind == "real":
            return order_key(Fraction(str(raw)), col)
        if kind == "string":
            return str(raw)
    except (ValueError, TypeError) as exc:
        raise SchemaMismatch(f"literal {raw!r} does not fit a {kind} column") from exc
    raise SchemaMismatch(f"cannot compare against a {kind} column")


_SUMMABLE = ("int", "real", "bool")


def _plan_aggregate(agg: Aggregate, names, wh, fact: str) -> PlannedAgg:
    fn = agg.fn
    if isinstance(agg.arg, Star):
        if fn != "count":
            raise UnsupportedFeature(f"{fn.upper()}(*) is not defined")
        return PlannedAgg(fn, "star")
    if isinstance(agg.arg, Combo):
        if fn not in ("sum", "avg"):
            raise UnsupportedFeature(f"{fn.upper()} over an expression is not supported")
        rx = _resolve(agg.arg.x, names, wh, fact)
        ry = _resolve(agg.arg.y, names, wh, fact)
        for r in (rx, ry):
            if r.table != fact:
                raise UnsupportedFeature("aggregates run on the FROM table only")
            if r.col.kind not in _SUMMABLE:
                raise UnsupportedFeature(f"cannot sum a {r.col.kind} column")
        if agg.arg.op in "+-":
            if rx.col.scale != ry.col.scale:
                raise SchemaMismatch(
                    f"{rx.name} and {ry.name} have different scales; "
                    "sum them through a derived column instead"
                )
            return PlannedAgg(fn, "combined", x=rx.name, y=ry.name, op=agg.arg.op,
                              col=rx.col if rx.col.kind == "real" else ry.col)
        kind = {"*": "product", "/": "quotient"}[agg.arg.op]
        dcol = wh.type3.find(fact, kind, rx.name, ry.name)
        if dcol is None:
            raise MissingTypeThreeColumn(
                f"register a {kind} column for {rx.name}{agg.arg.op}{ry.name} "
                "to aggregate it"
            )
        return PlannedAgg(fn, "derived", attr=dcol.name,
                          col=wh.schemas[fact].column(dcol.name))
    r = _resolve(agg.arg, names, wh, fact)
    if r.table != fact:
        raise UnsupportedFeature("aggregates run on the FROM table only")
    if fn == "count":
        return PlannedAgg(fn, "plain", attr=r.name, col=r.col)
    if fn in ("min", "max", "median"):
        _require_index(wh, fact, r.name)
        return PlannedAgg(fn, "plain", attr=r.name, col=r.col)
    if r.col.kind not in _SUMMABLE:
        raise UnsupportedFeature(f"cannot {fn.upper()} a {r.col.kind} column")
    if fn in ("var", "stddev"):
        dcol = wh.type3.find(fact, "square", r.name)
        if dcol is None:
            raise MissingTypeThreeColumn(
                f"{fn.upper()}({r.name}) needs a registered {r.name} squared column"
            )
        return PlannedAgg(fn, "plain", attr=r.name, col=r.col, square=dcol.name,
                          square_col=wh.schemas[fact].column(dcol.name))
    return PlannedAgg(fn, "plain", attr=r.name, col=r.col)


# execution


def _nonnull_pks(wh: Warehouse, table: str, attr: str, pks, rg) -> list[int]:
    """Records in pks whose attr is present, discovered from the providers
    in rg; every record has at least two group members there, so nulls
    reported by the contacted providers cover the whole filter."""
    nulls: set[int] = set()
    for i in rg:
        nulls |= wh.csps[i].null_pks(table, attr, pks)
    return sorted(set(pks) - nulls)


def _field_sum(wh: Warehouse, table: str, attr: str, pks, rg) -> int:
    """Eq-style share-space sum: per-provider share totals corrected by the
    pseudo-share sum, interpolated, signature-checked."""
    km = wh.km
    points = []
    for i in rg:
        a_i = wh.csps[i].share_sum(table, attr, pks)
        pseudo = wh.type1_pseudo_sum(table, pks, i)
        a_i = (a_i + km.he2(pseudo, km.id_of(i))) % km.p
        points.append((km.x_id(i), a_i))
    f = lagrange_interpolate(points, km.p)
    total, sig = f(km.x_kd), f(km.x_ks)
    if sig != km.he1(total):
        raise InnerSignatureMismatch(
            f"SUM({table}.{attr}): signature point {sig} != HE1({total})"
        )
    return total


def _field_sum_combined(wh: Warehouse, table: str, x: str, y: str, op: str,
                        pks, rg) -> int:
    """Sum of x op y in one pass: each provider sums its x and y shares
    together; the pseudo-share correction doubles for '+' and cancels
    for '-' because both record polynomials pass through the same
    pseudo-share points."""
    km = wh.km
    sign = 1 if op == "+" else -1
    points = []
    for i in rg:
        a_i = wh.csps[i].share_sum(
            table, x, pks,
            combine=lambda rec: rec.shares[x][0] + sign * rec.shares[y][0],
        )
        if op == "+":
            pseudo = wh.type1_pseudo_sum(table, pks, i)
            a_i = (a_i + 2 * km.he2(pseudo, km.id_of(i))) % km.p
        points.append((km.x_id(i), a_i))
    f = lagrange_interpolate(points, km.p)
    total, sig = f(km.x_kd), f(km.x_ks)
    if sig != km.he1(total):
        raise InnerSignatureMismatch(
            f"SUM({table}.{x}{op}{y}): signature point {sig} != HE1({total})"
        )
    return total


def _decode_sum(total: int, count: int, col: Column, bias_terms: int,
                bias: int, p: int):
    raw = (total - bias_terms * count * bias) % p
    if raw > p // 2:
        raw -= p
    if col.kind == "real":
        return Fraction(raw, 10**col.scale)
    return raw


def exec_sum(wh: Warehouse, table: str, attr: str, pks, rg):
    """SUM(attr) over the filtered records; 0 on an empty filter."""
    col = wh.schemas[table].column(attr)
    present = _nonnull_pks(wh, table, attr, pks, rg)
    if not present:
        return Fraction(0) if col.kind == "real" else 0
    total = _field_sum(wh, table, attr, present, rg)
    return _decode_sum(total, len(present), col, 1, wh.bias, wh.km.p)


def exec_sum_combined(wh: Warehouse, table: str, x: str, y: str, op: str, pks, rg):
    """SUM(x op y) for op in {+, -} without a derived column."""
    col_x = wh.schemas[table].column(x)
    col_y = wh.schemas[table].column(y)
    if col_x.scale != col_y.scale:
        raise SchemaMismatch(f"{x} and {y} have different scales")
    present_x = set(_nonnull_pks(wh, table, x, pks, rg))
    present_y = set(_nonnull_pks(wh, table, y, pks, rg))
    if present_x != present_y:
        raise SchemaMismatch(
            f"{x} and {y} have different NULL patterns; "
            "a pairwise sum is only defined when both sides are present"
        )
    present = sorted(present_x)
    out_col = col_x if col_x.kind == "real" else col_y
    if not present:
        return Fraction(0) if out_col.kind == "real" else 0
    total = _field_sum_combined(wh, table, x, y, op, present, rg)
    bias_terms = 2 if op == "+" else 0
    return _decode_sum(total, len(present), out_col, bias_terms, wh.bias, wh.km.p)


def exec_count(wh: Warehouse, table: str, attr: str | None, pks, rg) -> int:
    if attr is None:
        return len(set(pks))
    if wh.type2.is_indexed(table, attr):
        return wh.type2_aggregate(table, attr, "count", set(pks))
    return len(_nonnull_pks(wh, table, attr, pks, rg))


def exec_avg(wh: Warehouse, table: str, attr: str, pks, rg) -> Fraction:
    count = exec_count(wh, table, attr, pks, rg)
    if count == 0:
        raise EmptyInput(f"AVG({attr}) over no values")
    total = exec_sum(wh, table, attr, pks, rg)
    return Fraction(total) / count


def exec_var(wh: Warehouse, table: str, attr: str, square_attr: str, pks, rg) -> Fraction:
    """Population variance from SUM(x), SUM(x squared) and COUNT, all three
    reconstructed; the squares come from the derived shared column."""
    count = exec_count(wh, table, attr, pks, rg)
    if count == 0:
        raise EmptyInput(f"VAR({attr}) over no values")
    s1 = Fraction(exec_sum(wh, table, attr, pks, rg))
    s2 = Fraction(exec_sum(wh, table, square_attr, pks, rg))
    return s2 / count - (s1 / count) ** 2


def exec_stddev(wh: Warehouse, table: str, attr: str, square_attr: str, pks, rg) -> Decimal:
    var = exec_var(wh, table, attr, square_attr, pks, rg)
    with localcontext() as ctx:
        ctx.prec = 50
        root = (Decimal(var.numerator) / Decimal(var.denominator)).sqrt()
        return root.quantize(Decimal("0.000001"))


def exec_minmax_count(wh: Warehouse, table: str, attr: str, fn: str, pks, rg):
    """MAX/MIN/MEDIAN through the index: find the extremal record's key,
    then reconstruct just that one value. COUNT never touches a provider."""
    if fn == "count":
        return exec_count(wh, table, attr, pks, rg)
    pk = wh.type2_aggregate(table, attr, fn, set(pks))
    return wh.reconstruct_value(table, pk, attr, rg)


def _apply_pk_predicate(pks, op: str, operand) -> set[int]:
    ops = {
        "=": lambda v: v == operand,
        "!=": lambda v: v != operand,
        "<": lambda v: v < operand,
        "<=": lambda v: v <= operand,
        ">": lambda v: v > operand,
        ">=": lambda v: v >= operand,
        "between": lambda v: operand[0] <= v <= operand[1],
        "in": lambda v: v in set(operand),
    }
    return {pk for pk in pks if ops[op](pk)}


def _filter_pks(wh: Warehouse, plan: QueryPlan) -> set[int]:
    pks = set(wh.type1.pks(plan.fact))
    for step in plan.filter_steps:
        if step.route == "fact_pk":
            pks &= _apply_pk_predicate(pks, step.op, step.operand)
        elif step.route == "fact_attr":
            pks &= wh.type2_lookup(plan.fact, step.attr, step.op, step.operand)
        else:
            dim_pks = set(wh.type1.pks(step.table))
            if step.route == "dim_pk":
                dim_pks = _apply_pk_predicate(dim_pks, step.op, step.operand)
            else:
                dim_pks = wh.type2_lookup(step.table, step.attr, step.op, step.operand)
            pks &= wh.type2_lookup(plan.fact, step.fk, "in", tuple(sorted(dim_pks)))
    return pks


def group_key_fn(wh: Warehouse, fact: str, source: GroupSource):
    """Plaintext group key for a fact pk, resolved through the index server."""
    if source.route == "pk":
        return lambda pk: pk
    if source.route == "fk":
        fk_map = wh.type2.value_map(fact, source.attr)
        return lambda pk: fk_map.get(pk)
    if source.route == "fact_attr":
        vm = wh.type2.value_map(fact, source.attr)
        return lambda pk: display_value(vm.get(pk), source.col)
    fk_map = wh.type2.value_map(fact, source.fk)
    if source.route == "dim_pk":
        return lambda pk: fk_map.get(pk)
    vm = wh.type2.value_map(source.table, source.attr)
    return lambda pk: display_value(vm.get(fk_map.get(pk)), source.col)


def _eval_aggregate(wh: Warehouse, plan: QueryPlan, agg: PlannedAgg, pks, rg):
    fact = plan.fact
    if agg.mode == "star":
        return len(pks)
    if agg.mode == "combined":
        total = exec_sum_combined(wh, fact, agg.x, agg.y, agg.op, pks, rg)
        if agg.fn == "sum":
            return total
        count = len(_nonnull_pks(wh, fact, agg.x, pks, rg))
        return Fraction(total) / count if count else None
    attr = agg.attr
    try:
        if agg.fn == "sum":
            return exec_sum(wh, fact, attr, pks, rg)
        if agg.fn == "count":
            return exec_count(wh, fact, attr, pks, rg)
        if agg.fn == "avg":
            return exec_avg(wh, fact, attr, pks, rg)
        if agg.fn == "var":
            return exec_var(wh, fact, attr, agg.square, pks, rg)
        if agg.fn == "stddev":
            return exec_stddev(wh, fact, attr, agg.square, pks, rg)
        return exec_minmax_count(wh, fact, attr, agg.fn, pks, rg)
    except EmptyInput:
        return None


def _sort_key(value):
    return (value is None, isinstance(value, str), value)


def _execute_with(wh: Warehouse, plan: QueryPlan, rg) -> list[tuple]:
    pks = _filter_pks(wh, plan)
    if plan.row_mode:
        join_fk = dict(plan.join_fk)
        fk_maps = {
            fk: wh.type2.value_map(plan.fact, fk) for fk in join_fk.values()
        }
        rows = []
        for pk in sorted(pks):
            row = []
            for item in plan.items:
                r = item.attr
                if r.table == plan.fact:
                    row.append(wh.reconstruct_value(plan.fact, pk, r.name, rg))
                else:
                    dim_pk = fk_maps[join_fk[r.table]].get(pk)
                    row.append(
                        None if dim_pk is None
                        else wh.reconstruct_value(r.table, dim_pk, r.name, rg)
                    )
            rows.append(tuple(row))
        return rows

    key_fns = [group_key_fn(wh, plan.fact, s) for s in plan.group_sources]
    groups: dict[tuple, list[int]] = {}
    for pk in sorted(pks):
        key = tuple(fn(pk) for fn in key_fns)
        groups.setdefault(key, []).append(pk)

    if not plan.group_sources:
        groups = {(): sorted(pks)}

    rows = []
    for key in sorted(groups, key=lambda k: tuple(_sort_key(v) for v in k)):
        member_pks = groups[key]
        row = []
        for item in plan.items:
            if item.kind == "group":
                row.append(key[item.group_index])
            else:
                row.append(_eval_aggregate(wh, plan, item.agg, member_pks, rg))
        rows.append(tuple(row))
    return rows


def headers(plan: QueryPlan) -> list[str]:
    return [item.header for item in plan.items]


def execute(wh: Warehouse, plan_or_text, rg=None) -> tuple[list[str], list[tuple]]:
    """Run a plan (or query text) and return (headers, rows).

    With an explicit rg the first signature mismatch is fatal; otherwise
    reconstruction groups rotate deterministically until one verifies.
    """
    qplan = plan_or_text
    if isinstance(plan_or_text, str):
        qplan = plan(parse(plan_or_text), wh)
    if rg is not None:
        rg = tuple(sorted(set(rg)))
        if len(rg) != wh.km.t:
            raise MissingShare(f"reconstruction group must have t={wh.km.t} members")
        for i in rg:
            if i not in wh.csps or not wh.csps[i].alive:
                raise CspUnavailable(f"CSP {i} in reconstruction group is failed")
        return headers(qplan), _execute_with(wh, qplan, rg)
    last_error = None
    for candidate in wh.rg_candidates():
        try:
            return headers(qplan), _execute_with(wh, qplan, candidate)
        except InnerSignatureMismatch as exc:
            last_error = exc
    raise last_error
