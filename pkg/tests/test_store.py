import copy
import datetime
import random
from fractions import Fraction

import pytest

from fvss import Column, DerivedColumn, Schema, Warehouse
from fvss.errors import (
    CspUnavailable,
    DuplicateTable,
    EmptyInput,
    NotEnoughAliveCsps,
    NotIndexed,
    UnknownRecordPosition,
    UnknownTable,
)
from fvss.store import TypeOneIndex, order_key


PRODUCT = Schema("product", (
    Column("ProdNo", "key"),
    Column("prodName", "string"),
    Column("price", "real", scale=1),
    Column("qty", "int"),
))


def _warehouse(km, **kw):
    wh = Warehouse(km, w=3, bias=0, **kw)
    wh.create_table(PRODUCT, index_attrs=("price", "prodName", "qty"))
    return wh


def _rows():
    return [
        dict(ProdNo=124, prodName="Shirt", price=7.5, qty=3),
        dict(ProdNo=125, prodName="Sock", price=2.0, qty=10),
        dict(ProdNo=126, prodName="Hat", price=9.9, qty=None),
        dict(ProdNo=127, prodName=None, price=1.1, qty=7),
    ]


# Type I


def test_fig8_pseudo_sum():
    idx = TypeOneIndex()
    idx.create_table("t")
    for pk, bm in [(124, "10101"), (125, "01110"), (126, "11010"), (127, "00111")]:
        idx.set("t", pk, bm)
    # bit 1 is 0 exactly for 125 and 127
    assert idx.pseudo_sum("t", [124, 125, 126, 127], 1, 10**9) == 252
    assert idx.pseudo_sum("t", [124], 1, 10**9) == 0
    assert idx.pseudo_sum("t", [127], 2, 10**9) == 127


def test_pseudo_sum_partition_identity(km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    pks = wh.type1.pks("product")
    total = sum(pks)
    for i in range(1, 6):
        stored = sum(pk for pk in pks if wh.type1.bitmap("product", pk)[i - 1] == "1")
        assert (wh.type1_pseudo_sum("product", pks, i) + stored) % km_toy.p == total % km_toy.p


def test_popcount_matches_group_size(km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    for pk in wh.type1.pks("product"):
        assert wh.type1.bitmap("product", pk).count("1") == 3


# Type II


def test_lookup_predicates(km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    look = wh.type2_lookup
    assert look("product", "price", "=", 20) == {125}
    assert look("product", "price", "=", 33) == set()
    assert look("product", "price", "<", 75) == {125, 127}
    assert look("product", "price", "<=", 75) == {124, 125, 127}
    assert look("product", "price", ">", 75) == {126}
    assert look("product", "price", ">=", 11) == {124, 125, 126, 127}
    assert look("product", "price", "between", (20, 75)) == {124, 125}
    assert look("product", "price", "in", (20, 99)) == {125, 126}
    assert look("product", "price", "!=", 20) == {124, 126, 127}


def test_lookup_matches_brute_force(km_toy):
    rng = random.Random(5)
    wh = Warehouse(km_toy, w=3, bias=0)
    sch = Schema("r", (Column("id", "key"), Column("v", "int")))
    wh.create_table(sch, index_attrs=("v",))
    rows = [dict(id=i, v=rng.randrange(100)) for i in range(1, 201)]
    wh.load_rows("r", rows)
    plain = {r["id"]: r["v"] for r in rows}
    for op, pred in [
        ("=", lambda v: v == 50), ("<", lambda v: v < 30), (">=", lambda v: v >= 70),
        ("between", lambda v: 20 <= v <= 40), ("in", lambda v: v in (3, 99, 55)),
    ]:
        operand = {"=": 50, "<": 30, ">=": 70, "between": (20, 40),
                   "in": (3, 99, 55)}[op]
        want = {pk for pk, v in plain.items() if pred(v)}
        assert wh.type2_lookup("r", "v", op, operand) == want


def test_lookup_unindexed_raises(km_toy):
    wh = Warehouse(km_toy, w=3, bias=0)
    wh.create_table(Schema("x", (Column("id", "key"), Column("v", "int"))))
    with pytest.raises(NotIndexed):
        wh.type2_lookup("x", "v", "=", 1)


def test_string_index_and_null_absent(km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    assert wh.type2_lookup("product", "prodName", "=", "Hat") == {126}
    # 127 has a null name: absent from every predicate result
    assert wh.type2_lookup("product", "prodName", ">=", "") == {124, 125, 126}


def test_index_aggregates(km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    pks = set(wh.type1.pks("product"))
    agg = wh.type2_aggregate
    assert agg("product", "price", "max", pks) == 126
    assert agg("product", "price", "min", pks) == 127
    assert agg("product", "price", "count", pks) == 4
    assert agg("product", "qty", "count", pks) == 3  # null excluded
    # values 3, 7, 10 -> lower middle is 7 (pk 127)
    assert agg("product", "qty", "median", pks) == 127
    assert agg("product", "price", "max", {125}) == 125
    with pytest.raises(EmptyInput):
        agg("product", "price", "max", set())


def test_median_matches_sort_oracle(km_toy):
    rng = random.Random(11)
    wh = Warehouse(km_toy, w=3, bias=0)
    wh.create_table(Schema("m", (Column("id", "key"), Column("v", "int"))),
                    index_attrs=("v",))
    rows = [dict(id=i, v=rng.randrange(50)) for i in range(1, 32)]
    wh.load_rows("m", rows)
    ranked = sorted((r["v"], r["id"]) for r in rows)
    want = ranked[(len(ranked) - 1) // 2][1]
    assert wh.type2_aggregate("m", "v", "median", {r["id"] for r in rows}) == want


def test_order_key_kinds():
    assert order_key(None, Column("a", "int")) is None
    assert order_key(-3, Column("a", "int")) == -3
    assert order_key(7.5, Column("a", "real", scale=1)) == 75
    assert order_key(Fraction(15, 2), Column("a", "real", scale=1)) == 75
    assert order_key(datetime.date(1970, 1, 11), Column("a", "date")) == 10
    assert order_key(True, Column("a", "bool")) == 1
    assert order_key("zz", Column("a", "string")) == "zz"


# record round trips


def test_round_trip_all_reconstruction_groups(km_toy):
    from itertools import combinations
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    want = {
        124: dict(ProdNo=124, prodName="Shirt", price=Fraction(75, 10), qty=3),
        125: dict(ProdNo=125, prodName="Sock", price=Fraction(2), qty=10),
        126: dict(ProdNo=126, prodName="Hat", price=Fraction(99, 10), qty=None),
        127: dict(ProdNo=127, prodName=None, price=Fraction(11, 10), qty=7),
    }
    for rg in combinations((1, 2, 3, 4, 5), 4):
        for pk, row in want.items():
            assert wh.reconstruct_record("product", pk, rg) == row


def test_update_in_place_same_group(km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    before = wh.type1.bitmap("product", 124)
    wh.insert("product", dict(ProdNo=124, prodName="Shirt", price=8.0, qty=99))
    assert wh.type1.bitmap("product", 124) == before
    rec = wh.reconstruct_record("product", 124)
    assert rec["qty"] == 99 and rec["price"] == Fraction(8)
    # index reflects the new value, old key gone
    assert wh.type2_lookup("product", "price", "=", 80) == {124}
    assert wh.type2_lookup("product", "price", "=", 75) == set()
    # per-CSP slice length unchanged: update, not append
    for i in range(1, 6):
        assert len(wh.csps[i].tables["product"]) == sum(
            1 for pk in wh.type1.pks("product")
            if wh.type1.bitmap("product", pk)[i - 1] == "1"
        )


def test_update_null_transitions(km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    wh.insert("product", dict(ProdNo=126, prodName="Hat", price=9.9, qty=5))
    assert wh.reconstruct_value("product", 126, "qty") == 5
    wh.insert("product", dict(ProdNo=126, prodName="Hat", price=9.9, qty=None))
    assert wh.reconstruct_value("product", 126, "qty") is None
    assert wh.type2_lookup("product", "qty", ">=", -10**6) == {124, 125, 127}


def test_update_with_failed_group_member_refused(km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    sg = [i for i, b in enumerate(wh.type1.bitmap("product", 124), 1) if b == "1"]
    wh.inject_failure(sg[0])
    with pytest.raises(CspUnavailable):
        wh.insert("product", dict(ProdNo=124, prodName="S", price=1.0, qty=1))


def test_new_record_avoids_failed_csp(km_toy):
    wh = _warehouse(km_toy)
    wh.inject_failure(2)
    wh.load_rows("product", _rows())
    for pk in wh.type1.pks("product"):
        assert wh.type1.bitmap("product", pk)[1] == "0"
    # reads still fine with 4 alive
    assert wh.reconstruct_value("product", 124, "qty") == 3


def test_availability_thresholds(km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    wh.inject_failure(5)
    for pk in (124, 125, 126, 127):
        wh.reconstruct_record("product", pk)  # n-t = 1 failure tolerated
    wh.inject_failure(4)
    with pytest.raises(NotEnoughAliveCsps):
        wh.reconstruct_value("product", 124, "qty")
    # three alive is still n-t+2: writing works even when reading cannot
    wh.insert("product", dict(ProdNo=990, prodName="N", price=1.0, qty=1))
    assert wh.type1.bitmap("product", 990) == "11100"
    wh.inject_failure(3)
    with pytest.raises(NotEnoughAliveCsps):
        wh.insert("product", dict(ProdNo=991, prodName="N", price=1.0, qty=1))
    wh.heal(3)
    wh.heal(4)
    wh.heal(5)
    assert wh.reconstruct_value("product", 124, "qty") == 3
    assert wh.reconstruct_value("product", 990, "qty") == 1


def test_duplicate_table_rejected(km_toy):
    wh = _warehouse(km_toy)
    with pytest.raises(DuplicateTable):
        wh.create_table(PRODUCT)


def test_unknown_table_rejected(km_toy):
    wh = Warehouse(km_toy, bias=0)
    with pytest.raises(UnknownTable):
        wh.insert("ghost", dict(id=1))
    with pytest.raises(UnknownTable):
        wh.reconstruct_table("ghost")


def test_derived_columns_computed_and_shared(km_toy):
    wh = Warehouse(km_toy, w=3, bias=0)
    sch = Schema("s", (Column("id", "key"), Column("x", "int")))
    wh.create_table(sch, derived=(DerivedColumn("s", "x^2", "square", "x"),))
    wh.insert("s", dict(id=1, x=9))
    wh.insert("s", dict(id=2, x=None))
    assert wh.reconstruct_value("s", 1, "x^2") == 81
    assert wh.reconstruct_value("s", 2, "x^2") is None
    # same storage group as the base record
    for i in range(1, 6):
        for rec in wh.csps[i].tables["s"]:
            assert ("x^2" in rec.shares) == ("x" in rec.shares)


def test_derived_product_and_quotient(km_toy):
    wh = Warehouse(km_toy, w=3, bias=0)
    sch = Schema("s", (Column("id", "key"),
                       Column("x", "real", scale=1), Column("y", "int")))
    wh.create_table(sch, derived=(
        DerivedColumn("s", "x*y", "product", "x", "y", scale=1),
        DerivedColumn("s", "x/y", "quotient", "x", "y", scale=2),
    ))
    wh.insert("s", dict(id=1, x=1.5, y=8))
    assert wh.reconstruct_value("s", 1, "x*y") == Fraction(12)
    assert wh.reconstruct_value("s", 1, "x/y") == Fraction(19, 100)  # 0.1875 -> 0.19


# tamper plumbing


def test_tamper_detected_by_both_signatures(km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    victim = next(pk for pk in wh.type1.pks("product")
                  if wh.type1.bitmap("product", pk)[0] == "1")
    wh.inject_tamper(1, "product", victim, "price")
    report = wh.verify_csp(1)
    assert not report.ok
    assert report.entries[0].table == "product"
    from fvss.errors import InnerSignatureMismatch
    with pytest.raises(InnerSignatureMismatch):
        wh.reconstruct_value("product", victim, "price", rg=(1, 2, 3, 4))


def test_tamper_unknown_position(km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    with pytest.raises(UnknownRecordPosition):
        wh.inject_tamper(1, "product", 999, "price")


def test_verify_failed_csp_refused(km_toy):
    wh = _warehouse(km_toy)
    wh.inject_failure(3)
    with pytest.raises(CspUnavailable):
        wh.verify_csp(3)


# recovery


def test_recovery_restores_exact_slice(km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    target = 1
    want = copy.deepcopy(wh.csps[target].tables["product"])
    for rec in wh.csps[target].tables["product"]:
        for a in list(rec.shares):
            if rec.shares[a] is not None:
                rec.shares[a] = tuple(0 for _ in rec.shares[a])
    n = wh.recover_csp_shares(target)
    assert n > 0
    got = wh.csps[target].tables["product"]
    assert [(r.pk, r.plain, r.shares) for r in got] == \
           [(r.pk, r.plain, r.shares) for r in want]
    assert wh.verify_csp(target).ok


def test_recovery_needs_enough_donors(km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    wh.inject_failure(4)
    wh.inject_failure(5)
    with pytest.raises(NotEnoughAliveCsps):
        wh.recover_csp_shares(1)


def test_recovery_rejects_target_as_donor(km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    with pytest.raises(CspUnavailable):
        wh.recover_csp_shares(1, rg=(1, 2, 3, 4))


# counters and persistence


def test_byte_counters_monotone(km_toy):
    wh = _warehouse(km_toy)
    stored0 = sum(c.bytes_stored for c in wh.csps.values())
    wh.load_rows("product", _rows())
    stored1 = sum(c.bytes_stored for c in wh.csps.values())
    assert stored1 > stored0
    moved0 = sum(c.bytes_transferred for c in wh.csps.values())
    wh.reconstruct_record("product", 124)
    moved1 = sum(c.bytes_transferred for c in wh.csps.values())
    assert moved1 > moved0


def test_save_load_round_trip(tmp_path, km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    wh.inject_failure(5)
    wh.save(tmp_path)
    spec = [(PRODUCT, ("price", "prodName", "qty"), ())]
    back = Warehouse.load(tmp_path, km_toy, spec, w=3, bias=0)
    assert back.alive_csps() == [1, 2, 3, 4]
    assert back.type1.entries == wh.type1.entries
    assert back.type2.maps == wh.type2.maps
    for i in range(1, 6):
        assert back.csps[i].sigtree.root == wh.csps[i].sigtree.root
        assert [(r.pk, r.plain, r.shares) for r in back.csps[i].tables["product"]] == \
               [(r.pk, r.plain, r.shares) for r in wh.csps[i].tables["product"]]
    back.heal(5)
    assert back.reconstruct_record("product", 124)["prodName"] == "Shirt"
    assert all(r.ok for r in back.verify_all().values())


def test_saved_files_deterministic(tmp_path, km_toy):
    wh = _warehouse(km_toy)
    wh.load_rows("product", _rows())
    a, b = tmp_path / "a", tmp_path / "b"
    wh.save(a)
    wh.save(b)
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
