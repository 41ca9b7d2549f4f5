import datetime
from fractions import Fraction

import pytest

from fvss import cli
from fvss.config import load_config
from fvss.errors import ConfigError
from fvss.sharing import Column

SEED_HEX = bytes(range(32)).hex()

CONFIG = """\
[scheme]
n = 5
t = 4
seed = {seed}

[store]
root = {root}

[table:Product]
columns = ProdNo key, pname string, category string

[table:Sales]
columns = SaleNo key, ProdNo fk table=Product, yearid int, monthid int,
          price real scale=2, qty int, paid bool, day date

[indexes]
Product = category
Sales = yearid, monthid, price, qty

[derived]
Sales = price_sq square price scale=4

[cube:by_year]
table = Sales
hierarchies = yearid ; Product via ProdNo: category
measures = sum(price), count(*), avg(price)
"""

PRODUCTS_CSV = """\
ProdNo,pname,category
10,Shirt,apparel
11,Jacket,apparel
12,Mug,kitchen
"""

SALES_CSV = """\
SaleNo,ProdNo,yearid,monthid,price,qty,paid,day
1,10,2013,1,19.99,2,true,2013-01-05
2,11,2013,2,99.50,1,false,2013-02-11
3,12,2014,1,5.25,,true,2014-01-30
"""


@pytest.fixture
def site(tmp_path):
    cfg = tmp_path / "fvss.ini"
    cfg.write_text(CONFIG.format(seed=SEED_HEX, root=tmp_path / "warehouse"))
    (tmp_path / "products.csv").write_text(PRODUCTS_CSV)
    (tmp_path / "sales.csv").write_text(SALES_CSV)
    return tmp_path


def run(site, *argv, capsys=None):
    code = cli.main(["--config", str(site / "fvss.ini"), *argv])
    out, err = capsys.readouterr() if capsys else ("", "")
    return code, out, err


@pytest.fixture
def loaded(site, capsys):
    assert run(site, "init")[0] == 0
    assert run(site, "share", "Product", str(site / "products.csv"))[0] == 0
    assert run(site, "share", "Sales", str(site / "sales.csv"))[0] == 0
    capsys.readouterr()
    return site


# init and share

def test_init_creates_store_and_reports(site, capsys):
    code, out, err = run(site, "init", capsys=capsys)
    assert code == 0
    assert "2 tables" in out
    assert (site / "warehouse" / "index" / "tables").is_file()
    assert "warning" not in err  # (5, 4) keeps groups below the threshold


def test_init_twice_fails(site, capsys):
    assert run(site, "init")[0] == 0
    code, _, err = run(site, "init", capsys=capsys)
    assert code == 1
    assert "already initialized" in err


def test_share_three_rows_makes_nine_shared_records(site, capsys):
    run(site, "init")
    code, out, _ = run(site, "share", "Product", str(site / "products.csv"), capsys=capsys)
    assert code == 0
    assert "shared 3 rows" in out
    assert "new shared records across CSPs: 9" in out


def test_share_empty_csv_is_a_zero_write_success(site, capsys):
    run(site, "init")
    (site / "empty.csv").write_text("ProdNo,pname,category\n")
    code, out, _ = run(site, "share", "Product", str(site / "empty.csv"), capsys=capsys)
    assert code == 0
    assert "shared 0 rows" in out
    assert "new shared records across CSPs: 0" in out


def test_share_appended_row_adds_three_shared_records(loaded, capsys):
    (loaded / "more.csv").write_text(
        "SaleNo,ProdNo,yearid,monthid,price,qty,paid,day\n"
        "4,10,2014,3,45.00,3,true,2014-03-02\n"
    )
    code, out, _ = run(loaded, "share", "Sales", str(loaded / "more.csv"), capsys=capsys)
    assert code == 0
    assert "shared 1 rows" in out
    assert "new shared records across CSPs: 3" in out


def test_share_unknown_table_fails(loaded, capsys):
    code, _, err = run(loaded, "share", "Nope", str(loaded / "sales.csv"), capsys=capsys)
    assert code == 1
    assert "unknown table" in err


def test_share_stray_csv_column_fails(loaded, capsys):
    (loaded / "bad.csv").write_text("ProdNo,pname,color\n14,Sock,red\n")
    code, _, err = run(loaded, "share", "Product", str(loaded / "bad.csv"), capsys=capsys)
    assert code == 1
    assert "color" in err


# query

def test_query_sum_over_shares(loaded, capsys):
    code, out, _ = run(
        loaded, "query", "SELECT SUM(price) FROM Sales WHERE yearid = 2013",
        capsys=capsys,
    )
    assert code == 0
    assert "119.49" in out


def test_query_group_by_with_explicit_rg(loaded, capsys):
    code, out, _ = run(
        loaded, "query", "SELECT yearid, COUNT(*) FROM Sales GROUP BY yearid",
        "--rg", "2,3,4,5", capsys=capsys,
    )
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[1].split() == ["2013", "2"]
    assert lines[2].split() == ["2014", "1"]


def test_query_output_is_byte_identical_across_runs(loaded, capsys):
    args = ("query", "SELECT yearid, AVG(price) FROM Sales GROUP BY yearid",
            "--output", "csv")
    first = run(loaded, *args, capsys=capsys)
    second = run(loaded, *args, capsys=capsys)
    assert first == second
    assert first[1] == "yearid,AVG(price)\n2013,59.745\n2014,5.25\n"


def test_query_syntax_error_exits_one(loaded, capsys):
    code, _, err = run(loaded, "query", "SELEC SUM(price) FROM Sales", capsys=capsys)
    assert code == 1
    assert "QuerySyntaxError" in err


# verify, tamper, recover

def test_verify_clean_store_says_ok(loaded, capsys):
    code, out, _ = run(loaded, "verify", capsys=capsys)
    assert code == 0
    assert out.count("OK") == 5


def test_tamper_verify_recover_cycle(loaded, capsys):
    assert run(loaded, "tamper", "2", "Sales", "1", "price")[0] == 0
    code, out, err = run(loaded, "verify", capsys=capsys)
    assert code == 2
    assert "CSP2: breach in Sales" in out
    assert "OuterSignatureBreach" in err

    code, out, _ = run(loaded, "recover", "2", capsys=capsys)
    assert code == 0
    assert "regenerated" in out
    assert run(loaded, "verify")[0] == 0


def test_verify_single_csp_and_table_scope(loaded, capsys):
    run(loaded, "tamper", "3", "Product", "10", "pname")
    code, out, _ = run(loaded, "verify", "--csp", "3", "--table", "Sales", capsys=capsys)
    assert code == 0  # the tamper sits in Product, out of scope
    code, out, _ = run(loaded, "verify", "--csp", "3", "--table", "Product", capsys=capsys)
    assert code == 2
    assert "Product" in out


# failures and availability

def test_one_failure_keeps_queries_alive(loaded, capsys):
    assert run(loaded, "fail", "5")[0] == 0
    code, out, _ = run(loaded, "query", "SELECT SUM(qty) FROM Sales", capsys=capsys)
    assert code == 0
    assert "3" in out


def test_two_failures_break_reads_until_heal(loaded, capsys):
    run(loaded, "fail", "5")
    run(loaded, "fail", "4")
    code, _, err = run(loaded, "query", "SELECT SUM(qty) FROM Sales", capsys=capsys)
    assert code == 3
    assert "NotEnoughAliveCsps" in err
    assert run(loaded, "heal", "4")[0] == 0
    assert run(loaded, "heal", "5")[0] == 0
    assert run(loaded, "query", "SELECT SUM(qty) FROM Sales")[0] == 0


def test_verify_failed_csp_is_an_availability_error(loaded, capsys):
    run(loaded, "fail", "2")
    code, _, err = run(loaded, "verify", "--csp", "2", capsys=capsys)
    assert code == 3
    assert "CspUnavailable" in err


# cube commands

def test_cube_build_query_refresh(loaded, capsys):
    code, out, _ = run(loaded, "cube", "build", "by_year", capsys=capsys)
    assert code == 0
    assert "7 cells" in out

    code, out, _ = run(loaded, "cube", "query", "by_year", "--level", "yearid",
                       "--output", "csv", capsys=capsys)
    assert code == 0
    assert out == (
        "yearid,sum_price,count_rows,avg_price\n"
        "2013,119.49,2,59.745\n"
        "2014,5.25,1,5.25\n"
    )

    (loaded / "more.csv").write_text(
        "SaleNo,ProdNo,yearid,monthid,price,qty,paid,day\n"
        "4,10,2014,3,45.00,3,true,2014-03-02\n"
    )
    run(loaded, "share", "Sales", str(loaded / "more.csv"))
    code, out, _ = run(loaded, "cube", "refresh", "by_year", "--new", "4", capsys=capsys)
    assert code == 0
    assert "cells touched" in out

    code, out, _ = run(loaded, "cube", "query", "by_year", "--level", "yearid",
                       "--where", "yearid=2014", "--output", "csv", capsys=capsys)
    assert code == 0
    assert out.splitlines()[1] == "2014,50.25,2,25.125"


def test_cube_build_twice_fails(loaded, capsys):
    run(loaded, "cube", "build", "by_year")
    code, _, err = run(loaded, "cube", "build", "by_year", capsys=capsys)
    assert code == 1
    assert "DuplicateTable" in err


def test_cube_unknown_name_fails(loaded, capsys):
    code, _, err = run(loaded, "cube", "build", "nope", capsys=capsys)
    assert code == 1
    assert "no [cube:nope]" in err


def test_cube_build_needs_every_csp(loaded, capsys):
    run(loaded, "fail", "5")
    code, _, err = run(loaded, "cube", "build", "by_year", capsys=capsys)
    assert code == 3
    assert "CspUnavailable" in err


# locking

def test_lock_blocks_second_invocation(loaded, capsys):
    lock = loaded / "warehouse" / ".lock"
    lock.write_text("held\n")
    code, _, err = run(loaded, "query", "SELECT SUM(qty) FROM Sales", capsys=capsys)
    assert code == 1
    assert "StoreLocked" in err
    lock.unlink()
    assert run(loaded, "query", "SELECT SUM(qty) FROM Sales")[0] == 0
    assert not lock.exists()  # released after a normal run


# configuration and environment

def test_missing_config_file_exits_one(tmp_path, capsys):
    code = cli.main(["--config", str(tmp_path / "nope.ini"), "init"])
    _, err = capsys.readouterr()
    assert code == 1
    assert "ConfigError" in err


def test_threshold_above_n_reports_invalid_threshold(site, capsys):
    text = (site / "fvss.ini").read_text().replace("t = 4", "t = 9")
    (site / "fvss.ini").write_text(text)
    code, _, err = run(site, "init", capsys=capsys)
    assert code == 1
    assert "InvalidThreshold" in err


def test_seed_env_override_wins(site, monkeypatch, capsys):
    run(site, "init")
    run(site, "share", "Sales", str(site / "sales.csv"))
    monkeypatch.setenv("FVSS_SEED", "ff" * 32)
    code, _, _ = run(site, "query", "SELECT SUM(price) FROM Sales", capsys=capsys)
    assert code != 0  # foreign key material cannot read this store


def test_seed_env_round_trip(site, monkeypatch, capsys):
    monkeypatch.setenv("FVSS_SEED", "ab" * 32)
    run(site, "init")
    run(site, "share", "Sales", str(site / "sales.csv"))
    code, out, _ = run(site, "query", "SELECT SUM(price) FROM Sales", capsys=capsys)
    assert code == 0
    assert "124.74" in out


def test_store_flag_overrides_config_root(site, tmp_path, capsys):
    alt = tmp_path / "elsewhere"
    assert run(site, "--store", str(alt), "init")[0] == 0
    assert (alt / "index" / "tables").is_file()
    code, out, _ = run(site, "--store", str(alt), "verify", capsys=capsys)
    assert code == 0


def test_privacy_warning_when_groups_reach_threshold(tmp_path, capsys):
    cfg = tmp_path / "six.ini"
    cfg.write_text(
        "[scheme]\nn = 6\nt = 4\nseed = " + SEED_HEX + "\n"
        "[store]\nroot = " + str(tmp_path / "wh") + "\n"
        "[pricing]\n"
        "storage = 0.03, 0.04, 0.05, 0.12, 0.32, 0.10\n"
        "svm = 0.013, 0.059, 0.058, 0.060, 0.070, 0.06\n"
        "mvm = 0.026, 0.079, 0.163, 0.120, 0.140, 0.12\n"
        "lvm = 0.053, 0.120, 0.230, 0.240, 0.280, 0.24\n"
        "[table:Product]\ncolumns = ProdNo key, pname string\n"
    )
    code = cli.main(["--config", str(cfg), "init"])
    _, err = capsys.readouterr()
    assert code == 0
    assert "a storage group holds >= t shares" in err


# cost report

def test_cost_report_prints_reference_sheet(site, capsys):
    code, out, _ = run(site, "cost-report", capsys=capsys)
    assert code == 0
    assert "12.39" in out      # weighted storage bill
    assert "113.60" in out     # signed full replication bill
    assert "2.80" in out       # weighted sharing compute bill
    assert "6:57" in out and "0:42" in out


def test_cost_report_is_byte_identical_across_runs(site, capsys):
    first = run(site, "cost-report", "--output", "csv", capsys=capsys)
    second = run(site, "cost-report", "--output", "csv", capsys=capsys)
    assert first == second


# config parsing details

def test_load_config_shapes(site):
    cfg = load_config(site / "fvss.ini")
    assert (cfg.n, cfg.t) == (5, 4)
    assert cfg.seed == bytes(range(32))
    schema, index_attrs, derived = cfg.tables[1]
    assert schema.table == "Sales"
    assert schema.column("ProdNo") == Column("ProdNo", "fk", fk_table="Product")
    assert schema.column("price").scale == 2
    assert index_attrs == ("yearid", "monthid", "price", "qty")
    assert derived[0].name == "price_sq" and derived[0].kind == "square"
    spec = cfg.cubes["by_year"]
    assert spec.table == "Sales"
    assert spec.hierarchies[1].table == "Product"
    assert spec.hierarchies[1].fk == "ProdNo"
    assert [m.fn for m in spec.measures] == ["sum", "count", "avg"]


@pytest.mark.parametrize("mangle, hint", [
    (lambda s: s.replace("seed = " + SEED_HEX, "seed = zz"), "hex"),
    (lambda s: s.replace("[scheme]", "[scheme]\nbogus"), "parse"),
    (lambda s: s.replace("n = 5", "n = five"), "integer"),
    (lambda s: s.replace("ProdNo key", "ProdNo uuid"), "kind"),
    (lambda s: s + "\n[placement]\nweights = 1, 2\n", "weights"),
    (lambda s: s.replace("Product = category", "Typo = category"), "unknown tables"),
    (lambda s: s.replace("price_sq square price scale=4", "price_sq cube price"), "kind"),
    (lambda s: s.replace("measures = sum(price), count(*), avg(price)", "measures ="),
     "measure"),
    (lambda s: s.replace("table = Sales\n", ""), "table"),
])
def test_config_rejections(site, mangle, hint):
    path = site / "fvss.ini"
    path.write_text(mangle(path.read_text()))
    with pytest.raises(ConfigError, match=hint):
        load_config(path)


def test_config_missing_sections(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[scheme]\nn = 5\nt = 4\nseed = 00ff\n")
    with pytest.raises(ConfigError, match="store"):
        load_config(path)
    path.write_text(
        "[scheme]\nn = 5\nt = 4\nseed = 00ff\n[store]\nroot = x\n"
    )
    with pytest.raises(ConfigError, match="table"):
        load_config(path)


# cell parsing and printing round trips

@pytest.mark.parametrize("text, kind, value", [
    ("42", "int", 42),
    ("", "int", None),
    ("81.27", "real", Fraction("81.27")),
    ("true", "bool", True),
    ("0", "bool", False),
    ("2014-03-02", "date", datetime.date(2014, 3, 2)),
    ("Shirt", "string", "Shirt"),
])
def test_parse_cell(text, kind, value):
    assert cli._parse_cell(text, Column("c", kind, scale=2)) == value


@pytest.mark.parametrize("value, text", [
    (None, ""),
    (True, "true"),
    (False, "false"),
    (Fraction("81.27"), "81.27"),
    (Fraction(80), "80"),
    (Fraction(-3, 8), "-0.375"),
    (Fraction(1, 3), "0.333333"),
    (datetime.date(2014, 3, 2), "2014-03-02"),
    (7, "7"),
])
def test_fmt(value, text):
    assert cli._fmt(value) == text
