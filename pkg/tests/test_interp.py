from collections import Counter

import pytest
from hypothesis import given, strategies as st

from qpl.compile import SqliteBackend, compile_to_cte, execute, relation_result, results_equivalent
from qpl.core import ColumnDef, SchemaCatalog, TableDef
from qpl.interp import Database, ascii_lower, compare, eval_plan, load_database
from qpl.parser import parse

from conftest import DB_ROOT

SCHEMA = SchemaCatalog(
    "toy",
    (
        TableDef("p", (ColumnDef("id", "number"), ColumnDef("name", "text"), ColumnDef("score", "number"))),
        TableDef("q", (ColumnDef("pid", "number"), ColumnDef("tag", "text"))),
        TableDef("e", (ColumnDef("x", "number"),)),
    ),
)
ROWS = {
    "p": [(1, "ann", 10), (2, "Bob", None), (3, "bob", 7.5), (4, None, 10), (5, "Ève", 3)],
    "q": [(1, "a"), (1, "b"), (3, "a"), (9, "z"), (None, "n")],
    "e": [],
}
DB = Database.from_rows(SCHEMA, ROWS)


def run(text):
    plan = parse(text)
    rel = eval_plan(plan, DB)
    # every hand-checked case is also checked against the SQL route
    with SqliteBackend.from_database(DB) as backend:
        got = execute(compile_to_cte(plan, SCHEMA), backend)
    assert results_equivalent(relation_result(rel, plan), got, 1e-9), (rel.rows, got.rows)
    return list(rel.rows)


def scan(columns="id , name , score", table="p", extra=""):
    return f"#1 = Scan Table [ {table} ] {extra} Output [ {columns} ]"


def test_null_comparisons_drop_rows():
    assert run(scan("id", extra="Predicate [ score = 10 ]")) == [(1,), (4,)]
    assert run(scan("id", extra="Predicate [ score <> 10 ]")) == [(3,), (5,)]
    assert run(scan("id", extra="Predicate [ score IS NULL ]")) == [(2,)]


def test_three_valued_or_and():
    # NULL OR true is true; NULL AND false is false, so it is dropped either way
    assert run(scan("id", extra="Predicate [ score > 5 OR id = 2 ]")) == [(1,), (2,), (3,), (4,)]
    assert run(scan("id", extra="Predicate [ score > 5 AND id < 3 ]")) == [(1,)]


def test_like_is_ascii_case_insensitive():
    assert run(scan("id", extra="Predicate [ name LIKE 'B%' ]")) == [(2,), (3,)]
    assert run(scan("id", extra="Predicate [ name LIKE 'è%' ]")) == []
    assert run(scan("id", extra="Predicate [ name NOT LIKE '_ob' ]")) == [(1,), (5,)]


def test_sort_nulls_first_case_folded_and_tiebroken():
    text = scan() + "\n#2 = Sort [ #1 ] OrderBy [ name ASC ] Output [ name , id ]"
    assert run(text) == [(None, 4), ("ann", 1), ("Bob", 2), ("bob", 3), ("Ève", 5)]


def test_sort_desc():
    text = scan() + "\n#2 = Sort [ #1 ] OrderBy [ score DESC ] Output [ score , id ]"
    assert run(text) == [(10, 1), (10, 4), (7.5, 3), (3, 5), (None, 2)]


@pytest.mark.parametrize("ties, expected", [("false", [(1, 10)]), ("true", [(1, 10), (4, 10)])])
def test_topsort_with_ties(ties, expected):
    text = scan() + f"\n#2 = TopSort [ #1 ] Rows [ 1 ] OrderBy [ score DESC ] WithTies [ {ties} ] Output [ id , score ]"
    assert run(text) == expected


def test_aggregates_skip_nulls():
    text = scan() + (
        "\n#2 = Aggregate [ #1 ] Output [ COUNT(*) AS n , COUNT(score) AS c , SUM(score) AS s ,"
        " AVG(score) AS a , MIN(name) AS lo , MAX(name) AS hi , COUNT(DISTINCT score) AS d ]"
    )
    assert run(text) == [(5, 4, 30.5, 7.625, "Bob", "Ève", 3)]


def test_aggregate_over_empty_input():
    assert run(scan("x", table="e") + "\n#2 = Aggregate [ #1 ] Output [ COUNT(*) AS n , SUM(x) AS s ]") == [(0, None)]
    grouped = scan("x", table="e") + "\n#2 = Aggregate [ #1 ] GroupBy [ x ] Output [ x , COUNT(*) AS n ]"
    assert run(grouped) == []


def test_group_by_keeps_null_group():
    text = scan() + "\n#2 = Aggregate [ #1 ] GroupBy [ score ] Output [ score , COUNT(*) AS n ]"
    assert Counter(run(text)) == Counter([(10, 2), (None, 1), (7.5, 1), (3, 1)])


def test_join_and_cross_product():
    two = scan("id , name") + "\n#2 = Scan Table [ q ] Output [ pid , tag ]\n"
    assert Counter(run(two + "#3 = Join [ #1 , #2 ] Predicate [ #1.id = #2.pid ] Output [ #1.name , #2.tag ]")) == Counter(
        [("ann", "a"), ("ann", "b"), ("bob", "a")]
    )
    assert len(run(two + "#3 = Join [ #1 , #2 ] Output [ #1.id , #2.tag ]")) == 25


def test_join_distinct_and_name_collision():
    text = (
        scan("id , name") + "\n#2 = Scan Table [ p ] Output [ id , name ]\n"
        "#3 = Join [ #1 , #2 ] Predicate [ #1.id = #2.id ] Distinct [ true ] Output [ #1.name , #2.name ]"
    )
    plan = parse(text)
    assert eval_plan(plan, DB).names == ["name", "name_2"]
    assert len(run(text)) == 5


def test_except_is_anti_join():
    text = scan("id") + "\n#2 = Scan Table [ q ] Output [ pid ]\n#3 = Except [ #1 , #2 ] Predicate [ #1.id = #2.pid ] Output [ #1.id ]"
    assert run(text) == [(2,), (4,), (5,)]


def test_intersect_defaults_to_shared_names():
    text = (
        scan("id , name") + "\n#2 = Scan Table [ p ] Predicate [ score > 5 ] Output [ id ]\n"
        "#3 = Intersect [ #1 , #2 ] Output [ #1.name ]"
    )
    assert run(text) == [("ann",), ("bob",), (None,)]


def test_intersect_keeps_left_duplicates():
    text = (
        "#1 = Scan Table [ q ] Output [ pid ]\n#2 = Scan Table [ p ] Output [ id ]\n"
        "#3 = Intersect [ #1 , #2 ] Predicate [ #1.pid = #2.id ] Output [ #1.pid ]"
    )
    assert run(text) == [(1,), (1,), (3,)]


def test_union_is_positional_bag():
    text = (
        "#1 = Scan Table [ p ] Predicate [ id < 3 ] Output [ id , name ]\n"
        "#2 = Scan Table [ q ] Predicate [ pid = 1 ] Output [ pid , tag ]\n"
        "#3 = Union [ #1 , #2 ] Output [ #1.id , #1.name ]"
    )
    assert Counter(run(text)) == Counter([(1, "ann"), (2, "Bob"), (1, "a"), (1, "b")])


def test_scan_distinct():
    assert Counter(run(scan("score", extra="Distinct [ true ]"))) == Counter([(10,), (None,), (7.5,), (3,)])


def test_beatrix_plan_on_world(world, beatrix_text):
    # ABW, NLD and ANT have Beatrix as head of state; ANT has two official languages
    rows = eval_plan(parse(beatrix_text), world).rows
    assert Counter(rows) == Counter([("Dutch",), ("Dutch",), ("Dutch",), ("Papiamento",)])


def test_membership_sum(museum, membership_text):
    assert eval_plan(parse(membership_text), museum).rows == ((85.5,),)


def test_load_database_types(pets):
    rel = pets.table("Pets")
    assert rel.rows[1] == (2002, "dog", 2, 13.4)


def test_compare_unknown():
    assert compare("=", None, 1) is None
    assert compare("LIKE", "abc", None) is None
    assert compare("IS NULL", None) is True


@given(st.text())
def test_ascii_lower_only_touches_ascii(s):
    low = ascii_lower(s)
    assert len(low) == len(s)
    for a, b in zip(s, low):
        assert b == (a.lower() if "A" <= a <= "Z" else a)
