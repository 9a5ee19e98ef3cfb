import pytest
from hypothesis import given, settings, strategies as st

from qpl.compile import (
    SQLITE_LEGACY,
    BackendError,
    CompileError,
    ResultSet,
    SqliteBackend,
    UnsupportedDialectFeature,
    compile_to_cte,
    execute,
    execution_match,
    get_dialect,
    has_top_level_order_by,
    quote_ident,
    relation_result,
    results_equivalent,
)
from qpl.core import ColumnDef, SchemaCatalog, TableDef
from qpl.encode import normalize_whitespace
from qpl.gen import random_case
from qpl.interp import Database, eval_plan
from qpl.parser import parse

SCAN_CODE = "#1 = Scan Table [ country ] Output [ Code ]"


def squash(sql):
    # whitespace-insensitive form; parentheses may or may not carry padding
    return normalize_whitespace(sql).replace("( ", "(").replace(" )", ")")


def test_single_scan_program(world):
    program = compile_to_cte(parse(SCAN_CODE), world.schema)
    expected = "WITH Scan_1 AS (SELECT Code FROM country) SELECT * FROM Scan_1"
    assert squash(program.sql) == squash(expected)
    assert program.clauses == (("Scan_1", "SELECT Code FROM country"),)
    assert program.final_select == "SELECT * FROM Scan_1"


def test_clause_per_step(world, beatrix_text):
    program = compile_to_cte(parse(beatrix_text), world.schema)
    assert [name for name, _ in program.clauses] == ["Scan_1", "Scan_2", "Filter_3", "Join_4"]
    assert program.sql.startswith("WITH Scan_1 AS (\n    SELECT")
    assert program.sql.endswith("\nSELECT * FROM Join_4")


def test_reserved_identifiers_are_quoted():
    assert quote_ident("Order") == '"Order"'
    assert quote_ident("weird name") == '"weird name"'
    assert quote_ident("Code") == "Code"
    schema = SchemaCatalog("r", (TableDef("Group", (ColumnDef("Order", "number"),)),))
    db = Database.from_rows(schema, {"Group": [(1,), (2,)]})
    plan = parse("#1 = Scan Table [ Group ] Predicate [ Order > 1 ] Output [ Order ]")
    with SqliteBackend.from_database(db) as backend:
        assert execute(compile_to_cte(plan, schema), backend).rows == ((2,),)


def test_sort_orders_final_select(world):
    text = SCAN_CODE.replace("Code ]", "Code , Name ]") + "\n#2 = Sort [ #1 ] OrderBy [ Name DESC ] Output [ Name , Code ]"
    program = compile_to_cte(parse(text), world.schema)
    assert program.ordered
    assert program.final_select == "SELECT * FROM Sort_2 ORDER BY LOWER(Name) DESC, Name, Code"


def test_topsort_with_ties_uses_rank(world):
    text = SCAN_CODE.replace("Code ]", "Code , Population ]") + (
        "\n#2 = TopSort [ #1 ] Rows [ 2 ] OrderBy [ Population DESC ] WithTies [ true ] Output [ Code ]"
    )
    plan = parse(text)
    assert "RANK() OVER (ORDER BY Population DESC)" in compile_to_cte(plan, world.schema).sql
    with pytest.raises(UnsupportedDialectFeature):
        compile_to_cte(plan, world.schema, SQLITE_LEGACY)
    plain = text.replace("WithTies [ true ]", "")
    assert "LIMIT 2" in compile_to_cte(parse(plain), world.schema, SQLITE_LEGACY).sql


def test_semi_joins_compile_to_exists(world):
    text = (
        "#1 = Scan Table [ country ] Output [ Code ]\n#2 = Scan Table [ countrylanguage ] Output [ CountryCode ]\n"
        "#3 = Except [ #1 , #2 ] Predicate [ #1.Code = #2.CountryCode ] Output [ #1.Code ]"
    )
    sql = compile_to_cte(parse(text), world.schema).sql
    assert "WHERE NOT EXISTS (SELECT 1 FROM Scan_2 WHERE Scan_1.Code = Scan_2.CountryCode)" in sql
    sql = compile_to_cte(parse(text.replace("Except", "Intersect")), world.schema).sql
    assert "WHERE EXISTS (" in sql


def test_unknown_dialect():
    with pytest.raises(CompileError):
        get_dialect("postgres")


def test_backend_error_names_failing_clause(world):
    backend = SqliteBackend.from_database(world)
    backend.drop_table("country")
    with pytest.raises(BackendError) as info:
        execute(compile_to_cte(parse(SCAN_CODE), world.schema), backend)
    assert info.value.clause == "Scan_1"
    assert "no such table" in info.value.engine_message


def test_backend_error_in_later_clause(world, beatrix_text):
    backend = SqliteBackend.from_database(world)
    backend.drop_table("countrylanguage")
    with pytest.raises(BackendError) as info:
        execute(compile_to_cte(parse(beatrix_text), world.schema), backend)
    assert info.value.clause == "Scan_2"


def test_backend_is_read_only(world):
    with SqliteBackend.from_database(world) as backend:
        with pytest.raises(BackendError):
            backend.execute("DELETE FROM country")


def test_empty_tables():
    schema = SchemaCatalog("e", (TableDef("t", (ColumnDef("a", "number"),)),))
    db = Database.from_rows(schema, {})
    plan = parse("#1 = Scan Table [ t ] Output [ a ]\n#2 = Aggregate [ #1 ] Output [ COUNT(*) AS n , MAX(a) AS m ]")
    with SqliteBackend.from_database(db) as backend:
        got = execute(compile_to_cte(plan, schema), backend)
    assert got.rows == ((0, None),)
    assert results_equivalent(relation_result(eval_plan(plan, db), plan), got)


def rs(rows, ordered=False, width=None):
    return ResultSet(tuple(f"c{i}" for i in range(width or len(rows[0]))), tuple(rows), ordered)


def test_results_equivalent_examples():
    assert results_equivalent(rs([(1, "a"), (2, "b")]), rs([(2, "b"), (1, "a")]))
    assert not results_equivalent(rs([(1,), (2,)], True), rs([(2,), (1,)], True))
    assert results_equivalent(rs([(1,), (2,)], True), rs([(2,), (1,)]))
    assert not results_equivalent(rs([(1,), (1,)]), rs([(1,)]))
    assert results_equivalent(rs([(2.0, True, "x  ")]), rs([(2, 1, "x")]))
    assert not results_equivalent(rs([(1,)]), rs([(1, 1)]))
    assert results_equivalent(rs([], width=2), rs([], width=2))


def test_tolerance_is_relative():
    a, b = rs([(1000000.0,), (3.0,)]), rs([(3.0,), (1000000.5,)])
    assert not results_equivalent(a, b)
    assert results_equivalent(a, b, 1e-6)
    assert not results_equivalent(rs([(0.001,)]), rs([(0.0011,)]), 1e-6)


def test_column_names_are_ignored():
    assert results_equivalent(ResultSet(("a",), ((1,),)), ResultSet(("b",), ((1,),)))


def test_execution_match(world, beatrix_text, beatrix_sql):
    with SqliteBackend.from_database(world) as backend:
        assert execution_match(beatrix_sql, parse(beatrix_text), backend, world.schema).match
        # dropping the official-language filter changes the result
        loose = "\n".join(beatrix_text.splitlines()[:3]) + (
            "\n#3 = Join [#1, #2] Predicate [#2.CountryCode = #1.Code] Output [#2.Language]"
        )
        outcome = execution_match(beatrix_sql, parse(loose), backend, world.schema)
        assert not outcome.match and outcome.cause == "mismatch"
        outcome = execution_match("SELEC nonsense", parse(beatrix_text), backend, world.schema)
        assert outcome.cause == "gold_backend"
        empty = "SELECT Code FROM country WHERE Code = 'none'"
        plan = parse("#1 = Scan Table [ country ] Predicate [ Code = 'none' ] Output [ Code ]")
        outcome = execution_match(empty, plan, backend, world.schema)
        assert outcome.match and outcome.empty_gold


@pytest.mark.parametrize(
    "sql, expected",
    [
        ("SELECT a FROM t ORDER BY a", True),
        ("select a from t order  by a limit 1", True),
        ("SELECT a FROM (SELECT a FROM t ORDER BY a)", False),
        ("SELECT 'order by' FROM t", False),
        ("SELECT a FROM t", False),
    ],
)
def test_top_level_order_by(sql, expected):
    assert has_top_level_order_by(sql) is expected


rows_strategy = st.lists(
    st.tuples(st.one_of(st.none(), st.integers(-5, 5), st.sampled_from(["a", "b", "B"]))), max_size=8
)


@given(rows_strategy, st.randoms())
def test_bag_equivalence_is_permutation_invariant(rows, rnd):
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    a = ResultSet(("x",), tuple(rows))
    b = ResultSet(("x",), tuple(shuffled))
    assert results_equivalent(a, b) and results_equivalent(b, a)


@given(rows_strategy, rows_strategy)
def test_equivalence_is_symmetric(r1, r2):
    a, b = ResultSet(("x",), tuple(r1)), ResultSet(("x",), tuple(r2))
    assert results_equivalent(a, b) == results_equivalent(b, a)


@given(st.integers(min_value=0, max_value=10**6))
@settings(max_examples=100, deadline=None)
def test_compiled_program_agrees_with_interpreter(seed):
    schema, db, plan = random_case(seed)
    with SqliteBackend.from_database(db) as backend:
        got = execute(compile_to_cte(plan, schema), backend)
    assert results_equivalent(relation_result(eval_plan(plan, db), plan), got, 1e-6)
