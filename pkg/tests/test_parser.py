import pytest
from hypothesis import given, settings, strategies as st

from qpl.core import AggExpr, ColumnRef, OpKind
from qpl.gen import random_case
from qpl.interp import load_database
from qpl.parser import (
    Complete,
    Continuable,
    QplSyntaxError,
    Rejected,
    parse,
    parse_prefix,
    parse_prefix_schema_aware,
    pretty_print,
)

from conftest import DB_ROOT

seeds = st.integers(min_value=0, max_value=10**6)


@pytest.fixture(scope="module")
def world_schema():
    return load_database(DB_ROOT / "world_1").schema


def test_beatrix_plan_structure(beatrix_text):
    plan = parse(beatrix_text)
    assert [n.op for n in plan.nodes] == [OpKind.SCAN, OpKind.SCAN, OpKind.FILTER, OpKind.JOIN]
    join = plan.node(4)
    assert join.inputs == (1, 3)
    assert join.output == (ColumnRef("Language", 3),)
    cmp = join.predicate.comparisons()[0]
    assert (cmp.lhs, cmp.op, cmp.rhs) == (ColumnRef("CountryCode", 3), "=", ColumnRef("Code", 1))


def test_aggregate_output(template_count_text):
    node = parse(template_count_text).node(2)
    assert node.group_by == ("Template_ID",)
    assert node.output == (AggExpr("COUNT", "*", "Count"), ColumnRef("Template_ID"))


def test_whitespace_is_insignificant(beatrix_text):
    squeezed = " ".join(beatrix_text.split())
    spread = beatrix_text.replace(" ", "\n  ")
    assert parse(squeezed) == parse(beatrix_text) == parse(spread)


def test_all_clauses():
    text = (
        "#1 = Scan Table [ t ] Predicate [ a IS NOT NULL OR b NOT LIKE 'x%' ] Distinct [ true ] Output [ a , b ]\n"
        "#2 = TopSort [ #1 ] Rows [ 3 ] OrderBy [ a DESC , b ASC ] WithTies [ true ] Output [ a , b ]\n"
        "#3 = Aggregate [ #2 ] GroupBy [ b ] Output [ b , AVG(DISTINCT a) AS m ]"
    )
    plan = parse(text)
    assert plan.node(1).distinct is True
    assert plan.node(2).rows == 3 and plan.node(2).with_ties is True
    assert plan.node(3).output[1] == AggExpr("AVG", "a", "m", distinct_arg=True)
    assert pretty_print(plan) == text


def test_string_escape_and_numbers():
    plan = parse("#1 = Scan Table [ t ] Predicate [ a = 'it''s' AND b >= -1.50 ] Output [ a ]")
    first, second = plan.node(1).predicate.comparisons()
    assert first.rhs.text == "it's"
    assert second.rhs.text == "-1.50"
    assert parse(pretty_print(plan)) == plan


@pytest.mark.parametrize(
    "text, position",
    [
        ("#1 = scan Table [ t ] Output [ a ]", 5),
        ("#2 = Scan Table [ t ] Output [ a ]", 1),
        ("#1 = Scan Table [ t ] Output [ a , ]", 35),
        ("#1 = Scan Table [ t ] Output [ a ]\n#2 = Filter [ #2 ] Predicate [ a = 1 ] Output [ a ]", 50),
        ("#1 = Scan Table [ t ] Output [ AND ]", 31),
        ("#1 = Scan Table [ t ] Output [ a ]\n#2 = TopSort [ #1 ] Rows [ 0 ] OrderBy [ a ASC ] Output [ a ]", 62),
    ],
)
def test_syntax_error_positions(text, position):
    with pytest.raises(QplSyntaxError) as info:
        parse(text)
    assert info.value.position == position
    assert info.value.expected
    assert isinstance(parse_prefix(text), Rejected)


def test_truncated_program_is_an_error_but_a_viable_prefix():
    text = "#1 = Scan Table [ t ] Output [ a"
    with pytest.raises(QplSyntaxError):
        parse(text)
    assert parse_prefix(text) == Continuable()


def test_empty_input_is_continuable():
    assert parse_prefix("") == Continuable()
    assert parse_prefix("   \n") == Continuable()


def test_keyword_prefix_of_identifier_is_not_rejected():
    # "Or" could still become "Order" as a column name
    assert parse_prefix("#1 = Scan Table [ t ] Output [ Or") == Continuable()


@given(seeds)
@settings(max_examples=150, deadline=None)
def test_round_trip(seed):
    plan = random_case(seed)[2]
    text = pretty_print(plan)
    assert parse(text) == plan
    assert pretty_print(parse(text)) == text


@given(seeds, st.data())
@settings(max_examples=150, deadline=None)
def test_every_prefix_is_viable(seed, data):
    text = pretty_print(random_case(seed)[2])
    cut = data.draw(st.integers(min_value=0, max_value=len(text)))
    assert not isinstance(parse_prefix(text[:cut]), Rejected)


@given(seeds, st.text(alphabet="#[]=,.'() abAZ019_\n", max_size=20))
@settings(max_examples=200, deadline=None)
def test_rejection_is_permanent(seed, garbage):
    text = pretty_print(random_case(seed)[2])
    bad = text + " ] ]"
    outcome = parse_prefix(bad)
    assert isinstance(outcome, Rejected)
    later = parse_prefix(bad + garbage)
    assert isinstance(later, Rejected) and later.position == outcome.position


def test_schema_aware_table_check(world_schema):
    assert isinstance(parse_prefix_schema_aware("#1 = Scan Table [ countryy ]", world_schema), Rejected)
    assert parse_prefix_schema_aware("#1 = Scan Table [ countr", world_schema) == Continuable()
    assert parse_prefix_schema_aware("#1 = Scan Table [ Country ] ", world_schema) == Continuable()
    # plain prefix parsing knows nothing of tables
    assert parse_prefix("#1 = Scan Table [ countryy ]") == Continuable()


def test_schema_aware_scan_columns(world_schema):
    good = "#1 = Scan Table [ country ] Predicate [ HeadOfState = 'x' ] Output [ Code , Head"
    assert parse_prefix_schema_aware(good, world_schema) == Continuable()
    bad = "#1 = Scan Table [ country ] Output [ Code , Language ]"
    outcome = parse_prefix_schema_aware(bad, world_schema)
    assert isinstance(outcome, Rejected) and outcome.position == bad.index("Language")


def test_schema_aware_accepts_gold_plan(world_schema, beatrix_text):
    assert isinstance(parse_prefix_schema_aware(beatrix_text, world_schema), Complete)
    assert isinstance(parse_prefix_schema_aware(beatrix_text, world_schema, flow=True), Complete)


def test_flow_mode_checks_columns_past_scans(world_schema):
    text = (
        "#1 = Scan Table [ country ] Output [ Code ]\n"
        "#2 = Filter [ #1 ] Predicate [ Name = 'x' ] Output [ Code ]"
    )
    assert isinstance(parse_prefix_schema_aware(text, world_schema), Complete)
    outcome = parse_prefix_schema_aware(text, world_schema, flow=True)
    assert isinstance(outcome, Rejected) and outcome.position == text.index("Name")


def test_flow_mode_qualified_reference_must_name_an_input(world_schema):
    text = (
        "#1 = Scan Table [ country ] Output [ Code ]\n"
        "#2 = Scan Table [ countrylanguage ] Output [ CountryCode ]\n"
        "#3 = Join [ #1 , #2 ] Predicate [ #1.Code = #2.CountryCode ] Output [ #2.Language ]"
    )
    outcome = parse_prefix_schema_aware(text, world_schema, flow=True)
    assert isinstance(outcome, Rejected) and outcome.position == text.index("Language")
