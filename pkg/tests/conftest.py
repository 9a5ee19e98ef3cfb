from pathlib import Path

import pytest

from qpl.interp import load_database

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"
DB_ROOT = DATA / "db"
PLANS = DATA / "plans"
DATASET = DATA / "datasets" / "qpl_fixture.jsonl"
MINI = DATA / "datasets" / "mini.jsonl"


def read_plan(name: str) -> str:
    return (PLANS / name).read_text()


@pytest.fixture(scope="session")
def world():
    return load_database(DB_ROOT / "world_1")


@pytest.fixture(scope="session")
def pets():
    return load_database(DB_ROOT / "pets_1")


@pytest.fixture(scope="session")
def museum():
    return load_database(DB_ROOT / "museum_visit")


@pytest.fixture(scope="session")
def documents():
    return load_database(DB_ROOT / "cre_Doc_Template_Mgt")


@pytest.fixture
def beatrix_text():
    return read_plan("beatrix_language.qpl")


@pytest.fixture
def beatrix_sql():
    return read_plan("beatrix_language.sql")


@pytest.fixture
def beatrix_qd():
    return read_plan("beatrix_language.qd")


@pytest.fixture
def template_count_text():
    return read_plan("documents_per_template.qpl")


@pytest.fixture
def membership_text():
    return read_plan("membership_spend.qpl")
