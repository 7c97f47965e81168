import sys
from pathlib import Path

import pytest

from idmcov import bind_rules, derive_all, fixture_path, load_dataset, parse_rules, parse_schema

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return Path(str(fixture_path()))


@pytest.fixture(scope="session")
def schema(fixture_dir):
    return parse_schema((fixture_dir / "schema.idm").read_text(), source="schema.idm")


@pytest.fixture(scope="session")
def rules_text(fixture_dir) -> str:
    return (fixture_dir / "rules.br").read_text()


@pytest.fixture(scope="session")
def rules(schema, rules_text):
    return bind_rules(parse_rules(rules_text), schema)


@pytest.fixture(scope="session")
def rule_by_name(rules):
    return {r.name: r for r in rules}


@pytest.fixture(scope="session")
def coverage(schema, rules):
    return derive_all(rules, schema)


@pytest.fixture()
def snapshot(schema, fixture_dir):
    return load_dataset(schema, fixture_dir / "dataset")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.LINES:
        terminalreporter.write_line(line)
