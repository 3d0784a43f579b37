from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import settings, strategies as st

from stopcert.poly import Monomial, Polynomial
from stopcert.pts import load_pts

DATA = Path(__file__).resolve().parents[1] / "src" / "stopcert" / "data"
EXAMPLES = ["markov", "while_loop", "hare", "betting", "nested_inner", "nested_outer", "nested"]

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def load(name: str, **params):
    return load_pts(DATA / f"{name}.json", params or None)


@pytest.fixture(scope="session")
def markov():
    return load("markov")


@pytest.fixture(scope="session")
def hare():
    return load("hare")


@pytest.fixture(scope="session")
def betting():
    return load("betting")


@pytest.fixture(scope="session")
def while_loop():
    return load("while_loop")


rationals = st.fractions(min_value=-5, max_value=5, max_denominator=6)


def polynomials(variables=("x", "y", "z"), max_degree=3, max_terms=5):
    # a multiset of at most max_degree variables is a monomial of bounded degree
    mono = st.lists(st.sampled_from(variables), max_size=max_degree) \
        .map(lambda vs: Monomial((v, 1) for v in vs))
    return st.dictionaries(mono, rationals, max_size=max_terms) \
        .map(lambda terms: Polynomial(terms, variables))


def points(variables=("x", "y", "z")):
    return st.fixed_dictionaries({v: rationals for v in variables})


@pytest.fixture
def frac():
    return Fraction


# acceptance reporting ---------------------------------------------------------

_CRITERIA: dict[int, tuple[str, bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, title = mark.args
    if rep.when == "setup" and rep.passed:
        return
    _CRITERIA[number] = (title, rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")
