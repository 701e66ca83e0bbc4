import itertools

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def all_indices(shape):
    """Every multi-index of ``shape`` as an int array (N, len(shape))."""
    return np.asarray(list(itertools.product(*(range(n) for n in shape))), dtype=np.int64)


def random_facts(rng, n, n_e, n_r, arity):
    return np.column_stack([rng.integers(0, n_r, n), rng.integers(0, n_e, (n, arity))])


def brute_force_score(E, R, W, f):
    """Tucker score by an explicit loop over every core entry."""
    rel, ents = f[0], f[1:]
    total = 0.0
    for idx in itertools.product(*(range(n) for n in W.shape)):
        term = W[idx] * R[rel, idx[0]]
        for slot, j in enumerate(idx[1:]):
            term *= E[ents[slot], j]
        total += term
    return total


# --- acceptance reporting ------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    number = getattr(item.function, "criterion", None)
    if number is not None and rep.when == "call":
        detail = getattr(item, "criterion_detail", "")
        if rep.failed and not detail:
            detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
        _CRITERIA[number] = ("PASS" if rep.passed else "FAIL", detail)


@pytest.fixture
def record(request):
    """Attach a one-line measurement to the running acceptance criterion."""

    def _record(detail: str) -> None:
        request.node.criterion_detail = detail
        print(detail)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
