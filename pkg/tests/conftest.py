import itertools

import numpy as np
import pytest

from uwbhmm import kernels


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    return request.param


def brute_force_posteriors(b, pi, trans):
    """State-1 posteriors and likelihood by summing over all 2**n paths."""
    n = b.shape[0]
    post1 = np.zeros(n)
    total = 0.0
    for path in itertools.product((0, 1), repeat=n):
        p = pi[path[0]] * b[0, path[0]]
        for k in range(1, n):
            p *= trans[path[k - 1], path[k]] * b[k, path[k]]
        total += p
        post1 += p * np.array(path)
    return post1 / total, total


def random_chain(rng, n):
    pi = rng.dirichlet([1, 1])
    trans = rng.dirichlet([1, 1], size=2)
    b = rng.uniform(0.05, 1.0, size=(n, 2))
    return b, pi, trans


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
