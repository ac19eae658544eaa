import numpy as np
import pytest

from evolift.layers import flatten
from evolift.tensor import Tensor


def randomize(tree, rng, std=0.3):
    """Overwrite every leaf with N(0, std^2) noise (keeps layer-norm gains near 1)."""
    for path, t in flatten(tree).items():
        noise = rng.normal(0.0, std, size=t.shape)
        t.data = 1.0 + noise if path.endswith("ln.g") or path.endswith("ln_out.g") else noise
    return tree


def zero_projections(tree):
    """Zero every parameter except layer-norm affine terms."""
    for path, t in flatten(tree).items():
        if ".ln" not in f".{path}" and not path.startswith("ln"):
            t.data = np.zeros(t.shape)
    return tree


def tensor(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request, capsys):
    """Report one acceptance line immediately and again in the terminal summary."""

    def report(number, title, ok, detail):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} -- {detail}"
        request.config.stash.setdefault(ACCEPTANCE, []).append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
