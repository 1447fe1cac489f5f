import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stam.models import ModelConfig, build_model  # noqa: E402


@pytest.fixture
def toy_config():
    return ModelConfig(n_vars=3, input_len=4, output_len=2, enc_dim=5, dec_dim=5, context_dim=2, seed=7)


@pytest.fixture
def make_model():
    def make(arch="stam", init="random", **kw):
        base = dict(n_vars=3, input_len=4, output_len=2, enc_dim=5, dec_dim=5, context_dim=2, seed=7)
        base.update(kw)
        return build_model(ModelConfig(arch=arch, **base), init=init)

    return make


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one verdict line per acceptance criterion."""

    def record(number, title, verdict, detail=""):
        status = {True: "PASS", False: "FAIL", None: "NOT RUN"}[verdict]
        line = f"[{status}] criterion {number}: {title}" + (f" -- {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return verdict

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
