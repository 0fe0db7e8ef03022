import numpy as np
import pytest

from rrstates.synth import generate, two_regime_specs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def write_prices(tmp_path):
    """Write long-format rows [(date, ticker, price), ...] and return the path."""

    def _write(rows, name="prices.csv", header="date,ticker,adj_close"):
        path = tmp_path / name
        lines = [header] + [f"{d},{t},{'' if p is None else p}" for d, t, p in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return _write


@pytest.fixture(scope="session")
def two_regime_panel():
    """20 assets, 30 epochs of 42 days, blocks reshuffled at epoch 16."""
    return generate(two_regime_specs(20, 16, 14, rho=0.7), 20, 42, seed=3)


ACCEPTANCE = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""

    def _verdict(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip()
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return _verdict


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
