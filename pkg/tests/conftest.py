import pytest

from minaction.orbitgen import GeneratorConfig, generate_dataset

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, passed: bool, detail: str):
    line = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def kepler_data():
    return generate_dataset(GeneratorConfig(system="kepler"), 0)


@pytest.fixture(scope="session")
def hooke_data():
    return generate_dataset(GeneratorConfig(system="hooke"), 0)


@pytest.fixture(scope="session")
def clean_wide_kepler():
    """Noise-free Kepler orbits with a in [2, 5], where stencil truncation is small."""
    return generate_dataset(GeneratorConfig(system="kepler", a_min=2.0, a_max=5.0,
                                            noise_fraction=0.0), 4)
