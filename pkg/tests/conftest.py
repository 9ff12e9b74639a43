import numpy as np
import pytest

from frechet_floquet.ode import CoefficientTower, TrigPolynomial


def random_nested(rng, depth, diag_low=0.2, diag_high=5.0, off=2.0):
    """Lower-triangular complex matrix with diagonal moduli in [diag_low, diag_high]."""
    m = np.zeros((depth, depth), dtype=complex)
    mod = rng.uniform(diag_low, diag_high, depth)
    arg = rng.uniform(-np.pi, np.pi, depth)
    m[np.diag_indices(depth)] = mod * np.exp(1j * arg)
    r, c = np.tril_indices(depth, -1)
    z = rng.uniform(-1, 1, len(r)) + 1j * rng.uniform(-1, 1, len(r))
    m[r, c] = off * z / np.maximum(1, np.abs(z))
    return m


def random_unit_complex(rng):
    z = rng.uniform(-1, 1) + 1j * rng.uniform(-1, 1)
    return z / max(1.0, abs(z))


def random_trig_system(rng, depth=5, max_harmonic=3):
    """Lower-triangular trig-polynomial coefficient, every coefficient modulus <= 1."""
    entries = {}
    for r in range(1, depth + 1):
        for c in range(1, r + 1):
            ks = rng.choice(np.arange(1, max_harmonic + 1), size=2, replace=False)
            entries[(r, c)] = TrigPolynomial(
                random_unit_complex(rng),
                cos=[(int(ks[0]), random_unit_complex(rng))],
                sin=[(int(ks[1]), random_unit_complex(rng))],
            )
    return CoefficientTower(depth, entries)


def scalar_system(alpha=1.0, beta=1.0, harmonic=1):
    return CoefficientTower(1, {(1, 1): TrigPolynomial(alpha, sin=[(harmonic, beta)])})


def two_level_system():
    """A_2 = [[1, 0], [cos 2 pi t, 1]]."""
    return CoefficientTower(2, {
        (1, 1): TrigPolynomial(1.0),
        (2, 1): TrigPolynomial(cos=[(1, 1.0)]),
        (2, 2): TrigPolynomial(1.0),
    })


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


#: (criterion, passed, detail) lines recorded by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda x: int(x[0].split()[0])):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {name}: {detail}")
