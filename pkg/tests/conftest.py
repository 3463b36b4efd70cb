import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lucie3d.grid import build_grid

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def t3():
    return build_grid(3)


@pytest.fixture(scope="session")
def t7():
    return build_grid(7)


@pytest.fixture(scope="session")
def t15():
    return build_grid(15)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_difference(loss_fn, x: np.ndarray, h: float = 1e-5, idx=None) -> np.ndarray:
    """Central differences of a scalar function at selected flat indices of ``x``."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    idx = range(flat.size) if idx is None else idx
    out = []
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn(x)
        flat[i] = orig - h
        down = loss_fn(x)
        flat[i] = orig
        out.append((up - down) / (2 * h))
    return np.array(out)


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


@pytest.fixture(scope="session")
def fd():
    return central_difference


@pytest.fixture(scope="session")
def relerr():
    return rel_err


@pytest.fixture(scope="session")
def year_t3(t3):
    """One synthetic year at T3 with SST, held in memory."""
    from lucie3d.synth import SynthConfig, generate_synthetic_climate

    return generate_synthetic_climate(SynthConfig(seed=3, years=1), t3)


@pytest.fixture(scope="session")
def year_stats(year_t3):
    from lucie3d.data import compute_norm_stats

    return compute_norm_stats(year_t3)


@pytest.fixture(scope="session")
def make_ckpt(t3, year_stats):
    from lucie3d import sfno

    def make(use_sst=False, seed=0, zero=False):
        cfg = sfno.ModelConfig(num_blocks=1, latent_dim=4, truncation=3, use_sst=use_sst)
        params = sfno.init_params(cfg, seed)
        if zero:
            params = {k: np.zeros_like(v) for k, v in params.items()}
        return sfno.Checkpoint(cfg, params, year_stats, t3)

    return make


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def report(n: int, ok: bool, detail: str, seconds: float) -> None:
        ACCEPTANCE[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail}; {seconds:.1f} s)"
        print(ACCEPTANCE[n])

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
