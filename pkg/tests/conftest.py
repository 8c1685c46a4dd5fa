import numpy as np
import pytest

from oamsim.config import make_config
from oamsim.optics import Field, GridSpec
from oamsim import report as report_mod


def small_grid(n=32, pitch=20e-6, wavelength=1.55e-6):
    return GridSpec(n=n, pitch=pitch, wavelength=wavelength)


def band_limited_random_field(grid, distance, seed=0, margin=0.5):
    """Unit-power random field whose spectrum sits well inside the
    propagation band limit for ``distance`` (oracle helper for unitarity)."""
    rng = np.random.default_rng(seed)
    spec = rng.normal(size=(grid.n, grid.n)) + 1j * rng.normal(size=(grid.n, grid.n))
    fx, fy = grid.frequencies()
    f_max = 1.0 / (
        grid.wavelength * np.sqrt((2.0 * distance / grid.extent) ** 2 + 1.0)
    )
    keep = (np.abs(fx) <= margin * f_max) & (np.abs(fy) <= margin * f_max)
    spec *= keep
    amps = np.fft.ifft2(spec)
    amps /= np.sqrt(np.sum(np.abs(amps) ** 2) * grid.pitch**2)
    return Field(grid, amps)


@pytest.fixture(scope="session")
def quick_config():
    """Small, fast geometry for pipeline tests (not the acceptance defaults)."""
    return make_config(
        {
            "grid": {"n": 64, "pitch": 40e-6},
            "stack": {"layers": 2, "spacing": 0.02},
            "modes": {"waist_small": 2.0e-4, "waist_large": 3.0e-4},
            "training": {"iterations": 40, "seed": 11},
            "tomography": {"visibility_trials": 20, "process_trials": 0},
        }
    )


@pytest.fixture(scope="session")
def default_toffoli(tmp_path_factory):
    """Default-config Toffoli training shared by the acceptance criteria."""
    import time

    config = make_config({})
    t0 = time.perf_counter()
    result, bases = report_mod.train_gate(config)
    return {
        "config": config,
        "train": result,
        "bases": bases,
        "train_seconds": time.perf_counter() - t0,
    }
