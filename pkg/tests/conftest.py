"""Shared reconstruction fixtures and the acceptance summary."""

import time

import numpy as np
import pytest

from spect_cht.phantom import ImageGrid, default_phantom, project, rasterize
from spect_cht.recon import ReconConfig, run_reconstruction

GRID = 256
VIEWS = 720
RAYS = 400

# criterion number -> (passed, detail)
ACCEPTANCE = {}


def mu0_for(mu1_max, n=GRID, radius=1.0):
    """Attenuation that makes the longest reconstructed chord reach ``mu1_max``."""
    x = ImageGrid.centers(n, 1.0)
    x1 = np.min(np.abs(x[np.abs(x) < radius]))
    return mu1_max / np.sqrt(radius * radius - x1 * x1)


class Pipeline:
    """Lazily computed, cached reconstructions of the default phantom."""

    def __init__(self):
        self.phantom = default_phantom()
        self.reference = rasterize(self.phantom, GRID)
        self._sino = {}
        self._recon = {}

    def sinogram(self, mu1_max):
        if mu1_max not in self._sino:
            self._sino[mu1_max] = project(self.phantom, mu0_for(mu1_max), VIEWS, RAYS)
        return self._sino[mu1_max]

    def config(self, mu1_max, **kw):
        return ReconConfig(mu0=mu0_for(mu1_max), n=GRID, n_views=VIEWS, n_rays=RAYS, **kw)

    def reconstruct(self, mu1_max, **kw):
        key = (mu1_max, tuple(sorted(kw.items())))
        if key not in self._recon:
            from spect_cht.recon import prepare_sinogram

            cfg = self.config(mu1_max, **kw)
            start = time.perf_counter()
            g = prepare_sinogram(cfg, self.sinogram(mu1_max))
            image, info = run_reconstruction(cfg, g)
            info["seconds"] = time.perf_counter() - start
            self._recon[key] = (image, info)
        return self._recon[key]


@pytest.fixture(scope="session")
def pipeline():
    return Pipeline()


@pytest.fixture
def criterion():
    def record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
        assert passed, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
