import numpy as np
import pytest

from oracles import dbp_exact, vertical_edges
from spect_cht.dbp import backproject, backproject_points, read_bfield, write_bfield
from spect_cht.phantom import default_phantom, project
from spect_cht.sinogram import (
    DerivativeSinogram,
    Sinogram,
    apply_truncation,
    differentiate_s,
    ray_grid,
    view_grid,
)


def gaussian_dg(mu0, n_views, n_rays=400, center=(0.15, -0.1), sigma=0.2):
    """Analytic ds-derivative of the exponential Radon transform of a Gaussian blob."""
    phi = view_grid(n_views)[:, None]
    s = ray_grid(n_rays, 1.0)[None, :]
    sc = center[0] * np.cos(phi) + center[1] * np.sin(phi)
    tc = -center[0] * np.sin(phi) + center[1] * np.cos(phi)
    g = np.sqrt(np.pi) * sigma * np.exp(-((s - sc) / sigma) ** 2 + mu0 * tc + (mu0 * sigma) ** 2 / 4)
    return DerivativeSinogram(-2 * (s - sc) / sigma ** 2 * g, 1.0, mu0, None)


def test_zero_data_gives_zero_field():
    dg = DerivativeSinogram(np.zeros((16, 20)), 1.0, 0.5, None)
    field = backproject(dg, 0.5, 12)
    assert not field.grid.values.any()
    assert field.valid_mask[np.hypot(*np.meshgrid(field.grid.x1, field.grid.x2)) < 0.95].all()


def test_needs_two_views():
    with pytest.raises(ValueError):
        backproject_points(DerivativeSinogram(np.zeros((1, 5)), 1.0, 0.0, None), 0.0, 0.0, 0.0)


@pytest.mark.parametrize("mu0", [0.0, 0.75])
def test_matches_closed_form_on_center_line(mu0):
    ph = default_phantom()
    g = project(ph, mu0, 720, 400)
    dg = differentiate_s(g)
    x2 = np.linspace(-0.99, 0.99, 397)
    b, valid = backproject_points(dg, mu0, 0.0, x2, zero_beyond_detector=True)
    assert valid.all()
    ref = dbp_exact(ph, mu0, 0.0, x2)
    # b has log singularities at the vertical jumps of p; exclude 2 detector bins around them
    far = np.min(np.abs(x2[:, None] - vertical_edges(ph, 0.0)[None, :]), axis=1) > 2 * g.ds
    err = np.linalg.norm((b - ref)[far]) / np.linalg.norm(ref[far])
    assert err <= 0.01


def test_truncated_validity():
    g = apply_truncation(project(default_phantom(), 0.75, 360, 400), (-0.45, -1, 0.45, 1))
    field = backproject(differentiate_s(g), 0.75, 100, zero_beyond_detector=True)
    X1, X2 = np.meshgrid(field.grid.x1, field.grid.x2, indexing="ij")
    disc = np.hypot(X1, X2) < 1
    assert field.valid_mask[disc & (np.abs(X1) <= 0.4)].all()
    assert not field.valid_mask[np.abs(X1) >= 0.6].any()


def test_valid_everywhere_in_disc_without_truncation():
    field = backproject(differentiate_s(project(default_phantom(), 0.5, 90, 100)), 0.5, 50,
                        zero_beyond_detector=True)
    X1, X2 = np.meshgrid(field.grid.x1, field.grid.x2, indexing="ij")
    assert field.valid_mask[np.hypot(X1, X2) < 1].all()


def test_linear_in_data():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(2, 40, 60))
    pts = rng.uniform(-0.7, 0.7, size=(2, 200))

    def bp(v):
        return backproject_points(DerivativeSinogram(v, 1.0, 0.6, None), 0.6, *pts)[0]

    lhs = bp(1.7 * a + 0.3 * b)
    rhs = 1.7 * bp(a) + 0.3 * bp(b)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(lhs)


def test_view_count_convergence_is_first_order():
    pts = np.array([[0.1, -0.3, 0.25, 0.0], [0.05, 0.2, -0.15, -0.35]])

    def b(n):
        return backproject_points(gaussian_dg(0.75, n), 0.75, *pts)[0]

    ref = b(2880)
    ratio = np.linalg.norm(b(360) - ref) / np.linalg.norm(b(720) - ref)
    assert 1.5 <= ratio <= 2.5


def test_threads_give_identical_result():
    dg = differentiate_s(project(default_phantom(), 0.5, 60, 80))
    x = np.linspace(-0.9, 0.9, 80)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    one = backproject_points(dg, 0.5, X1, X2)
    many = backproject_points(dg, 0.5, X1, X2, threads=4)
    assert one[0].tobytes() == many[0].tobytes()
    np.testing.assert_array_equal(one[1], many[1])


def test_bfield_round_trip(tmp_path):
    g = apply_truncation(project(default_phantom(), 0.5, 30, 40), (-0.45, -1, 0.45, 1))
    field = backproject(differentiate_s(g), 0.5, 24)
    write_bfield(tmp_path / "b.bin", field)
    back = read_bfield(tmp_path / "b.bin")
    assert back.grid.values.tobytes() == field.grid.values.tobytes()
    np.testing.assert_array_equal(back.valid_mask, field.valid_mask)
    assert back.mu0 == 0.5 and back.grid.extent == 1.0
    (tmp_path / "x").write_bytes(b"{}\n")
    with pytest.raises(ValueError):
        read_bfield(tmp_path / "x")


def test_sinogram_geometry_helpers_agree():
    g = Sinogram(np.zeros((4, 6)), 1.0, 0.0, np.zeros((2, 6)))
    dg = differentiate_s(g)
    np.testing.assert_array_equal(dg.phi_grid, g.phi_grid)
    np.testing.assert_array_equal(dg.s_grid, g.s_grid)
