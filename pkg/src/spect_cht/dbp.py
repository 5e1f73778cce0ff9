"""Weighted differential backprojection.

For the derivative sinogram ``dg = dg/ds`` this computes::

    b(x) = int_0^pi exp(-mu0 x . theta_perp) dg(x . theta, phi) dphi

which along every vertical line equals ``-2 pi`` times the cosh-weighted
Hilbert transform of the activity on that line.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .phantom import ImageGrid
from .sinogram import DerivativeSinogram

__all__ = ["BField", "backproject", "backproject_points", "read_bfield", "write_bfield"]


@dataclass
class BField:
    grid: ImageGrid
    mu0: float
    valid_mask: np.ndarray


def _padded(dg: DerivativeSinogram, zero_beyond_detector: bool):
    vals = dg.values
    mask = np.ones(vals.shape, bool) if dg.mask is None else dg.mask
    s0 = dg.s_grid[0]
    if zero_beyond_detector:
        # the detector edge lies outside the support: dg vanishes there
        vals = np.pad(vals, ((0, 0), (1, 1)))
        mask = np.pad(mask, ((0, 0), (1, 1)), mode="edge")
        s0 = s0 - dg.ds
    return vals, mask, s0


def _accumulate(vals, mask, s0, ds, cos_phi, sin_phi, mu0, dphi, x1, x2):
    n_s = vals.shape[1]
    b = np.zeros(x1.shape)
    valid = np.ones(x1.shape, bool)
    for k in range(vals.shape[0]):
        s = x1 * cos_phi[k] + x2 * sin_phi[k]
        pos = (s - s0) / ds
        lo = np.floor(pos).astype(np.int64)
        inside = (lo >= 0) & (lo <= n_s - 2)
        # a point exactly on the last sample is fine
        at_end = pos == n_s - 1
        lo = np.where(at_end, n_s - 2, lo)
        inside |= at_end
        lo_c = np.clip(lo, 0, n_s - 2)
        frac = pos - lo_c
        row, mrow = vals[k], mask[k]
        ok = inside & mrow[lo_c] & mrow[lo_c + 1]
        valid &= ok
        val = (1.0 - frac) * row[lo_c] + frac * row[lo_c + 1]
        weight = np.exp(-mu0 * (-x1 * sin_phi[k] + x2 * cos_phi[k]))
        b += np.where(ok, weight * val, 0.0)
    return b * dphi, valid


def backproject_points(dg: DerivativeSinogram, mu0: float, x1, x2, *,
                       zero_beyond_detector: bool = False, threads: int = 1):
    """DBP ``b`` at arbitrary points; returns ``(b, valid)``.

    Midpoint rule over the view grid, linear interpolation in ``s``. A point
    is invalid if any view needs an unmeasured bin or an offset outside the
    detector. With ``zero_beyond_detector`` the derivative is taken to vanish
    just outside the detector, which holds when ``s_max`` is at least the
    support radius.
    """
    if dg.n_views < 2:
        raise ValueError("backprojection needs at least 2 views")
    x1, x2 = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
    shape = x1.shape
    x1, x2 = x1.ravel(), x2.ravel()
    vals, mask, s0 = _padded(dg, zero_beyond_detector)
    phi = dg.phi_grid
    args = (vals, mask, s0, dg.ds, np.cos(phi), np.sin(phi), float(mu0), np.pi / dg.n_views)
    threads = max(1, int(threads))
    if threads == 1 or x1.size < 4096:
        b, valid = _accumulate(*args, x1, x2)
    else:
        chunks = np.array_split(np.arange(x1.size), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda idx: _accumulate(*args, x1[idx], x2[idx]), chunks))
        b = np.concatenate([p[0] for p in parts])
        valid = np.concatenate([p[1] for p in parts])
    return b.reshape(shape), valid.reshape(shape)


def backproject(dg: DerivativeSinogram, mu0: float, n: int, extent: float = 1.0, *,
                zero_beyond_detector: bool = False, threads: int = 1) -> BField:
    """DBP sampled at the pixel centers of an ``n x n`` grid."""
    x = ImageGrid.centers(n, extent)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    b, valid = backproject_points(dg, mu0, X1, X2, zero_beyond_detector=zero_beyond_detector,
                                  threads=threads)
    return BField(grid=ImageGrid(b, extent), mu0=float(mu0), valid_mask=valid)


_MAGIC = "spect-cht-bfield"


def write_bfield(path, field: BField) -> None:
    g = field.grid
    header = {"format": _MAGIC, "version": 1, "n1": g.n1, "n2": g.n2, "extent": g.extent,
              "mu0": field.mu0, "has_mask": True}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(g.values, dtype="<f8").tobytes())
        fh.write(field.valid_mask.astype(np.uint8).tobytes())


def read_bfield(path) -> BField:
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ValueError(f"{path}: not a b-field file") from exc
        if not isinstance(header, dict) or header.get("format") != _MAGIC:
            raise ValueError(f"{path}: not a b-field file")
        payload = fh.read()
    n1, n2 = int(header["n1"]), int(header["n2"])
    if len(payload) != n1 * n2 * 9:
        raise ValueError(f"{path}: truncated payload")
    vals = np.frombuffer(payload, dtype="<f8", count=n1 * n2).reshape(n1, n2).astype(float)
    mask = np.frombuffer(payload, dtype=np.uint8, offset=n1 * n2 * 8).reshape(n1, n2).astype(bool)
    return BField(grid=ImageGrid(vals, float(header["extent"])), mu0=float(header["mu0"]),
                  valid_mask=mask)
