"""Sinogram container and data conditioning (s-derivative, noise, truncation)."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "DerivativeSinogram",
    "Sinogram",
    "add_poisson_noise",
    "apply_truncation",
    "differentiate_s",
    "read_sinogram",
    "ray_grid",
    "view_grid",
    "write_sinogram",
]


def view_grid(n_views: int) -> np.ndarray:
    return np.arange(n_views) * np.pi / n_views


def ray_grid(n_rays: int, s_max: float) -> np.ndarray:
    ds = 2.0 * s_max / n_rays
    return -s_max + (np.arange(n_rays) + 0.5) * ds


@dataclass
class Sinogram:
    """Samples ``g(s, phi)`` of the exponential Radon transform.

    ``values[k, j]`` is the projection at view ``phi_grid[k]`` and offset
    ``s_grid[j]``. ``endpoint_rows`` holds the ``phi = 0`` and ``phi = pi``
    rows on the same ``s_grid``. ``mask`` (and ``endpoint_mask``) are ``True``
    for measured bins; ``None`` means everything was measured.
    """

    values: np.ndarray
    s_max: float
    mu0: float
    endpoint_rows: np.ndarray
    mask: np.ndarray | None = None
    endpoint_mask: np.ndarray | None = None
    phi_grid: np.ndarray = field(init=False)
    s_grid: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.endpoint_rows = np.asarray(self.endpoint_rows, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("sinogram values must be 2-D (views x rays)")
        if self.s_max <= 0:
            raise ValueError(f"s_max must be positive, got {self.s_max}")
        if self.endpoint_rows.shape != (2, self.n_rays):
            raise ValueError("endpoint_rows must have shape (2, n_rays)")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise ValueError("mask shape does not match values")
            if self.endpoint_mask is None:
                self.endpoint_mask = np.ones((2, self.n_rays), dtype=bool)
        if self.endpoint_mask is not None:
            self.endpoint_mask = np.asarray(self.endpoint_mask, dtype=bool)
            if self.mask is None:
                self.mask = np.ones(self.values.shape, dtype=bool)
        self.phi_grid = view_grid(self.n_views)
        self.s_grid = ray_grid(self.n_rays, self.s_max)

    @property
    def n_views(self) -> int:
        return self.values.shape[0]

    @property
    def n_rays(self) -> int:
        return self.values.shape[1]

    @property
    def ds(self) -> float:
        return 2.0 * self.s_max / self.n_rays

    @property
    def has_mask(self) -> bool:
        return self.mask is not None

    def measured(self) -> np.ndarray:
        return np.ones(self.values.shape, bool) if self.mask is None else self.mask

    def measured_endpoints(self) -> np.ndarray:
        return np.ones((2, self.n_rays), bool) if self.endpoint_mask is None else self.endpoint_mask

    def endpoint_value(self, which: int, s) -> np.ndarray:
        """Linear interpolation of an endpoint row (0: ``phi = 0``, 1: ``phi = pi``).

        Raises if the interpolation stencil touches an unmeasured bin.
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        pos = (s - self.s_grid[0]) / self.ds
        lo = np.clip(np.floor(pos).astype(int), 0, self.n_rays - 2)
        frac = pos - lo
        if np.any(frac < -1e-9) or np.any(frac > 1 + 1e-9):
            raise ValueError("endpoint interpolation outside the detector")
        ok = self.measured_endpoints()[which]
        if not np.all(ok[lo] & ok[lo + 1]):
            raise ValueError("endpoint row is not measured at the requested offsets")
        row = self.endpoint_rows[which]
        return (1.0 - frac) * row[lo] + frac * row[lo + 1]


@dataclass
class DerivativeSinogram:
    """``dg/ds`` on the grid of its source sinogram."""

    values: np.ndarray
    s_max: float
    mu0: float
    mask: np.ndarray | None = None

    @property
    def n_views(self) -> int:
        return self.values.shape[0]

    @property
    def n_rays(self) -> int:
        return self.values.shape[1]

    @property
    def ds(self) -> float:
        return 2.0 * self.s_max / self.n_rays

    @property
    def phi_grid(self) -> np.ndarray:
        return view_grid(self.n_views)

    @property
    def s_grid(self) -> np.ndarray:
        return ray_grid(self.n_rays, self.s_max)


def differentiate_s(g: Sinogram) -> DerivativeSinogram:
    """Second-order finite-difference derivative along ``s``.

    Central differences inside, one-sided three-point stencils at the two
    detector edges. A bin is measured only if its whole stencil is.
    """
    if g.n_rays < 3:
        raise ValueError(f"need at least 3 rays to differentiate, got {g.n_rays}")
    v = g.values
    h = g.ds
    d = np.empty_like(v)
    d[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2 * h)
    d[:, 0] = (-3 * v[:, 0] + 4 * v[:, 1] - v[:, 2]) / (2 * h)
    d[:, -1] = (3 * v[:, -1] - 4 * v[:, -2] + v[:, -3]) / (2 * h)
    mask = None
    if g.mask is not None:
        m = g.mask
        mask = np.empty_like(m)
        mask[:, 1:-1] = m[:, 2:] & m[:, 1:-1] & m[:, :-2]
        mask[:, 0] = m[:, 0] & m[:, 1] & m[:, 2]
        mask[:, -1] = m[:, -1] & m[:, -2] & m[:, -3]
        d[~mask] = 0.0
    return DerivativeSinogram(values=d, s_max=g.s_max, mu0=g.mu0, mask=mask)


def add_poisson_noise(g: Sinogram, total_counts: float, seed: int, *, return_clamped: bool = False):
    """Count-scaled Poisson noise.

    With ``alpha = total_counts / sum(values)`` each bin becomes
    ``Poisson(alpha * value) / alpha``. The ``phi = 0`` endpoint row is the
    same measurement as view 0 and receives the same realization; the
    ``phi = pi`` row is drawn from the same stream afterwards.
    """
    if not total_counts > 0:
        raise ValueError(f"total_counts must be positive, got {total_counts}")
    measured = g.measured()
    vals = np.where(measured, g.values, 0.0)
    neg = vals < 0
    n_clamped = int(neg.sum())
    if n_clamped:
        warnings.warn(f"clamped {n_clamped} negative sinogram bins to zero", stacklevel=2)
        vals = np.where(neg, 0.0, vals)
    total = vals.sum()
    if total <= 0:
        raise ValueError("cannot add count noise to an all-zero sinogram")
    alpha = total_counts / total
    rng = np.random.default_rng(seed)
    noisy = rng.poisson(alpha * vals).astype(float) / alpha
    noisy[~measured] = 0.0
    ends = np.clip(g.endpoint_rows, 0.0, None)
    end_pi = rng.poisson(alpha * ends[1]).astype(float) / alpha
    endpoint_rows = np.vstack([noisy[0], end_pi])
    out = replace(g, values=noisy, endpoint_rows=endpoint_rows,
                  mask=None if g.mask is None else g.mask.copy(),
                  endpoint_mask=None if g.endpoint_mask is None else g.endpoint_mask.copy())
    return (out, n_clamped) if return_clamped else out


def _box_mask(phi: np.ndarray, s: np.ndarray, box) -> np.ndarray:
    x0, y0, x1, y1 = box
    corners = np.array([[x0, y0], [x0, y1], [x1, y0], [x1, y1]], dtype=float)
    theta = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    proj = theta @ corners.T
    lo = proj.min(axis=1)[:, None]
    hi = proj.max(axis=1)[:, None]
    return (s[None, :] >= lo) & (s[None, :] <= hi)


def apply_truncation(g: Sinogram, box) -> Sinogram:
    """Keep only the lines that meet the closed axis-aligned ``box``.

    ``box = (x0, y0, x1, y1)``. Discarded bins are zeroed and masked out.
    """
    x0, y0, x1, y1 = map(float, box)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate truncation box {box}")
    box = (x0, y0, x1, y1)
    mask = _box_mask(g.phi_grid, g.s_grid, box) & g.measured()
    end_mask = _box_mask(np.array([0.0, np.pi]), g.s_grid, box) & g.measured_endpoints()
    return replace(g, values=np.where(mask, g.values, 0.0),
                   endpoint_rows=np.where(end_mask, g.endpoint_rows, 0.0),
                   mask=mask, endpoint_mask=end_mask)


# ----------------------------------------------------------------------------
# file format: one JSON header line, then little-endian float64 payload
# ----------------------------------------------------------------------------

_MAGIC = "spect-cht-sinogram"


def write_sinogram(path, g: Sinogram) -> None:
    header = {
        "format": _MAGIC,
        "version": 1,
        "n_views": g.n_views,
        "n_rays": g.n_rays,
        "s_max": g.s_max,
        "mu0": g.mu0,
        "has_mask": g.has_mask,
        "payload": ["values", "endpoint_rows"] + (["mask", "endpoint_mask"] if g.has_mask else []),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(g.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(g.endpoint_rows, dtype="<f8").tobytes())
        if g.has_mask:
            fh.write(g.mask.astype(np.uint8).tobytes())
            fh.write(g.measured_endpoints().astype(np.uint8).tobytes())


def read_sinogram(path) -> Sinogram:
    with open(path, "rb") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ValueError(f"{path}: not a sinogram file (bad header)") from exc
        if not isinstance(header, dict) or header.get("format") != _MAGIC:
            raise ValueError(f"{path}: not a sinogram file")
        nv, nr = int(header["n_views"]), int(header["n_rays"])
        payload = fh.read()
    n_val = nv * nr * 8
    n_end = 2 * nr * 8
    expected = n_val + n_end + ((nv * nr + 2 * nr) if header["has_mask"] else 0)
    if len(payload) != expected:
        raise ValueError(f"{path}: payload size {len(payload)} != expected {expected}")
    values = np.frombuffer(payload, dtype="<f8", count=nv * nr).reshape(nv, nr).astype(float)
    ends = np.frombuffer(payload, dtype="<f8", count=2 * nr, offset=n_val).reshape(2, nr).astype(float)
    mask = end_mask = None
    if header["has_mask"]:
        off = n_val + n_end
        mask = np.frombuffer(payload, dtype=np.uint8, count=nv * nr, offset=off).reshape(nv, nr).astype(bool)
        end_mask = np.frombuffer(payload, dtype=np.uint8, count=2 * nr,
                                 offset=off + nv * nr).reshape(2, nr).astype(bool)
    return Sinogram(values=values, s_max=float(header["s_max"]), mu0=float(header["mu0"]),
                    endpoint_rows=ends, mask=mask, endpoint_mask=end_mask)
