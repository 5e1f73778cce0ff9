"""Ellipse phantoms, rasterization and the analytic exponential Radon transform.

Conventions: the projection line for ``(s, phi)`` is ``{s theta + t theta_perp}``
with ``theta = (cos phi, sin phi)`` and ``theta_perp = (-sin phi, cos phi)``,
and ``g(s, phi) = int p(s theta + t theta_perp) exp(mu0 t) dt``.

An ellipse's first semi-axis points along ``(cos a, sin a)`` where ``a`` is the
polar angle (degrees, counter-clockwise from the x1 axis); the second semi-axis
is perpendicular to it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .sinogram import Sinogram, ray_grid, view_grid

__all__ = [
    "Ellipse",
    "ImageGrid",
    "Phantom",
    "default_phantom",
    "ert_line",
    "ert_line_ds",
    "evaluate",
    "load_phantom",
    "project",
    "rasterize",
    "read_image",
    "write_image",
]

# (center, first semi-axis, second semi-axis, polar angle in degrees, intensity)
_TABLE = [
    ((0.0, 0.0), 0.69, 0.92, 0.0, 0.5),
    ((0.0, -0.0184), 0.6624, 0.874, 0.0, -0.2),
    ((0.22, 0.0), 0.31, 0.11, 72.0, -0.2),
    ((-0.22, 0.0), 0.41, 0.16, 108.0, -0.2),
    ((0.0, 0.35), 0.21, 0.25, 0.0, 0.1),
    ((0.0, 0.1), 0.046, 0.046, 0.0, 0.1),
    ((0.0, -0.1), 0.046, 0.046, 0.0, 0.1),
    ((-0.08, -0.605), 0.046, 0.023, 0.0, 0.1),
    ((0.0, -0.605), 0.023, 0.023, 0.0, 0.1),
    ((0.06, -0.605), 0.203, 0.046, 0.0, 0.1),
]


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]
    semi_axis_1: float
    semi_axis_2: float
    polar_angle: float
    intensity: float

    def __post_init__(self):
        if not (self.semi_axis_1 > 0 and self.semi_axis_2 > 0):
            raise ValueError("ellipse semi-axes must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.deg2rad(self.polar_angle)
        return np.array([np.cos(a), np.sin(a)]), np.array([-np.sin(a), np.cos(a)])

    def contains(self, x1, x2) -> np.ndarray:
        e1, e2 = self.axes
        d1 = np.asarray(x1, dtype=float) - self.center[0]
        d2 = np.asarray(x2, dtype=float) - self.center[1]
        u = d1 * e1[0] + d2 * e1[1]
        v = d1 * e2[0] + d2 * e2[1]
        return (u / self.semi_axis_1) ** 2 + (v / self.semi_axis_2) ** 2 <= 1.0

    def max_radius(self) -> float:
        # farthest boundary point from the origin, by dense sampling
        psi = np.linspace(0.0, 2 * np.pi, 4096, endpoint=False)
        e1, e2 = self.axes
        pts = (np.asarray(self.center)[:, None]
               + self.semi_axis_1 * np.cos(psi) * e1[:, None]
               + self.semi_axis_2 * np.sin(psi) * e2[:, None])
        return float(np.hypot(pts[0], pts[1]).max())

    def chord(self, s, phi):
        """Entry/exit parameters ``(t_minus, t_plus, hit)`` of the line(s)."""
        s = np.asarray(s, dtype=float)
        phi = np.asarray(phi, dtype=float)
        e1, e2 = self.axes
        c, sn = np.cos(phi), np.sin(phi)
        # p(t) - center = p0 + t d with p0 = s theta - center, d = theta_perp
        p0x, p0y = s * c - self.center[0], s * sn - self.center[1]
        dx, dy = -sn, c
        a2, b2 = self.semi_axis_1 ** 2, self.semi_axis_2 ** 2
        u0, v0 = p0x * e1[0] + p0y * e1[1], p0x * e2[0] + p0y * e2[1]
        du, dv = dx * e1[0] + dy * e1[1], dx * e2[0] + dy * e2[1]
        A = du * du / a2 + dv * dv / b2
        B = u0 * du / a2 + v0 * dv / b2
        C = u0 * u0 / a2 + v0 * v0 / b2 - 1.0
        disc = B * B - A * C
        hit = disc > 0
        root = np.sqrt(np.where(hit, disc, 0.0))
        return (-B - root) / A, (-B + root) / A, hit


@dataclass(frozen=True)
class Phantom:
    ellipses: tuple[Ellipse, ...]
    support_radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "ellipses", tuple(self.ellipses))
        if self.support_radius <= 0:
            raise ValueError("support_radius must be positive")
        for k, e in enumerate(self.ellipses):
            if e.max_radius() > self.support_radius * (1 + 1e-9):
                raise ValueError(f"ellipse {k} extends outside the support disc")


def default_phantom() -> Phantom:
    """The ten-ellipse SPECT Shepp-Logan phantom inside the unit disc."""
    return Phantom(tuple(Ellipse(*row) for row in _TABLE), support_radius=1.0)


def load_phantom(path) -> Phantom:
    """Read a phantom description.

    One ellipse per line: ``cx cy axis1 axis2 angle_deg intensity``. An
    optional ``support_radius R`` line sets the disc radius; ``#`` starts a
    comment.
    """
    ellipses = []
    radius = 1.0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.replace(",", " ").split()
            if parts[0] == "support_radius":
                radius = float(parts[1])
                continue
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            cx, cy, a1, a2, ang, rho = map(float, parts)
            ellipses.append(Ellipse((cx, cy), a1, a2, ang, rho))
    return Phantom(tuple(ellipses), support_radius=radius)


def evaluate(phantom: Phantom, x1, x2=None):
    """Activity ``p(x)``: summed intensities of the ellipses containing ``x``.

    Accepts ``evaluate(ph, (x1, x2))`` or ``evaluate(ph, x1, x2)`` with
    broadcastable arrays. Boundary points count as inside.
    """
    if x2 is None:
        x1, x2 = x1
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    out = np.zeros(np.broadcast(x1, x2).shape)
    for e in phantom.ellipses:
        out += np.where(e.contains(x1, x2), e.intensity, 0.0)
    out[np.hypot(x1, x2) > phantom.support_radius] = 0.0
    return float(out) if out.ndim == 0 else out


@dataclass
class ImageGrid:
    """Square field of view ``[-extent, extent]^2`` sampled at pixel centers.

    ``values[i, j]`` is the pixel at ``(x1[i], x2[j])``.
    """

    values: np.ndarray
    extent: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("image values must be 2-D")
        if self.extent <= 0:
            raise ValueError("extent must be positive")

    @property
    def n1(self) -> int:
        return self.values.shape[0]

    @property
    def n2(self) -> int:
        return self.values.shape[1]

    @staticmethod
    def centers(n: int, extent: float) -> np.ndarray:
        return -extent + (np.arange(n) + 0.5) * (2.0 * extent / n)

    @property
    def x1(self) -> np.ndarray:
        return self.centers(self.n1, self.extent)

    @property
    def x2(self) -> np.ndarray:
        return self.centers(self.n2, self.extent)

    def same_geometry(self, other: "ImageGrid") -> bool:
        return self.values.shape == other.values.shape and self.extent == other.extent


def rasterize(phantom: Phantom, n: int, extent: float = 1.0) -> ImageGrid:
    if n < 1 or extent <= 0:
        raise ValueError("rasterize needs n >= 1 and extent > 0")
    x = ImageGrid.centers(n, extent)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    return ImageGrid(evaluate(phantom, X1, X2), extent)


def _exp_chord(mu0: float, t_lo, t_hi):
    # int_{t_lo}^{t_hi} exp(mu0 t) dt = chord * exp(mu0 mid) * sinh(z)/z, z = mu0 chord / 2
    chord = t_hi - t_lo
    mid = 0.5 * (t_hi + t_lo)
    z = 0.5 * mu0 * chord
    small = np.abs(2 * z) < 1e-6
    zs = np.where(small, 1.0, z)
    shc = np.where(small, 1.0 + z * z / 6.0, np.sinh(zs) / zs)
    return chord * np.exp(mu0 * mid) * shc


def ert_line(phantom: Phantom, mu0: float, s, phi):
    """Exponential Radon transform ``g(s, phi)`` in closed form.

    ``s`` and ``phi`` broadcast against each other.
    """
    s, phi = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(phi, dtype=float))
    out = np.zeros(s.shape)
    for e in phantom.ellipses:
        t_lo, t_hi, hit = e.chord(s, phi)
        out += np.where(hit, e.intensity * _exp_chord(mu0, t_lo, t_hi), 0.0)
    return float(out) if out.ndim == 0 else out


def ert_line_ds(phantom: Phantom, mu0: float, s, phi):
    """Analytic ``dg/ds``; used only to validate numerical differentiation."""
    s, phi = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(phi, dtype=float))
    out = np.zeros(s.shape)
    for e in phantom.ellipses:
        t_lo, t_hi, hit = e.chord(s, phi)
        e1, e2 = e.axes
        c, sn = np.cos(phi), np.sin(phi)
        a2, b2 = e.semi_axis_1 ** 2, e.semi_axis_2 ** 2
        p0x, p0y = s * c - e.center[0], s * sn - e.center[1]
        u0, v0 = p0x * e1[0] + p0y * e1[1], p0x * e2[0] + p0y * e2[1]
        du, dv = -sn * e1[0] + c * e1[1], -sn * e2[0] + c * e2[1]
        # ds of (u0, v0) along theta
        su, sv = c * e1[0] + sn * e1[1], c * e2[0] + sn * e2[1]
        A = du * du / a2 + dv * dv / b2
        for t, sign in ((t_hi, 1.0), (t_lo, -1.0)):
            # implicit derivative of the quadratic root: dt/ds = -dF/ds / dF/dt
            dF_ds = 2 * ((u0 + t * du) * su / a2 + (v0 + t * dv) * sv / b2)
            dF_dt = 2 * (A * t + (u0 * du / a2 + v0 * dv / b2))
            safe = np.where(hit & (np.abs(dF_dt) > 0), dF_dt, 1.0)
            dt = -dF_ds / safe
            out += np.where(hit, sign * e.intensity * np.exp(mu0 * t) * dt, 0.0)
    return float(out) if out.ndim == 0 else out


def project(phantom: Phantom, mu0: float, n_views: int, n_rays: int, s_max: float = 1.0) -> Sinogram:
    """Parallel-beam sampling of the exponential Radon transform.

    Views ``phi_k = k pi / n_views``, rays at detector bin centers on
    ``[-s_max, s_max]``, plus explicit ``phi = 0`` and ``phi = pi`` rows.
    """
    if n_views < 2 or n_rays < 2:
        raise ValueError("need at least 2 views and 2 rays")
    if s_max <= 0:
        raise ValueError(f"s_max must be positive, got {s_max}")
    phi = view_grid(n_views)
    s = ray_grid(n_rays, s_max)
    values = ert_line(phantom, mu0, s[None, :], phi[:, None])
    ends = ert_line(phantom, mu0, s[None, :], np.array([0.0, np.pi])[:, None])
    return Sinogram(values=values, s_max=float(s_max), mu0=float(mu0), endpoint_rows=ends)


# ----------------------------------------------------------------------------
# raw image format (same convention as sinograms)
# ----------------------------------------------------------------------------

_MAGIC = "spect-cht-image"


def write_image(path, image: ImageGrid, extra: dict | None = None, mask: np.ndarray | None = None) -> None:
    header = {"format": _MAGIC, "version": 1, "n1": image.n1, "n2": image.n2,
              "extent": image.extent, "has_mask": mask is not None}
    if extra:
        header.update(extra)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(image.values, dtype="<f8").tobytes())
        if mask is not None:
            fh.write(np.asarray(mask, dtype=np.uint8).tobytes())


def read_image(path, *, with_header: bool = False):
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ValueError(f"{path}: not an image file (bad header)") from exc
        if not isinstance(header, dict) or header.get("format") != _MAGIC:
            raise ValueError(f"{path}: not an image file")
        payload = fh.read()
    n1, n2 = int(header["n1"]), int(header["n2"])
    expected = n1 * n2 * 8 + (n1 * n2 if header.get("has_mask") else 0)
    if len(payload) != expected:
        raise ValueError(f"{path}: payload size {len(payload)} != expected {expected}")
    values = np.frombuffer(payload, dtype="<f8", count=n1 * n2).reshape(n1, n2).astype(float)
    image = ImageGrid(values, float(header["extent"]))
    if not with_header:
        return image
    mask = None
    if header.get("has_mask"):
        mask = np.frombuffer(payload, dtype=np.uint8, offset=n1 * n2 * 8).reshape(n1, n2).astype(bool)
    return image, header, mask
