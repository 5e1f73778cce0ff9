"""Command-line interface: ``spect-cht <command> ...``.

Every command that writes files also writes ``<output>.manifest.json`` with
the exact argument vector, working directory, input/output checksums and
per-stage timings. ``spect-cht replay <manifest>`` re-runs a stage from it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .cht import DEFAULT_M, EDGE_EPS, read_line, solve_line
from .phantom import (ImageGrid, default_phantom, load_phantom, project, rasterize,
                      read_image, write_image)
from .recon import InteriorProblemError, ReconConfig, profile, rmse, run_reconstruction
from .sinogram import add_poisson_noise, apply_truncation, read_sinogram, write_sinogram
from .tables import CoeffCache

log = logging.getLogger("spect_cht")


class _Run:
    """Collects what goes into a run manifest."""

    def __init__(self, command: str, argv: list[str]):
        self.command = command
        self.argv = list(argv)
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.timings: dict[str, float] = {}
        self.extra: dict = {}
        self._t = time.perf_counter()

    def stage(self, name: str):
        now = time.perf_counter()
        self.timings[name] = round(now - self._t, 6)
        self._t = now

    def write(self, primary: str) -> Path:
        path = Path(str(primary) + ".manifest.json")
        doc = {
            "tool": "spect-cht",
            "version": __version__,
            "command": self.command,
            "argv": self.argv,
            "cwd": os.getcwd(),
            "inputs": {p: _sha256(p) for p in self.inputs},
            "outputs": {p: _sha256(p) for p in self.outputs},
            "timings_s": self.timings,
        }
        doc.update(self.extra)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _floats(text: str, count: int, what: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} must be {count} comma-separated numbers") from None
    if len(vals) != count:
        raise argparse.ArgumentTypeError(f"{what} must be {count} comma-separated numbers")
    return vals


def _box(text: str):
    return _floats(text, 4, "box")


def _window(text: str):
    return _floats(text, 2, "window")


def write_pgm(path, image: ImageGrid, window=None) -> tuple[float, float]:
    """16-bit binary PGM, x2 pointing up. Returns the ``(lo, hi)`` window used."""
    v = image.values
    lo, hi = (float(v.min()), float(v.max())) if window is None else map(float, window)
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip((v - lo) / span, 0.0, 1.0)
    pix = np.round(scaled * 65535).astype(">u2")
    # rows run from top (largest x2) to bottom, columns along x1
    pix = pix.T[::-1]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pix.shape[1]} {pix.shape[0]}\n65535\n".encode())
        fh.write(pix.tobytes())
    return lo, hi


def _phantom_from(args):
    return load_phantom(args.spec) if args.spec else default_phantom()


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_phantom(args, run: _Run):
    ph = _phantom_from(args)
    if args.spec:
        run.inputs.append(args.spec)
    img = rasterize(ph, args.n, args.extent)
    run.stage("rasterize")
    write_image(args.out, img)
    run.outputs.append(args.out)
    if args.png:
        run.extra["window"] = write_pgm(args.png, img, args.window)
        run.outputs.append(args.png)
    return args.out


def cmd_project(args, run: _Run):
    ph = _phantom_from(args)
    if args.spec:
        run.inputs.append(args.spec)
    g = project(ph, args.mu0, args.views, args.rays, args.smax)
    run.stage("project")
    write_sinogram(args.out, g)
    run.outputs.append(args.out)
    return args.out


def cmd_noise(args, run: _Run):
    g = read_sinogram(args.input)
    run.inputs.append(args.input)
    noisy, clamped = add_poisson_noise(g, args.counts, args.seed, return_clamped=True)
    run.stage("noise")
    write_sinogram(args.output, noisy)
    run.outputs.append(args.output)
    run.extra.update(seed=args.seed, total_counts=args.counts, clamped_bins=clamped)
    return args.output


def cmd_truncate(args, run: _Run):
    g = read_sinogram(args.input)
    run.inputs.append(args.input)
    out = apply_truncation(g, args.box)
    run.stage("truncate")
    write_sinogram(args.output, out)
    run.outputs.append(args.output)
    run.extra["box"] = list(args.box)
    return args.output


def _recon_config(args, g) -> ReconConfig:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
    overrides = {
        "mu0": args.mu0, "M": args.m_order, "n": args.grid, "extent": args.extent,
        "truncation": args.box, "n_nodes": args.nodes, "threads": args.threads,
        "support_radius": args.support_radius,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    base.setdefault("mu0", g.mu0)
    base.update(n_views=g.n_views, n_rays=g.n_rays, s_max=g.s_max)
    # noise is applied by the `noise` command, never twice
    base["noise"] = None
    return ReconConfig.from_dict(base)


def cmd_reconstruct(args, run: _Run):
    g = read_sinogram(args.sinogram)
    run.inputs.append(args.sinogram)
    if args.config:
        run.inputs.append(args.config)
    cfg = _recon_config(args, g)
    run.stage("load")
    if cfg.truncation is not None and not g.has_mask:
        g = apply_truncation(g, cfg.truncation)
    img, info = run_reconstruction(cfg, g)
    run.stage("reconstruct")
    write_image(args.out, img, extra={"mu0": cfg.mu0, "M": cfg.M})
    run.outputs.append(args.out)
    run.extra.update(config=cfg.to_dict(), reconstruction=info)
    if args.png:
        run.extra["window"] = list(write_pgm(args.png, img, args.window))
        run.outputs.append(args.png)
    run.stage("write")
    return args.out


def cmd_invert_line(args, run: _Run):
    line = read_line(args.line)
    run.inputs.append(args.line)
    M = args.m_order
    sol = solve_line(line, M, CoeffCache.for_order(M), args.edge)
    run.stage("invert")
    with open(args.out, "w") as fh:
        fh.write("t,f\n")
        for t, f in zip(line.nodes, sol.f_nodes):
            fh.write(f"{float(t)!r},{float(f)!r}\n")
    run.outputs.append(args.out)
    run.extra.update(mu1=line.mu1, M=M, moments=sol.moments.full().tolist(),
                     cond=[sol.moments.cond_even, sol.moments.cond_odd])
    return args.out


def cmd_profile(args, run: _Run):
    img = read_image(args.image)
    run.inputs.append(args.image)
    prof = profile(img, args.x1)
    with open(args.out, "w") as fh:
        fh.write("x2,value\n")
        for x2, v in prof:
            fh.write(f"{float(x2)!r},{float(v)!r}\n")
    run.outputs.append(args.out)
    return args.out


def cmd_metrics(args, run: _Run):
    img = read_image(args.image)
    ref = read_image(args.ref)
    run.inputs += [args.image, args.ref]
    value = rmse(img, ref, args.box, args.support_radius or 1.0)
    doc = {"rmse": value, "region": list(args.box) if args.box else "support-disc"}
    text = json.dumps(doc, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
        run.outputs.append(args.out)
        return args.out
    return None


def cmd_replay(args, run: _Run):
    doc = json.loads(Path(args.manifest).read_text())
    with _chdir(doc["cwd"]):
        status = main(doc["argv"])
    if status:
        raise RuntimeError(f"replayed command exited with status {status}")
    return None


@contextmanager
def _chdir(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spect-cht", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def png_opts(sp):
        sp.add_argument("--png", help="also write a 16-bit PGM rendering")
        sp.add_argument("--window", type=_window, help="display window lo,hi (default min,max)")

    sp = sub.add_parser("phantom", help="rasterize the phantom")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=400)
    sp.add_argument("--extent", type=float, default=1.0)
    sp.add_argument("--spec", help="phantom description file (default: built-in)")
    png_opts(sp)
    sp.set_defaults(func=cmd_phantom)

    sp = sub.add_parser("project", help="simulate exponential Radon data")
    sp.add_argument("--mu0", type=float, required=True)
    sp.add_argument("--views", type=int, default=1000)
    sp.add_argument("--rays", type=int, default=400)
    sp.add_argument("--smax", type=float, default=1.0)
    sp.add_argument("--spec")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_project)

    sp = sub.add_parser("noise", help="add count-scaled Poisson noise")
    sp.add_argument("--counts", type=float, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("input")
    sp.add_argument("output")
    sp.set_defaults(func=cmd_noise)

    sp = sub.add_parser("truncate", help="discard lines missing a box")
    sp.add_argument("--box", type=_box, required=True, help="x0,y0,x1,y1")
    sp.add_argument("input")
    sp.add_argument("output")
    sp.set_defaults(func=cmd_truncate)

    sp = sub.add_parser("reconstruct", help="reconstruct an image from a sinogram")
    sp.add_argument("sinogram")
    sp.add_argument("--out", required=True)
    sp.add_argument("--mu0", type=float, help="default: value stored in the sinogram")
    sp.add_argument("--m-order", type=int)
    sp.add_argument("--grid", type=int)
    sp.add_argument("--extent", type=float)
    sp.add_argument("--nodes", type=int, help="Chebyshev nodes per line (default: grid size)")
    sp.add_argument("--box", type=_box, help="ROI box x0,y0,x1,y1 for truncated data")
    sp.add_argument("--support-radius", type=float)
    sp.add_argument("--config", help="JSON file with ReconConfig fields")
    sp.add_argument("--threads", type=int)
    png_opts(sp)
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("invert-line", help="invert a single standard-form line")
    sp.add_argument("line")
    sp.add_argument("--m-order", type=int, default=DEFAULT_M)
    sp.add_argument("--edge", type=float, default=EDGE_EPS)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_invert_line)

    sp = sub.add_parser("profile", help="export an image column as CSV")
    sp.add_argument("image")
    sp.add_argument("--x1", type=float, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_profile)

    sp = sub.add_parser("metrics", help="RMSE against a reference image")
    sp.add_argument("image")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--box", type=_box)
    sp.add_argument("--support-radius", type=float)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("replay", help="re-run a stage from its manifest")
    sp.add_argument("manifest")
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = _Run(args.command, argv)
    try:
        primary = args.func(args, run)
    except (ValueError, OSError, KeyError, InteriorProblemError, np.linalg.LinAlgError,
            RuntimeError) as exc:
        print(f"spect-cht {args.command}: error: {exc}", file=sys.stderr)
        return 1
    if primary is not None:
        run.write(primary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
