"""Patch-wise Fourier analysis of grayscale images.

Each non-overlapping P x P patch gets its own 2-D DFT with the 1/P^2 factor on
the forward transform. Amplitude and phase spectra feed the frequency branch
of the detector; residual maps between a pristine image and a forgery expose
where the spectra disagree.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import Image, to_grayscale

TWO_PI = 2.0 * np.pi


@dataclass
class PatchGrid:
    P: int
    rows: int
    cols: int
    patches: np.ndarray  # (N, P, P) floats in [0, 1], raster order

    @property
    def N(self) -> int:
        return self.patches.shape[0]


@dataclass
class PatchSpectra:
    P: int
    rows: int
    cols: int
    amplitude: np.ndarray  # (N, P, P), >= 0
    phase: np.ndarray  # (N, P, P), in (-pi, pi]

    @property
    def N(self) -> int:
        return self.amplitude.shape[0]


@dataclass
class ResidualReport:
    P: int
    rows: int
    cols: int
    amp_map: np.ndarray  # (N, P, P) |AS_real - AS_fake|
    phase_map: np.ndarray  # (N, P, P) wrapped |PS_real - PS_fake|
    mask: np.ndarray | None = None  # (N,) bool, True where tampered

    @property
    def amp_residual(self) -> np.ndarray:
        return self.amp_map.mean(axis=(1, 2))

    @property
    def phase_residual(self) -> np.ndarray:
        return self.phase_map.mean(axis=(1, 2))

    def group_means(self) -> dict[str, float]:
        """Mean per-patch residuals over tampered / untouched patches (needs a mask)."""
        if self.mask is None:
            raise ValueError("group statistics need a tamper mask")
        out = {}
        for name, sel in (("tampered", self.mask), ("untouched", ~self.mask)):
            for kind, vals in (("amp", self.amp_residual), ("phase", self.phase_residual)):
                out[f"{kind}_{name}"] = float(vals[sel].mean()) if sel.any() else float("nan")
        return out


def split_patches(gray: Image, P: int) -> PatchGrid:
    if gray.channels != 1:
        raise ValueError("split_patches expects a single-channel image")
    H, W = gray.height, gray.width
    if H % P or W % P:
        raise ValueError(f"image extents H={H}, W={W} are not divisible by patch size P={P}")
    rows, cols = H // P, W // P
    x = gray.pixels[:, :, 0].astype(np.float64) / 255.0
    patches = x.reshape(rows, P, cols, P).transpose(0, 2, 1, 3).reshape(rows * cols, P, P)
    return PatchGrid(P, rows, cols, patches)


def assemble_patches(tiles: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Inverse of the raster tiling: (N, P, P) -> (rows*P, cols*P)."""
    P = tiles.shape[-1]
    return tiles.reshape(rows, cols, P, P).transpose(0, 2, 1, 3).reshape(rows * P, cols * P)


def dft2(patch: np.ndarray) -> np.ndarray:
    """Forward 2-D DFT over the last two axes, scaled by 1/P^2.

    F(u, v) = 1/P^2 * sum_x sum_y f(x, y) exp(-2 pi j (u x + v y) / P), where x
    and u index rows.
    """
    p = np.asarray(patch, dtype=np.float64)
    return np.fft.fft2(p, axes=(-2, -1)) / (p.shape[-2] * p.shape[-1])


def idft2(F: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dft2` (conjugate transform with P^2 rescaling), real part."""
    n = F.shape[-2] * F.shape[-1]
    return np.real(np.fft.ifft2(F, axes=(-2, -1)) * n)


def amp_phase(F: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Amplitude |F| and phase atan2(I, R) in (-pi, pi].

    Components with magnitude below ``tol`` are treated as exact zeros so that
    bins that vanish analytically get phase 0 instead of round-off noise.
    """
    R = np.where(np.abs(F.real) < tol, 0.0, F.real)
    I = np.where(np.abs(F.imag) < tol, 0.0, F.imag)
    amp = np.sqrt(R * R + I * I)
    phase = np.arctan2(I, R)
    phase = np.where(phase <= -np.pi, np.pi, phase)
    return amp, phase


def patch_spectra(gray: Image, P: int) -> PatchSpectra:
    if gray.channels != 1:
        gray = to_grayscale(gray)
    grid = split_patches(gray, P)
    amp, phase = amp_phase(dft2(grid.patches))
    return PatchSpectra(P, grid.rows, grid.cols, amp, phase)


def wrapped_abs_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|a - b| measured on the circle, in [0, pi]; symmetric in its arguments."""
    r = np.abs(a - b) % TWO_PI
    return np.minimum(r, TWO_PI - r)


def residual_report(real: PatchSpectra, fake: PatchSpectra, mask: np.ndarray | None = None) -> ResidualReport:
    if real.amplitude.shape != fake.amplitude.shape or (real.rows, real.cols) != (fake.rows, fake.cols):
        raise ValueError(f"spectra shapes differ: {real.amplitude.shape} vs {fake.amplitude.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if mask.size != real.N:
            raise ValueError(f"mask has {mask.size} entries for {real.N} patches")
    return ResidualReport(real.P, real.rows, real.cols,
                          np.abs(real.amplitude - fake.amplitude),
                          wrapped_abs_diff(real.phase, fake.phase), mask)


def region_patch_mask(height: int, width: int, P: int, region) -> np.ndarray:
    """Raster-order boolean mask of patches overlapping ``region`` = (x, y, w, h)."""
    x, y, w, h = region
    rows, cols = height // P, width // P
    r = np.arange(rows)[:, None]
    c = np.arange(cols)[None, :]
    hit = (r * P < y + h) & ((r + 1) * P > y) & (c * P < x + w) & ((c + 1) * P > x)
    return hit.reshape(-1)


def _to_u8(v: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)


def render_spectrum_map(obj, mode: str = "amplitude", component: str = "amplitude") -> Image:
    """Tile per-patch spectra into a grayscale image the size of the source.

    ``mode`` is ``amplitude`` (log(1+AS), DC centred, min-max scaled), ``phase``
    (linear map of (-pi, pi]) or ``residual`` (``obj`` is a ResidualReport;
    ``component`` picks amplitude or phase; values inverted so that brighter
    means smaller residual).
    """
    if mode == "residual":
        if not isinstance(obj, ResidualReport):
            raise TypeError("residual mode needs a ResidualReport")
        res = obj.amp_map if component == "amplitude" else obj.phase_map
        res = np.fft.fftshift(res, axes=(-2, -1))
        top = res.max()
        scaled = res / top * 255.0 if top > 0 else np.zeros_like(res)
        tiles = 255.0 - scaled
    elif mode == "amplitude":
        v = np.fft.fftshift(np.log1p(obj.amplitude), axes=(-2, -1))
        lo, hi = v.min(), v.max()
        tiles = (v - lo) / (hi - lo) * 255.0 if hi > lo else np.zeros_like(v)
    elif mode == "phase":
        tiles = (obj.phase + np.pi) / TWO_PI * 255.0
    else:
        raise ValueError(f"unknown render mode {mode!r}")
    return Image(_to_u8(assemble_patches(tiles, obj.rows, obj.cols)))


def write_residual_csv(report: ResidualReport, path) -> None:
    amp, ph = report.amp_residual, report.phase_residual
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patch_index", "row", "col", "amp_residual", "phase_residual", "tampered"])
        for i in range(amp.size):
            flag = "-" if report.mask is None else str(int(report.mask[i]))
            w.writerow([i, i // report.cols, i % report.cols, f"{amp[i]:.9g}", f"{ph[i]:.9g}", flag])
