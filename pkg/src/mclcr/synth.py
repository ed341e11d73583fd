"""Synthetic pristine / forged face surrogates and line-oriented dataset manifests.

Pristine images are smooth seeded Gaussian random fields with a fine luminance
grain on top. Forgeries tamper a rectangle of such an image in one of two
ways:

* ``upsample-artifact``: the region is mean-pooled by 2, re-upsampled by zero
  insertion and a fixed 3 x 3 kernel, then blended back. The kernel overlaps
  unevenly, so the upsampled region carries a period-2 modulation whose
  spectral replicas show up in the patch spectra.
* ``texture-swap``: the region's high-frequency residual (pixel minus blurred
  pixel) is replaced by independent per-channel noise of matched variance,
  which breaks the cross-channel correlation of the grain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import Image, read_pnm, write_pnm

KINDS = ("upsample-artifact", "texture-swap")
FIELD_RADIUS = 4
GRAIN_SIGMA = 3.0
RESIDUAL_SIGMA = 2.0
# outer taps of the 1-D upsampling kernel [a, 1, a]; a = 0.5 is plain bilinear
CHECKER_TAP = 0.6
# keeps per-split rng streams apart when splits share a seed
SPLIT_SALT = {"train": 11, "val": 23, "test": 37}


@dataclass(frozen=True)
class TamperSpec:
    kind: str
    region: tuple[int, int, int, int]  # x, y, w, h in pixels
    strength: float

    def validate(self, height: int, width: int, P: int = 8) -> None:
        x, y, w, h = self.region
        if self.kind not in KINDS:
            raise ValueError(f"unknown tamper kind {self.kind!r}")
        if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > width or y + h > height:
            raise ValueError(f"tamper region {self.region} is outside the {width}x{height} image")
        if w * h < P * P:
            raise ValueError(f"tamper region {self.region} is smaller than one {P}x{P} patch")
        if not 0.0 < self.strength <= 1.0:
            raise ValueError(f"tamper strength {self.strength} not in (0, 1]")


def _blur(a: np.ndarray, sigma: float, radius: int, mode: str) -> np.ndarray:
    return gaussian_filter(a, sigma=(sigma, sigma, 0), mode=mode, truncate=radius / sigma)


def gen_real(height: int, width: int, seed: int, P: int = 8) -> Image:
    """Seeded smooth RGB surrogate: low-passed random field plus fine grain."""
    if height % P or width % P:
        raise ValueError(f"extents {height}x{width} are not divisible by patch size {P}")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((height, width, 2))
    smooth = _blur(raw, FIELD_RADIUS / 2, FIELD_RADIUS, "wrap")
    smooth /= smooth.std(axis=(0, 1), keepdims=True)
    luma, chroma = smooth[..., 0], smooth[..., 1]
    tint = rng.uniform(-12.0, 12.0, size=3)
    offset = np.array([150.0, 120.0, 105.0]) + rng.uniform(-15.0, 15.0, size=3)
    rgb = offset + 38.0 * luma[..., None] + tint * chroma[..., None]
    grain = GRAIN_SIGMA * rng.standard_normal((height, width, 1))
    return Image(np.clip(np.floor(rgb + grain + 0.5), 0, 255).astype(np.uint8))


def _upsample_axis(d: np.ndarray, axis: int) -> np.ndarray:
    # zero insertion along ``axis`` followed by the kernel [a, 1, a] (edge-replicated)
    d = np.moveaxis(d, axis, 0)
    nxt = np.concatenate([d[1:], d[-1:]], axis=0)
    up = np.empty((2 * d.shape[0],) + d.shape[1:])
    up[0::2] = d
    up[1::2] = CHECKER_TAP * (d + nxt)
    return np.moveaxis(up, 0, axis)


def upsample_artifact(block: np.ndarray) -> np.ndarray:
    """Mean-pool by 2 and re-upsample an (h, w, C) block with uneven kernel overlap."""
    h, w, c = block.shape
    pooled = block.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))
    up = _upsample_axis(_upsample_axis(pooled, 0), 1)
    # keep the block mean: the uneven overlap has average gain ((1 + 2a) / 2)^2
    return up / ((1.0 + 2.0 * CHECKER_TAP) / 2.0) ** 2


def apply_tamper(image: Image, spec: TamperSpec, seed: int, P: int = 8) -> Image:
    spec.validate(image.height, image.width, P)
    x, y, w, h = spec.region
    px = image.pixels.astype(np.float64)
    out = px.copy()
    sl = (slice(y, y + h), slice(x, x + w))
    s = spec.strength
    if spec.kind == "upsample-artifact":
        if w % 2 or h % 2:
            raise ValueError(f"upsample-artifact region needs even sides, got {w}x{h}")
        out[sl] = (1.0 - s) * px[sl] + s * upsample_artifact(px[sl])
    else:
        rng = np.random.default_rng(seed)
        blurred = _blur(px, RESIDUAL_SIGMA, 2, "reflect")[sl]
        resid = px[sl] - blurred
        noise = rng.standard_normal(resid.shape)
        noise -= _blur(noise, RESIDUAL_SIGMA, 2, "reflect")
        noise *= resid.std(axis=(0, 1), keepdims=True) / noise.std(axis=(0, 1), keepdims=True)
        out[sl] = blurred + (1.0 - s) * resid + s * noise
    return Image(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


# -- manifests -------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    tamper: TamperSpec | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int
    split: str
    root: Path = field(default=Path("."))

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths are not unique")
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"unknown split {self.split!r}")

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=np.int64)

    def load(self, index: int) -> Image:
        return read_pnm(self.root / self.entries[index].path)

    def __len__(self) -> int:
        return len(self.entries)


def format_manifest(m: DatasetManifest) -> str:
    lines = ["# mclcr manifest v1", f"# split={m.split}", f"# seed={m.seed}"]
    for e in m.entries:
        if e.tamper is None:
            kind = region = strength = "-"
        else:
            kind = e.tamper.kind
            region = ",".join(str(v) for v in e.tamper.region)
            strength = f"{e.tamper.strength:.4f}"
        lines.append(f"{e.path}\t{e.label}\t{kind}\t{region}\t{strength}")
    return "\n".join(lines) + "\n"


def write_manifest(m: DatasetManifest, path) -> None:
    Path(path).write_text(format_manifest(m), encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    meta, entries = {}, []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            if "=" in line:
                k, v = line[1:].strip().split("=", 1)
                meta[k] = v
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}")
        rel, label, kind, region, strength = parts
        tamper = None
        if kind != "-":
            tamper = TamperSpec(kind, tuple(int(v) for v in region.split(",")), float(strength))
        entries.append(ManifestEntry(rel, int(label), tamper))
    return DatasetManifest(entries, int(meta.get("seed", 0)), meta.get("split", "train"), path.parent)


def manifest_path(root, split: str) -> Path:
    return Path(root) / f"manifest_{split}.tsv"


@dataclass
class GenConfig:
    n_real: int = 64
    n_fake: int = 64
    size: int = 64
    tamper_mix: float = 0.5  # fraction of fakes that are upsample-artifact
    seed: int = 0
    split: str = "train"
    patch: int = 8
    strength: tuple[float, float] = (0.6, 1.0)
    region_patches: tuple[int, int] = (3, 6)  # side length range, in patches
    write_sources: bool = False  # also keep each fake's pristine source under <split>_source/


def sample_tamper(rng: np.random.Generator, kind: str, cfg: GenConfig) -> TamperSpec:
    P, cells = cfg.patch, cfg.size // cfg.patch
    hi = min(cfg.region_patches[1], cells)
    lo = min(cfg.region_patches[0], hi)
    pw, ph = (int(v) for v in rng.integers(lo, hi + 1, size=2))
    px, py = int(rng.integers(0, cells - pw + 1)), int(rng.integers(0, cells - ph + 1))
    strength = round(float(rng.uniform(*cfg.strength)), 4)
    return TamperSpec(kind, (px * P, py * P, pw * P, ph * P), max(strength, 1e-4))


def gen_dataset(out_dir, cfg: GenConfig) -> DatasetManifest:
    """Write ``cfg.n_real + cfg.n_fake`` PNMs under ``out_dir/<split>/`` plus a manifest."""
    if cfg.n_real <= 0 or cfg.n_fake <= 0:
        raise ValueError("gen_dataset needs positive real and fake counts")
    if abs(cfg.n_real - cfg.n_fake) > 1:
        raise ValueError(f"unbalanced split: {cfg.n_real} real vs {cfg.n_fake} fake")
    if not 0.0 <= cfg.tamper_mix <= 1.0:
        raise ValueError(f"tamper mix {cfg.tamper_mix} not in [0, 1]")
    out = Path(out_dir)
    try:
        (out / cfg.split).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out / cfg.split}: {exc}") from exc

    rng = np.random.default_rng([cfg.seed, SPLIT_SALT[cfg.split]])
    n_up = int(round(cfg.n_fake * cfg.tamper_mix))
    kinds = rng.permutation([KINDS[0]] * n_up + [KINDS[1]] * (cfg.n_fake - n_up))
    labels = rng.permutation([0] * cfg.n_real + [1] * cfg.n_fake)
    entries, k = [], 0
    for i, label in enumerate(labels):
        img_seed, tamper_seed = (int(v) for v in rng.integers(0, 2**31, size=2))
        img = gen_real(cfg.size, cfg.size, img_seed, cfg.patch)
        spec = None
        if label == 1:
            spec = sample_tamper(rng, str(kinds[k]), cfg)
            k += 1
            if cfg.write_sources:
                (out / f"{cfg.split}_source").mkdir(exist_ok=True)
                write_pnm(img, out / f"{cfg.split}_source/{i:05d}.pnm")
            img = apply_tamper(img, spec, tamper_seed, cfg.patch)
        rel = f"{cfg.split}/{i:05d}.pnm"
        write_pnm(img, out / rel)
        entries.append(ManifestEntry(rel, int(label), spec))
    m = DatasetManifest(entries, cfg.seed, cfg.split, out)
    write_manifest(m, manifest_path(out, cfg.split))
    return m

