"""Full detector: spatial and frequency branches, fusion, projection and classifier heads."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .backbone import BackboneConfig, backbone_forward, init_backbone
from .imageio import Image, to_grayscale
from .mixer import freq_feature, init_mixer
from .papda import embed_spectra, init_papda, papda_forward
from .spectral import patch_spectra
from .ssrb import ssrb_forward
from .tensor import Tensor


AMP_FLOOR = 1e-4
PIXEL_MEAN, PIXEL_STD = 0.5, 0.25


@dataclass
class ModelConfig:
    image_size: int = 64
    patch: int = 8
    embed_dim: int | None = None  # defaults to patch**2
    heads: int = 4
    mixer_layers: int = 2
    backbone_scale: int = 4
    backbone_pool: bool = True  # off gives a kink-free backbone for finite differences
    fusion_dim: int = 1024
    proj_dim: int = 128
    dropout: float = 0.5
    tau: float = 0.1
    alpha: float = 0.5
    use_ssrb: bool = True
    use_papda: bool = True
    use_scloss: bool = True
    attention_scale: str = "sqrt_d"
    supcon_denominator: str = "negatives"
    supcon_reduction: str = "mean"
    ce_through_logits: bool = True  # CE gradient taken w.r.t. the logit, alive past the clip
    ssrb_taps: tuple[int, ...] = (1, 2, 3)
    segment_norm: bool = True
    log_amplitude: bool = True

    def __post_init__(self):
        if self.embed_dim is None:
            self.embed_dim = self.patch * self.patch
        self.ssrb_taps = tuple(int(t) for t in self.ssrb_taps)
        if self.image_size % self.patch:
            raise ValueError(f"image size {self.image_size} is not divisible by patch {self.patch}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embedding dim {self.embed_dim} is not divisible by {self.heads} heads")
        for name in ("image_size", "patch", "embed_dim", "heads", "mixer_layers", "backbone_scale",
                     "fusion_dim", "proj_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.dropout}")
        for name, allowed in (("attention_scale", ("sqrt_d", "sqrt_D")),
                              ("supcon_denominator", ("negatives", "all")),
                              ("supcon_reduction", ("sum", "mean"))):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        n_blocks = len(self.backbone.channels)
        if (not self.ssrb_taps or len(set(self.ssrb_taps)) != len(self.ssrb_taps)
                or any(not 1 <= t < n_blocks for t in self.ssrb_taps)):
            raise ValueError(f"ssrb taps must be distinct blocks in 1..{n_blocks - 1}, got {self.ssrb_taps}")

    @classmethod
    def paper(cls, **kw) -> "ModelConfig":
        """Dimensions of the full-resolution architecture (256 x 256 input, 16 x 16 patches)."""
        return cls(image_size=256, patch=16, backbone_scale=1, **kw)

    @property
    def backbone(self) -> BackboneConfig:
        n = len(BackboneConfig.scaled(self.backbone_scale).channels)
        return BackboneConfig.scaled(self.backbone_scale, pool=(self.backbone_pool,) * n)

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch) ** 2

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.use_scloss else 0.0

    def segment_sizes(self) -> dict[str, int]:
        ch = self.backbone.channels
        sizes = {f"ssf_b{t}": ch[t - 1] for t in self.ssrb_taps}
        sizes.update(gf=ch[-1], af=self.embed_dim, pf=self.embed_dim)
        return sizes

    @property
    def fusion_in(self) -> int:
        return sum(self.segment_sizes().values())


@dataclass
class ModelState:
    params: dict[str, Tensor]
    config: ModelConfig
    epoch: int = 0
    best_val_loss: float = float("inf")
    best_val_acc: float = -1.0
    lr: float = 1e-3

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def clone(self) -> "ModelState":
        params = {k: T.Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return ModelState(params, copy.deepcopy(self.config), self.epoch, self.best_val_loss,
                          self.best_val_acc, self.lr)

    def as_float32(self) -> "ModelState":
        """Copy whose parameters are rounded to the 32-bit values a checkpoint stores."""
        out = self.clone()
        for p in out.params.values():
            p.data = p.data.astype(np.float32).astype(np.float64)
        return out

    def n_params(self) -> int:
        return int(sum(v.data.size for v in self.params.values()))


def init_model(config: ModelConfig, seed: int = 0) -> ModelState:
    rng = np.random.default_rng(seed)
    arrays = init_backbone(config.backbone, rng)
    P, D, N = config.patch, config.embed_dim, config.n_patches
    arrays.update(init_papda(rng, P, D, N))
    for s in ("amp", "phase"):
        arrays.update(init_mixer(rng, N, D, f"mixer.{s}", config.mixer_layers))
    F, E, p = config.fusion_in, config.fusion_dim, config.proj_dim
    for name, size in config.segment_sizes().items():
        arrays[f"fusion.ln.{name}.g"] = np.ones(size)
        arrays[f"fusion.ln.{name}.b"] = np.zeros(size)
    arrays["fusion.w"] = rng.normal(0.0, np.sqrt(1.0 / F), (F, E))
    arrays["fusion.b"] = np.zeros(E)
    arrays["proj.w"] = rng.normal(0.0, np.sqrt(1.0 / E), (E, p))
    arrays["proj.b"] = np.zeros(p)
    arrays["cls.w"] = rng.normal(0.0, np.sqrt(1.0 / E), (E, 1))
    arrays["cls.b"] = np.zeros(1)
    params = {k: T.Tensor(v, requires_grad=True) for k, v in arrays.items()}
    return ModelState(params, config)


class Inputs(NamedTuple):
    rgb: np.ndarray  # (B, H, W, 3) in [0, 1]
    amp: np.ndarray  # (B, N, P*P)
    phase: np.ndarray  # (B, N, P*P)

    def take(self, idx) -> "Inputs":
        return Inputs(self.rgb[idx], self.amp[idx], self.phase[idx])

    def __len__(self) -> int:
        return self.rgb.shape[0]


def prepare_inputs(images: Sequence[Image], P: int) -> Inputs:
    """Stack RGB tensors and precompute the (parameter-free) patch spectra."""
    rgb, amp, phase = [], [], []
    for img in images:
        if img.channels == 1:
            px = np.repeat(img.pixels, 3, axis=2)
        else:
            px = img.pixels
        rgb.append(px.astype(np.float64) / 255.0)
        spec = patch_spectra(to_grayscale(img), P)
        amp.append(spec.amplitude.reshape(spec.N, -1))
        phase.append(spec.phase.reshape(spec.N, -1))
    return Inputs(np.stack(rgb), np.stack(amp), np.stack(phase))


class ForwardOutput(NamedTuple):
    f_mm: Tensor
    f_e: Tensor
    z: Tensor
    logit: Tensor
    prob: Tensor


def forward_batch(inputs: Inputs, state: ModelState, training: bool = False,
                  rng: np.random.Generator | None = None) -> ForwardOutput:
    cfg, p = state.config, state.params
    B, H, W, _ = inputs.rgb.shape
    if H != cfg.image_size or W != cfg.image_size:
        raise ValueError(f"input extents {H}x{W} do not match configured image size {cfg.image_size}")
    if inputs.amp.shape[1:] != (cfg.n_patches, cfg.patch ** 2):
        raise ValueError(f"spectra of shape {inputs.amp.shape[1:]} do not match config "
                         f"({cfg.n_patches} patches of {cfg.patch}x{cfg.patch})")
    acts = backbone_forward(T.Tensor((inputs.rgb - PIXEL_MEAN) / PIXEL_STD), p, cfg.backbone)
    active: dict[str, Tensor | None] = {}
    for t in cfg.ssrb_taps:
        fmap = acts.taps[t - 1]
        # fixed 1/(H*W) keeps the unnormalised Gram rows on the scale of the other segments
        active[f"ssf_b{t}"] = ssrb_forward(fmap) / float(fmap.shape[1] * fmap.shape[2]) if cfg.use_ssrb else None
    active["gf"] = acts.gf
    active["af"] = active["pf"] = None
    if cfg.use_papda:
        amp = np.log(inputs.amp + AMP_FLOOR) if cfg.log_amplitude else inputs.amp
        e_as = embed_spectra(T.Tensor(amp), p, "embed.amp")
        e_ps = embed_spectra(T.Tensor(inputs.phase), p, "embed.phase")
        at, pt = papda_forward(e_as, e_ps, p, cfg.heads, cfg.attention_scale)
        active["af"] = freq_feature(at, p, "mixer.amp", cfg.mixer_layers)
        active["pf"] = freq_feature(pt, p, "mixer.phase", cfg.mixer_layers)
    segments = []
    for name, size in cfg.segment_sizes().items():
        seg = active[name]
        if seg is None:
            # ablated branches contribute zeros so the fusion layer keeps its shape
            seg = T.Tensor(np.zeros((B, size)))
        elif cfg.segment_norm:
            seg = T.layer_norm(seg, p[f"fusion.ln.{name}.g"], p[f"fusion.ln.{name}.b"])
        segments.append(seg)
    f_mm = T.concat(segments, axis=-1)
    f_e = T.matmul(f_mm, p["fusion.w"]) + p["fusion.b"]
    h = T.dropout(f_e, cfg.dropout, rng, training)
    z = T.l2_normalize(T.matmul(h, p["proj.w"]) + p["proj.b"])
    logit = T.reshape(T.matmul(h, p["cls.w"]) + p["cls.b"], (B,))
    return ForwardOutput(f_mm, f_e, z, logit, T.sigmoid(logit))


def forward(image: Image, state: ModelState, training: bool = False,
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray, float]:
    """Single-image inference: (F_E, z, fake probability)."""
    out = forward_batch(prepare_inputs([image], state.config.patch), state, training, rng)
    return out.f_e.data[0], out.z.data[0], float(out.prob.data[0])


def config_dict(config: ModelConfig) -> dict:
    return asdict(config)
