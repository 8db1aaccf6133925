"""Pretraining network: embeddings, HCO encoder, frequency and spatial decoders, loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .heat import HcoParams, hco_block
from .rng import Xoshiro256pp
from .spectral import dct2, make_plan
from .tensor import ShapeError, Tensor

MODALITY_CHANNELS = {"opt": 3, "sar": 1}
LEVELS = ("low", "high")
STREAMS = (("opt", "low"), ("opt", "high"), ("sar", "low"), ("sar", "high"))


@dataclass
class ModelConfig:
    stage_depths: Tuple[int, ...] = (1, 1, 2, 1)
    stage_widths: Tuple[int, ...] = (16, 32, 64, 128)
    patch_size: int = 4
    image_size: Tuple[int, int] = (64, 64)
    sdr: bool = True
    fdr: bool = True
    cl: bool = True
    hco_t: float = 1.0
    mlp_ratio: int = 4
    activation: str = "gelu"
    omega: str = "discrete"
    path: str = "matmul"
    dtype: str = "f32"

    def __post_init__(self):
        self.stage_depths = tuple(int(d) for d in self.stage_depths)
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        if isinstance(self.image_size, int):
            self.image_size = (self.image_size, self.image_size)
        self.image_size = tuple(int(s) for s in self.image_size)
        if len(self.image_size) == 1:
            self.image_size = self.image_size * 2
        if len(self.image_size) != 2:
            raise ValueError(f"image_size must be one side or (H, W), got {self.image_size}")
        self.validate()

    def validate(self) -> None:
        if len(self.stage_depths) != 4 or len(self.stage_widths) != 4:
            raise ValueError("stage_depths and stage_widths must each have 4 entries")
        if any(d < 1 for d in self.stage_depths) or any(w < 2 or w % 2 for w in self.stage_widths):
            raise ValueError("depths must be >= 1 and widths even and >= 2")
        step = self.patch_size * 2 ** (len(self.stage_depths) - 1)
        for s in self.image_size:
            if s % step:
                raise ValueError(
                    f"image side {s} must be divisible by patch_size * 2^(stages-1) = {step}"
                )

    @property
    def toggles(self) -> Dict[str, bool]:
        return {"sdr": self.sdr, "fdr": self.fdr, "cl": self.cl}

    def stage_grid(self, s: int) -> Tuple[int, int]:
        f = self.patch_size * 2 ** s
        return self.image_size[0] // f, self.image_size[1] // f

    @classmethod
    def full_scale(cls, **kw) -> "ModelConfig":
        """Full-size ladder: depths (2, 2, 18, 2), widths 128 to 1024, 224 x 224 images."""
        base = dict(stage_depths=(2, 2, 18, 2), stage_widths=(128, 256, 512, 1024), image_size=(224, 224))
        base.update(kw)
        return cls(**base)


Params = Dict[str, Tensor]


def _w(gen, shape, fan_in, dtype, gain=1.0):
    return T.tensor(gen.normal(0.0, gain / np.sqrt(fan_in), shape), dtype=dtype, requires_grad=True)


def _zeros(shape, dtype):
    return T.zeros(shape, dtype=dtype, requires_grad=True)


def init_params(cfg: ModelConfig, seed: int = 0) -> Params:
    gen = Xoshiro256pp(seed).numpy_generator()
    dt = cfg.dtype
    p: Params = {}
    ps, widths = cfg.patch_size, cfg.stage_widths
    for mod, cin in MODALITY_CHANNELS.items():
        p[f"embed.{mod}.w"] = _w(gen, (widths[0], cin, ps, ps), cin * ps * ps, dt)
        p[f"embed.{mod}.b"] = _zeros((widths[0], 1, 1), dt)
    for s, (depth, c) in enumerate(zip(cfg.stage_depths, widths)):
        m, n = cfg.stage_grid(s)
        for j in range(depth):
            blk = HcoParams.init(c, m, n, gen, dtype=dt, mlp_ratio=cfg.mlp_ratio, t=cfg.hco_t,
                                 activation=cfg.activation)
            for name, t in blk.tensors().items():
                p[f"stage{s}.block{j}.{name}"] = t
        if s + 1 < len(widths):
            p[f"down{s}.w"] = _w(gen, (widths[s + 1], c, 2, 2), c * 4, dt)
            p[f"down{s}.b"] = _zeros((widths[s + 1], 1, 1), dt)
    c3, c4 = widths[2], widths[3]
    r4 = ps * 2 ** 3
    r3 = ps * 2 ** 2
    for mod, cout in MODALITY_CHANNELS.items():
        p[f"fdec.{mod}.w"] = _w(gen, (cout * r4 * r4, c4, 1, 1), c4, dt, 0.5)
        p[f"fdec.{mod}.b"] = _zeros((cout * r4 * r4, 1, 1), dt)
        for stage, c in (("s3", c3), ("s4", c4)):
            for lvl in LEVELS:
                p[f"fuse.{mod}.{stage}.{lvl}.w"] = _w(gen, (c // 2, c, 3, 3), c * 9, dt)
                p[f"fuse.{mod}.{stage}.{lvl}.b"] = _zeros((c // 2, 1, 1), dt)
        p[f"merge.{mod}.s3.w"] = _w(gen, (c3, c3, 1, 1), c3, dt)
        p[f"merge.{mod}.s3.b"] = _zeros((c3, 1, 1), dt)
        p[f"merge.{mod}.s4.w"] = _w(gen, (c3, c4, 1, 1), c4, dt)
        p[f"merge.{mod}.s4.b"] = _zeros((c3, 1, 1), dt)
        p[f"sdec.{mod}.w"] = _w(gen, (cout * r3 * r3, c3, 1, 1), c3, dt, 0.5)
        p[f"sdec.{mod}.b"] = _zeros((cout * r3 * r3, 1, 1), dt)
    for name, t in p.items():
        t.name = name
    return p


def expected_param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count for :func:`init_params`."""
    ps, w = cfg.patch_size, cfg.stage_widths
    total = sum(w[0] * cin * ps * ps + w[0] for cin in MODALITY_CHANNELS.values())
    for s, (depth, c) in enumerate(zip(cfg.stage_depths, w)):
        m, n = cfg.stage_grid(s)
        h = cfg.mlp_ratio * c
        per_block = 2 * m * n * c + 2 * (c * c + c) + (h * c + h) + (c * h + c)
        total += depth * per_block
        if s + 1 < len(w):
            total += w[s + 1] * c * 4 + w[s + 1]
    c3, c4 = w[2], w[3]
    r4, r3 = ps * 8, ps * 4
    for cout in MODALITY_CHANNELS.values():
        total += cout * r4 * r4 * c4 + cout * r4 * r4
        total += 2 * ((c3 // 2) * c3 * 9 + c3 // 2) + 2 * ((c4 // 2) * c4 * 9 + c4 // 2)
        total += c3 * c3 + c3 + c3 * c4 + c3
        total += cout * r3 * r3 * c3 + cout * r3 * r3
    return total


def param_count(params: Mapping[str, Tensor]) -> int:
    return sum(t.size for t in params.values())


def _conv(x, params, prefix, stride=1, padding=0):
    return T.add(T.conv2d(x, params[prefix + ".w"], stride=stride, padding=padding), params[prefix + ".b"])


def block_params(cfg: ModelConfig, params: Params, s: int, j: int) -> HcoParams:
    prefix = f"stage{s}.block{j}."
    return HcoParams.from_tensors({k: params[prefix + k] for k in HcoParams.TENSOR_FIELDS},
                                  t=cfg.hco_t, activation=cfg.activation)


def embed(cfg: ModelConfig, params: Params, x: Tensor, modality: str) -> Tensor:
    """Patchify ``x`` [.., C_mod, H, W] into the shared width with a strided conv."""
    ps = cfg.patch_size
    H, W = x.shape[-2:]
    if H % ps or W % ps:
        raise ShapeError(f"image {H}x{W} not divisible by patch size {ps}")
    if x.shape[-3] != MODALITY_CHANNELS[modality]:
        raise ShapeError(f"{modality} input must have {MODALITY_CHANNELS[modality]} channels, got {x.shape[-3]}")
    return _conv(x, params, f"embed.{modality}", stride=ps)


@dataclass
class EncoderOutput:
    """Per-stage feature maps of one or more streams stacked on the batch axis."""

    stages: List[Tensor]

    @property
    def stage3(self) -> Tensor:
        return self.stages[2]

    @property
    def stage4(self) -> Tensor:
        return self.stages[3]


def encode_tokens(cfg: ModelConfig, params: Params, z: Tensor) -> EncoderOutput:
    """Run the shared HCO trunk on embedded tokens [B, C0, h, w]."""
    stages = []
    for s, depth in enumerate(cfg.stage_depths):
        for j in range(depth):
            z = hco_block(block_params(cfg, params, s, j), z, path=cfg.path, omega=cfg.omega)
        stages.append(z)
        if s + 1 < len(cfg.stage_depths):
            z = _conv(z, params, f"down{s}", stride=2)
    return EncoderOutput(stages)


def encode(cfg: ModelConfig, params: Params, image: Tensor, modality: str, level: str = "low") -> EncoderOutput:
    """Encode one component image; ``level`` is bookkeeping only (weights are shared)."""
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    return encode_tokens(cfg, params, embed(cfg, params, image, modality))


def decode_frequency(cfg: ModelConfig, params: Params, feat: Tensor, modality: str) -> Tensor:
    """1x1 conv to ``C_mod * r^2`` channels, then pixel shuffle by ``r`` back to image size."""
    r = cfg.patch_size * 2 ** 3
    return T.pixel_shuffle(_conv(feat, params, f"fdec.{modality}"), r)


def fuse_and_decode_spatial(cfg: ModelConfig, params: Params, s3_high: Tensor, s3_low: Tensor,
                            s4_high: Tensor, s4_low: Tensor, modality: str) -> Tensor:
    """Fuse stage-3/4 features of both frequency levels and decode to image size."""
    pre = f"fuse.{modality}"
    f3 = T.concat([_conv(s3_high, params, f"{pre}.s3.high", padding=1),
                   _conv(s3_low, params, f"{pre}.s3.low", padding=1)], axis=-3)
    f4 = T.concat([_conv(s4_high, params, f"{pre}.s4.high", padding=1),
                   _conv(s4_low, params, f"{pre}.s4.low", padding=1)], axis=-3)
    p3 = T.relu(_conv(f3, params, f"merge.{modality}.s3"))
    p4 = T.relu(_conv(f4, params, f"merge.{modality}.s4"))
    merged = T.add(p3, T.upsample_nearest(p4, 2))
    r = cfg.patch_size * 2 ** 2
    return T.pixel_shuffle(_conv(merged, params, f"sdec.{modality}"), r)


def global_pool(feat: Tensor) -> Tensor:
    """[B, C, h, w] -> [B, C] spatial mean."""
    return T.mean(feat, axis=(-2, -1))


@dataclass
class Outputs:
    rec_freq: Dict[Tuple[str, str], Tensor]
    rec_spatial: Dict[str, Tensor]
    pooled: Dict[Tuple[str, str], Tensor]
    encoded: Optional[EncoderOutput] = None


def forward(cfg: ModelConfig, params: Params, components: Mapping[Tuple[str, str], Tensor]) -> Outputs:
    """All four (modality, level) streams in one batched trunk pass.

    ``components[(mod, level)]`` is [B, C_mod, H, W].
    """
    B = components[STREAMS[0]].shape[0]
    opt = T.concat([components[("opt", "low")], components[("opt", "high")]], axis=0)
    sar = T.concat([components[("sar", "low")], components[("sar", "high")]], axis=0)
    z = T.concat([embed(cfg, params, opt, "opt"), embed(cfg, params, sar, "sar")], axis=0)
    enc = encode_tokens(cfg, params, z)

    def part(x, i):
        return T.take_range(x, i * B, (i + 1) * B, axis=0)

    s3 = {key: part(enc.stage3, i) for i, key in enumerate(STREAMS)}
    s4 = {key: part(enc.stage4, i) for i, key in enumerate(STREAMS)}
    rec_freq = {}
    for mod, off in (("opt", 0), ("sar", 2)):
        both = decode_frequency(cfg, params, T.take_range(enc.stage4, off * B, (off + 2) * B, axis=0), mod)
        rec_freq[(mod, "low")] = part(both, 0)
        rec_freq[(mod, "high")] = part(both, 1)
    rec_spatial = {
        mod: fuse_and_decode_spatial(cfg, params, s3[(mod, "high")], s3[(mod, "low")],
                                     s4[(mod, "high")], s4[(mod, "low")], mod)
        for mod in MODALITY_CHANNELS
    }
    pooled = {key: global_pool(s4[key]) for key in STREAMS}
    return Outputs(rec_freq, rec_spatial, pooled, enc)


def _l1(a: Tensor, b: Tensor) -> Tensor:
    return T.mean(T.tabs(T.sub(a, b)))


def cosine_alignment(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Mean over rows of ``1 - cos(a_i, b_i)`` for [B, C] inputs."""
    dot = T.tsum(T.mul(a, b), axis=-1)
    na = T.sqrt(T.add(T.tsum(T.mul(a, a), axis=-1), eps))
    nb = T.sqrt(T.add(T.tsum(T.mul(b, b), axis=-1), eps))
    cos = T.div(dot, T.mul(na, nb))
    return T.mean(T.sub(1.0, cos))


@dataclass
class Targets:
    components: Dict[Tuple[str, str], Tensor]
    originals: Dict[str, Tensor]


def loss_total(outputs: Outputs, targets: Targets, toggles: Mapping[str, bool]):
    """Unweighted sum of the enabled terms; returns ``(total, breakdown)``.

    * ``l_fre``: L1 between DCT coefficients of each frequency reconstruction
      and of its masked-component target, summed over (modality, level).
    * ``l_spa``: L1 between each spatial reconstruction and the original image,
      summed over modalities.
    * ``l_con``: ``1 - cos`` between pooled low- and high-frequency embeddings
      of the same image, averaged over modalities.
    """
    if not any(toggles.get(k, False) for k in ("sdr", "fdr", "cl")):
        raise ValueError("at least one of sdr, fdr, cl must be enabled")
    terms: Dict[str, Tensor] = {}
    l_fre = None
    for key, rec in outputs.rec_freq.items():
        tgt = targets.components[key]
        plan = make_plan(*rec.shape[-2:])
        term = _l1(dct2(plan, rec), dct2(plan, tgt))
        l_fre = term if l_fre is None else T.add(l_fre, term)
    l_spa = None
    for mod, rec in outputs.rec_spatial.items():
        term = _l1(rec, targets.originals[mod])
        l_spa = term if l_spa is None else T.add(l_spa, term)
    cons = [cosine_alignment(outputs.pooled[(mod, "low")], outputs.pooled[(mod, "high")])
            for mod in MODALITY_CHANNELS]
    l_con = T.scale(T.add(cons[0], cons[1]), 0.5)
    terms = {"l_con": l_con, "l_spa": l_spa, "l_fre": l_fre}
    enabled = [("cl", "l_con"), ("sdr", "l_spa"), ("fdr", "l_fre")]
    total = None
    for flag, name in enabled:
        if toggles.get(flag, False):
            total = terms[name] if total is None else T.add(total, terms[name])
    breakdown = {name: float(t.data) for name, t in terms.items()}
    breakdown["l_total"] = float(total.data)
    return total, breakdown


def targets_from_batch(batch, originals: Mapping[str, Tensor]) -> Targets:
    comps = {("opt", "low"): batch.opt_low, ("opt", "high"): batch.opt_high,
             ("sar", "low"): batch.sar_low, ("sar", "high"): batch.sar_high}
    return Targets(comps, dict(originals))
