"""Full segmentation network: encoder, graph bottleneck, decoder with
attention-based scale fusion, and a weighted prediction-fusion head.

Data flow for a (3, S, S) image:

  encoder      -> e1..e4 at strides 4, 8, 16, 32 (fine to coarse)
  bottleneck   -> b = dual-graph block on e4 (or e4 itself when toggled off)
  decoder      -> d = [b, d2, d3, d4]; each step upsamples 2x, concatenates
                  the encoder skip, and applies conv + norm + ReLU
  scale fusion -> m = windowed-attention fusion of d at the d4 grid
  head fusion  -> single-channel logits from three stride-4 maps
                  (projected e1, projected b, m) blended by the fusion head
  outputs      -> sigmoid probability maps, bilinearly upsampled to S x S:
                  one per decoder map (deep supervision) plus the fused map.

Every component is toggleable for ablations via the experiment spec.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ExperimentSpec
from .dbfeb import DualGraphBlock
from .errors import ShapeError
from .fusion import FusionHead
from .layers import ChannelLayerNorm, Conv2d, collect_parameters
from .lfsa import DecoderFusion


@dataclass
class ModelOutput:
    decoder_preds: list  # four (S, S) probability Tensors, coarse to fine
    fused_pred: T.Tensor  # (S, S) probability Tensor


class DecoderBlock:
    """Upsample 2x, concatenate the encoder skip, then conv-norm-ReLU."""

    def __init__(self, up_channels: int, skip_channels: int, out_channels: int,
                 rng: np.random.Generator):
        self.conv = Conv2d(up_channels + skip_channels, out_channels, 3, pad=1, rng=rng)
        self.norm = ChannelLayerNorm(out_channels)

    def __call__(self, up: T.Tensor, skip: T.Tensor) -> T.Tensor:
        h, w = skip.shape[1:]
        x = T.concat([T.resample(up, h, w, mode="bilinear"), skip], axis=0)
        return T.relu(self.norm(self.conv(x)))

    def parameters(self):
        out = collect_parameters("conv", self.conv)
        out.update(collect_parameters("norm", self.norm))
        return out


class SegModel:
    def __init__(self, spec: ExperimentSpec, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        self.spec = spec
        ch = spec.encoder.stage_channels
        att = spec.attention
        from .backbone import Encoder  # local import keeps module order simple
        self.encoder = Encoder(spec.encoder, use_convnext=spec.toggles.convnext, rng=rng)
        self.bottleneck = (DualGraphBlock(ch[3], num_heads=att.heads,
                                          max_hops=att.max_hops, rng=rng)
                           if spec.toggles.dbfeb else None)
        self.dec_blocks = [DecoderBlock(ch[3], ch[2], ch[2], rng),
                           DecoderBlock(ch[2], ch[1], ch[1], rng),
                           DecoderBlock(ch[1], ch[0], ch[0], rng)]
        self.scale_fusion = DecoderFusion((ch[3], ch[2], ch[1], ch[0]), ch[0],
                                          window=att.window,
                                          use_attention=spec.toggles.lfsa, rng=rng)
        self.proj_shallow = Conv2d(ch[0], ch[0], 1, rng=rng)
        self.proj_deep = Conv2d(ch[3], ch[0], 1, rng=rng)
        self.fusion_head = FusionHead(spec.fusion)
        self.aux_heads = [Conv2d(c, 1, 1, rng=rng) for c in (ch[3], ch[2], ch[1], ch[0])]
        self.final_head = Conv2d(ch[0], 1, 1, rng=rng)

    def __call__(self, image: T.Tensor, training: bool = True) -> ModelOutput:
        if image.data.ndim != 3 or image.shape[0] != 3:
            raise ShapeError(f"model expects a (3,H,W) image; got {image.shape}")
        s_h, s_w = image.shape[1:]
        feats = self.encoder(image)  # fine to coarse
        e1, e2, e3, e4 = feats
        b = self.bottleneck(e4, training=training) if self.bottleneck is not None else e4
        d = [b]
        for block, skip in zip(self.dec_blocks, (e3, e2, e1)):
            d.append(block(d[-1], skip))
        m = self.scale_fusion(d)
        i1 = self.proj_shallow(e1)
        h4, w4 = m.shape[1:]
        i2 = T.resample(self.proj_deep(b), h4, w4, mode="bilinear")
        fused_feat = self.fusion_head(i1, i2, m)

        def to_prob(head, feat):
            # upsample logits, not probabilities: bilinear interpolation of the
            # logit field keeps boundaries sharp after the sigmoid and avoids
            # saturating the probability map away from its native resolution.
            # The tanh bound keeps |logit| <= 16 smoothly, so sigmoid output
            # stays strictly inside the BCE clamp band and gradients never die
            # on saturated pixels.
            logit = T.reshape(T.resample(head(feat), s_h, s_w, mode="bilinear"),
                              (s_h, s_w))
            # tanh(x) = 2*sigmoid(2x) - 1
            bounded = 16.0 * (2.0 * T.sigmoid(logit * (2.0 / 16.0)) - 1.0)
            return T.sigmoid(bounded)

        decoder_preds = [to_prob(h, f) for h, f in zip(self.aux_heads, d)]
        fused_pred = to_prob(self.final_head, fused_feat)
        return ModelOutput(decoder_preds=decoder_preds, fused_pred=fused_pred)

    def parameters(self) -> dict[str, T.Tensor]:
        out = collect_parameters("encoder", self.encoder)
        if self.bottleneck is not None:
            out.update(collect_parameters("bottleneck", self.bottleneck))
        for i, block in enumerate(self.dec_blocks):
            out.update(collect_parameters(f"decoder{i}", block))
        out.update(collect_parameters("scale_fusion", self.scale_fusion))
        out.update(collect_parameters("proj_shallow", self.proj_shallow))
        out.update(collect_parameters("proj_deep", self.proj_deep))
        out.update(collect_parameters("fusion_head", self.fusion_head))
        for i, head in enumerate(self.aux_heads):
            out.update(collect_parameters(f"aux_head{i}", head))
        out.update(collect_parameters("final_head", self.final_head))
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        if self.bottleneck is None:
            return {}
        return {f"bottleneck.{k}": v for k, v in self.bottleneck.buffers().items()}

    def set_buffers(self, buffers: dict[str, np.ndarray]) -> None:
        if self.bottleneck is not None and buffers:
            self.bottleneck.fuse_bn.set_buffers(buffers["bottleneck.fuse_bn.running_mean"],
                                                buffers["bottleneck.fuse_bn.running_var"])

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters().values())


def build_model(spec: ExperimentSpec) -> SegModel:
    return SegModel(spec, rng=np.random.default_rng(spec.seed))


def gradient_norms(params: dict[str, T.Tensor]) -> dict[str, float]:
    """L2 gradient norm per top-level module prefix (after backward)."""
    norms: dict[str, float] = {}
    for name, p in params.items():
        if p.grad is None:
            continue
        prefix = name.split(".", 1)[0]
        norms[prefix] = norms.get(prefix, 0.0) + float((p.grad ** 2).sum())
    return {k: float(np.sqrt(v)) for k, v in norms.items()}
