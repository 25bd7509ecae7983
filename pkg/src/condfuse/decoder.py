"""Hierarchical decoder with a weight-shared dilated block and a learnable
calibrator that re-injects the initial decoder state at every stage."""

from __future__ import annotations

from .errors import ContractError, DimensionError
from .imageops import bilinear_upsample
from .layers import Conv2d, Module
from .tensor import as_tensor, relu


class MultiDilationBlock(Module):
    """Three parallel 3x3 convolutions at dilations 1/2/4, summed, then a
    pointwise mix with a rectifier. Spatial extent is preserved."""

    def __init__(self, channels, rng, dilations=(1, 2, 4)):
        self.branches = [
            Conv2d(channels, channels, 3, rng, dilation=d, padding=d) for d in dilations
        ]
        self.mix = Conv2d(channels, channels, 1, rng)

    def __call__(self, x):
        acc = self.branches[0](x)
        for branch in self.branches[1:]:
            acc = acc + branch(x)
        return relu(self.mix(acc))


class Calibrator(Module):
    """Pointwise projection of the initial state, resized to a target stage."""

    def __init__(self, channels, rng):
        self.proj = Conv2d(channels, channels, 1, rng)

    def __call__(self, d1, scale):
        return bilinear_upsample(self.proj(d1), scale)


def decode_stage(d_t, d_1, block: MultiDilationBlock, calibrator=None, skip=None):
    """One decoding step: block(Up(d_t) [+ skip] [+ calibrator(d_1)])."""
    d_t, d_1 = as_tensor(d_t), as_tensor(d_1)
    x = bilinear_upsample(d_t, 2)
    if skip is not None:
        skip = as_tensor(skip)
        if skip.shape != x.shape:
            raise DimensionError(f"skip shape {skip.shape} != upsampled {x.shape}")
        x = x + skip
    if calibrator is not None:
        target_h = x.shape[-2]
        h1 = d_1.shape[-2]
        if target_h % h1 != 0:
            raise DimensionError(f"cannot resize initial state {h1} to {target_h}")
        cal = calibrator(d_1, target_h // h1)
        if cal.shape != x.shape:
            raise DimensionError(f"calibrator shape {cal.shape} != stage {x.shape}")
        x = x + cal
    return block(x)


class HierarchicalDecoder(Module):
    """Runs T-1 shared decoding stages over coarse-to-fine skip features."""

    def __init__(self, skip_channels, channels, rng, use_calibrator=True):
        self.channels = channels
        self.use_calibrator = use_calibrator
        self.projections = [Conv2d(c, channels, 1, rng) for c in skip_channels]
        self.block = MultiDilationBlock(channels, rng)
        self.calibrator = Calibrator(channels, rng)

    def run(self, skips):
        if len(skips) != len(self.projections):
            raise ContractError(
                f"expected {len(self.projections)} skip features, got {len(skips)}"
            )
        d = relu(self.projections[0](skips[0]))
        d1 = d
        cal = self.calibrator if self.use_calibrator else None
        for t in range(1, len(skips)):
            skip = self.projections[t](skips[t])
            d = decode_stage(d, d1, self.block, calibrator=cal, skip=skip)
        return d

    __call__ = run


class SegmentationHeads(Module):
    """Pointwise class and edge logits, bilinearly resized to image size."""

    def __init__(self, channels, n_classes, rng):
        self.seg = Conv2d(channels, n_classes, 1, rng)
        self.edge = Conv2d(channels, 1, 1, rng)

    def __call__(self, feat, image_hw):
        h = feat.shape[-2]
        if image_hw % h != 0:
            raise DimensionError(f"feature extent {h} does not divide image {image_hw}")
        scale = image_hw // h
        return (
            bilinear_upsample(self.seg(feat), scale),
            bilinear_upsample(self.edge(feat), scale),
        )
