"""Full network: dual encoders, per-stage expert fusion, coarse gated
attention, scene-context injection, calibrated decoder, and the two heads."""

from __future__ import annotations

import numpy as np

from .attention import GatedPointAttention, Gating, compute_unbalanced_map
from .config import RunConfig
from .decoder import HierarchicalDecoder, SegmentationHeads
from .errors import ContractError
from .imageops import block_mean
from .layers import Conv2d, Module
from .moe import ExpertBank, GatingNetwork, SceneContextInjector, gate, sparse_fuse
from .prompts import EmbeddingProvider, PromptGranularity
from .synth import N_CLASSES
from .tensor import Tensor, as_tensor, no_grad, relu, softmax


class ModalityEncoder(Module):
    """Four stride-2 stages with channels C, 2C, 4C, 4C."""

    def __init__(self, in_channels, base, rng):
        widths = [base, 2 * base, 4 * base, 4 * base]
        self.stages = []
        prev = in_channels
        for w in widths:
            self.stages.append(Conv2d(prev, w, 3, rng, stride=2, padding=1))
            prev = w
        self.widths = widths

    def __call__(self, x):
        feats = []
        for stage in self.stages:
            x = relu(stage(x))
            feats.append(x)
        return feats


class StageFusion(Module):
    """One fusion point: either a static conv or the sparse expert mixture."""

    def __init__(self, channels, cfg: RunConfig, rng):
        self.channels = channels
        self.cfg = cfg
        if cfg.fusion == "moe":
            self.bank = ExpertBank(channels, cfg.n_experts, rng)
            self.gating = GatingNetwork(channels, cfg.embed_channels, cfg.n_experts, rng)
        else:
            self.static = Conv2d(2 * channels, channels, 3, rng)

    def __call__(self, f_rgb, f_th, p_cond, random_rng=None):
        from .tensor import concat

        if self.cfg.fusion != "moe":
            return relu(self.static(concat([f_rgb, f_th], axis=1))), None
        if self.cfg.router == "random":
            shape = (f_rgb.shape[0], self.cfg.n_experts) + f_rgb.shape[-2:]
            logits = random_rng.uniform(0.0, 1.0, shape).astype(f_rgb.dtype)
            scores = softmax(Tensor(logits), axis=1)
        else:
            scores = gate(f_rgb, f_th, p_cond, self.gating)
        fused = sparse_fuse(
            f_rgb, f_th, scores, self.bank, self.cfg.topk,
            renormalize=self.cfg.topk_renormalize,
        )
        return relu(fused), scores


class FusionSegmenter(Module):
    """End-to-end model; forward consumes a prepared batch dict."""

    def __init__(self, cfg: RunConfig, rng=None):
        cfg.validate()
        self.cfg = cfg
        rng = rng or np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x30DE)))
        self.provider = EmbeddingProvider(rng, text_dim=cfg.text_dim, embed_dim=cfg.embed_channels)
        self.rgb_encoder = ModalityEncoder(3, cfg.channels, rng)
        self.thermal_encoder = ModalityEncoder(1, cfg.channels, rng)
        widths = self.rgb_encoder.widths
        self.fusions = [StageFusion(w, cfg, rng) for w in widths]
        self.injector = SceneContextInjector(cfg.embed_channels, widths[-1], rng)
        self.attention = GatedPointAttention(
            widths[-1], cfg.attention_dim, rng,
            mode=Gating(cfg.gating), threshold=cfg.hard_threshold,
        )
        self.decoder = HierarchicalDecoder(
            list(reversed(widths)), cfg.decoder_channels, rng, use_calibrator=cfg.calibrator
        )
        self.heads = SegmentationHeads(cfg.decoder_channels, N_CLASSES, rng)
        self._route_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x5EED)))

    @property
    def granularity(self):
        return PromptGranularity(self.cfg.granularity)

    def forward(self, rgb, thermal, cond_vecs, scene_vecs):
        """rgb [B,3,H,W], thermal [B,1,H,W], *_vecs [B,text_dim] frozen table rows."""
        rgb, thermal = as_tensor(rgb), as_tensor(thermal)
        if rgb.ndim != 4 or thermal.ndim != 4:
            raise ContractError("forward expects batched [B,C,H,W] inputs")
        cfg = self.cfg
        use_prompts = cfg.granularity != "none"
        if use_prompts:
            p_cond = self.provider.encode_condition_batch(as_tensor(cond_vecs))
            p_emb = self.provider.encode_scene_batch(as_tensor(scene_vecs))
        else:
            zeros = np.zeros((rgb.shape[0], cfg.embed_channels), dtype=rgb.dtype)
            p_cond = Tensor(zeros)
            p_emb = Tensor(zeros.copy())

        rgb_feats = self.rgb_encoder(rgb)
        th_feats = self.thermal_encoder(thermal)
        fused, scores = [], []
        for f_rgb, f_th, fusion in zip(rgb_feats, th_feats, self.fusions):
            f, s = fusion(f_rgb, f_th, p_cond, random_rng=self._route_rng)
            fused.append(f)
            scores.append(s)

        top = fused[-1]
        if cfg.scene_inject and use_prompts:
            top = self.injector(top, p_emb)
        if cfg.attention:
            m_small = None
            if self.attention.mode != Gating.NO_PRIOR:
                m_un = compute_unbalanced_map(rgb, cfg.window)
                factor = rgb.shape[-1] // top.shape[-1]
                m_small = block_mean(m_un.values, factor)
            b, _, h4, w4 = top.shape
            n = h4 * w4
            x_flat = top.reshape((b, top.shape[1], n)).transpose((0, 2, 1))
            m_flat = None if m_small is None else m_small.reshape((b, 1, n))
            attended = self.attention(x_flat, m_flat)
            top = top + attended.transpose((0, 2, 1)).reshape(top.shape)
        fused[-1] = top

        feat = self.decoder(list(reversed(fused)))
        seg_logits, edge_logits = self.heads(feat, rgb.shape[-1])
        return {
            "seg": seg_logits,
            "edge": edge_logits,
            "scores": scores,
            "features": fused,
        }

    __call__ = forward

    def predict(self, rgb, thermal, cond_vecs, scene_vecs):
        with no_grad():
            out = self.forward(rgb, thermal, cond_vecs, scene_vecs)
        pred = np.argmax(out["seg"].data, axis=1)
        return pred, out
