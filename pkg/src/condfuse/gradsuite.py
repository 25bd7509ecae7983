"""Named gradient checks over every differentiable block, all in 64-bit."""

from __future__ import annotations

import numpy as np

from .attention import Gating, compute_unbalanced_map, gated_attention
from .decoder import Calibrator, MultiDilationBlock, decode_stage
from .gradcheck import grad_check
from .imageops import bilinear_upsample, conv2d, local_stats
from .layers import Linear
from .losses import LossConfig, focal_loss, total_loss, weighted_ce
from .moe import ExpertBank, GatingNetwork, sparse_fuse, topk_mask
from .tensor import Tensor, matmul, softmax, tanh, using_dtype

THRESHOLD = 1e-4


def _rng():
    return np.random.default_rng(20240917)


def _t(rng, *shape, scale=1.0, positive=False):
    data = rng.standard_normal(shape) * scale
    if positive:
        data = np.abs(data) + 0.05
    return Tensor(data, dtype=np.float64)


def suite():
    """(name, fn, point) triples; each fn maps one tensor to a scalar."""
    rng = _rng()
    checks = []

    k = _t(rng, 2, 1, 3, 3)
    x_img = _t(rng, 1, 5, 5)
    checks.append(("conv2d.input", lambda t: (conv2d(t, k, padding=1) ** 2.0).sum(), x_img))
    checks.append(("conv2d.kernel", lambda t: (conv2d(x_img, t, padding=1) ** 2.0).sum(), k))
    kd = _t(rng, 1, 1, 3, 3)
    checks.append(
        ("conv2d.dilated", lambda t: (conv2d(t, kd, dilation=2, padding=2) ** 2.0).sum(), x_img)
    )

    xs = _t(rng, 4, 6)
    w_mix = _t(rng, 6, 1)
    checks.append(("softmax", lambda t: matmul(softmax(t, axis=1), w_mix).sum(), xs))
    checks.append(("tanh.chain", lambda t: (tanh(t) * tanh(t)).sum(), xs))
    checks.append(("matmul", lambda t: (matmul(t, w_mix) ** 2.0).sum(), xs))

    img = Tensor(_rng().uniform(0.05, 0.95, (1, 6, 6)), dtype=np.float64)
    checks.append(
        (
            "local_stats",
            lambda t: local_stats(t, 3)[0].sum() + 2.0 * (local_stats(t, 3)[1] ** 2.0).sum(),
            img,
        )
    )
    checks.append(
        ("bilinear_upsample", lambda t: (bilinear_upsample(t, 2) ** 2.0).sum(), _t(rng, 2, 3, 3))
    )

    # full soft-gated attention path, including the degradation-map branch;
    # 16 tokens, matching a flattened 4x4 map
    d, c = 3, 4
    wq, wk, wv = _t(rng, c, d), _t(rng, c, d), _t(rng, c, c)
    x_att = _t(rng, 16, c)
    rgb = Tensor(_rng().uniform(0.1, 0.9, (3, 4, 4)), dtype=np.float64)
    lam = Tensor(np.asarray(0.7), dtype=np.float64)

    def soft_attention_wrt(t, which):
        parts = {"x": x_att, "lam": lam, "wq": wq, "rgb": rgb}
        parts[which] = t
        m = compute_unbalanced_map(parts["rgb"], 3).values.reshape((1, 16))
        q = matmul(parts["x"], parts["wq"])
        kk = matmul(parts["x"], wk)
        v = matmul(parts["x"], wv)
        out = gated_attention(q, kk, v, m, mode=Gating.SOFT_TANH, lam=parts["lam"])
        return (out**2.0).sum()

    checks.append(("attention.soft.input", lambda t: soft_attention_wrt(t, "x"), x_att))
    checks.append(("attention.soft.lambda", lambda t: soft_attention_wrt(t, "lam"), lam))
    checks.append(("attention.soft.projection", lambda t: soft_attention_wrt(t, "wq"), wq))
    checks.append(("attention.unbalanced_map_path", lambda t: soft_attention_wrt(t, "rgb"), rgb))

    # expert fusion with frozen routing; the gate is spelled out from
    # primitives so each piece can be differentiated as the check point
    cch = 3
    with using_dtype(np.float64):
        bank64 = ExpertBank(cch, 4, _rng())
        gating64 = GatingNetwork(cch, 2, 4, _rng())
    f_rgb = _t(rng, cch, 4, 4, scale=0.5)
    f_th = _t(rng, cch, 4, 4, scale=0.5)
    p_cond = _t(rng, 2)
    gate_kernel = Tensor(gating64.proj.kernel.data.copy(), dtype=np.float64)
    expert_kernel = Tensor(bank64.kernels[0].data.copy(), dtype=np.float64)

    def fuse_wrt(t, which):
        parts = {"rgb": f_rgb, "th": f_th, "cond": p_cond, "gate_k": gate_kernel}
        bank = bank64
        if which == "expert_k":
            bank = ExpertBank(cch, 4, _rng())
            for i, kern in enumerate(bank64.kernels):
                bank.kernels[i] = Tensor(kern.data, dtype=np.float64)
            bank.kernels[0] = t
        else:
            parts[which] = t
        from .moe import expand
        from .tensor import concat

        stacked = concat([parts["rgb"], parts["th"], expand(parts["cond"], 4, 4)], axis=0)
        s = softmax(conv2d(stacked, parts["gate_k"]), axis=0)
        out = sparse_fuse(parts["rgb"], parts["th"], s, bank, 2, routing_mask=frozen)
        return (out**2.0).sum()

    from .moe import expand as _expand
    from .tensor import concat as _concat

    _stack0 = _concat([f_rgb, f_th, _expand(p_cond, 4, 4)], axis=0)
    _s0 = softmax(conv2d(_stack0, gate_kernel), axis=0)
    frozen = topk_mask(_s0.data.reshape(4, -1), 2).reshape(_s0.shape)

    checks.append(("moe.gate_fuse.input", lambda t: fuse_wrt(t, "rgb"), f_rgb))
    checks.append(("moe.gate_fuse.condition", lambda t: fuse_wrt(t, "cond"), p_cond))
    checks.append(("moe.gate_fuse.gate_kernel", lambda t: fuse_wrt(t, "gate_k"), gate_kernel))
    checks.append(("moe.gate_fuse.expert_kernel", lambda t: fuse_wrt(t, "expert_k"), expert_kernel))

    # scene-context injection (residual of two linear maps)
    with using_dtype(np.float64):
        wv_l = Linear(4, 3, _rng())
        wo_l = Linear(3, 3, _rng())
    emb = _t(rng, 1, 4)
    feat = _t(rng, 3, 2, 2)

    def inject(t):
        r = wo_l(wv_l(t)).reshape((3, 1, 1))
        return ((feat + r) ** 2.0).sum()

    checks.append(("scene_inject", inject, emb))

    # decoder pieces
    with using_dtype(np.float64):
        block64 = MultiDilationBlock(3, _rng())
        cal64 = Calibrator(3, _rng())
    d1 = _t(rng, 3, 4, 4, scale=0.5)

    checks.append(
        ("decoder.dilated_block", lambda t: (block64(t) ** 2.0).sum(), _t(rng, 3, 6, 6, scale=0.5))
    )
    checks.append(
        ("decoder.decode_stage", lambda t: (decode_stage(t, d1, block64, cal64) ** 2.0).sum(), d1)
    )

    # losses
    lab = _rng().integers(0, 3, (4, 4))
    wts = np.asarray([1.0, 2.0, 0.5])
    checks.append(("loss.weighted_ce", lambda t: weighted_ce(t, lab, wts), _t(rng, 3, 4, 4)))
    edges = (_rng().uniform(size=(1, 4, 4)) > 0.7).astype(np.float64)
    checks.append(("loss.focal", lambda t: focal_loss(t, edges, gamma=2.0), _t(rng, 1, 4, 4)))
    cfg = LossConfig(beta=0.6, gamma_focal=2.0, class_weights=wts)
    e_logits = _t(rng, 1, 4, 4)
    checks.append(
        ("loss.total", lambda t: total_loss((t, lab), (e_logits, edges), cfg), _t(rng, 3, 4, 4))
    )

    # embedding perceptron
    with using_dtype(np.float64):
        lin_a = Linear(6, 8, _rng())
        lin_b = Linear(8, 4, _rng())
    checks.append(("embedding.mlp", lambda t: (lin_b(tanh(lin_a(t))) ** 2.0).sum(), _t(rng, 2, 6)))

    return checks


def run_suite(step=1e-4):
    """Run every check; returns [(name, max_rel_err, passed)]."""
    results = []
    for name, fn, point in suite():
        err = grad_check(fn, point, step=step)
        results.append((name, err, err < THRESHOLD))
    return results
