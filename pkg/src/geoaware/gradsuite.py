"""Aggregated gradient verification: every differentiable primitive and the
policy composites, each checked against 64-bit central finite differences at
tiny dimensions so the whole suite stays well under a minute.

Each check returns the worst relative error between reverse-mode and numeric
gradients; a component passes when that error is at most the suite tolerance.
"""

from __future__ import annotations

import numpy as np

from geoaware.backbones import GeoStubConfig, init_pixel_params, pixel_features
from geoaware.numerics.gradcheck import grad_check
from geoaware.numerics.nnops import (
    adaptive_avg_pool1d,
    conv1d,
    conv2d,
    cross_entropy,
    embedding_lookup,
    layer_norm,
    mse_loss,
    relu,
    softmax,
)
from geoaware.numerics.params import ParamStore
from geoaware.numerics.tensor import Tensor, concat
from geoaware.policy import (
    PolicyConfig,
    build_token_sequence,
    init_policy_params,
    mlp_head,
    policy_forward,
    project_vision,
    trunk_forward,
    vqbet_train_loss,
)

SUITE_TOLERANCE = 1e-4
SUITE_STEP = 1e-4

_VOCAB = ("lift the probe", "park the probe")


def _away_from_zero(x, margin=0.05):
    """Shift entries off the relu kink so finite differences stay one-sided."""
    return x + np.sign(x) * margin + (x == 0) * margin


def _check_elementwise(step):
    rng = np.random.default_rng(101)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))

    def f(leaves):
        x, y = leaves
        return ((x + y) * (x - y) * x + x * 0.5).sum()

    return grad_check(f, [a, b], step=step)


def _check_matmul(step):
    rng = np.random.default_rng(102)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    w = rng.normal(size=(3, 2))

    def f(leaves):
        x, y = leaves
        return ((x @ y) * Tensor(w)).sum()

    return grad_check(f, [a, b], step=step)


def _check_shape_ops(step):
    rng = np.random.default_rng(103)
    a = rng.normal(size=(3, 4))
    w = rng.normal(size=(2, 12))

    def f(leaves):
        (x,) = leaves
        stacked = concat([x.transpose(1, 0).reshape(1, 12), x.reshape(1, 12)], axis=0)
        return (stacked * Tensor(w)).sum() + (x[1:, :2]).mean()

    return grad_check(f, [a], step=step)


def _check_relu(step):
    rng = np.random.default_rng(104)
    a = _away_from_zero(rng.normal(size=(3, 5)))
    w = rng.normal(size=(3, 5))

    def f(leaves):
        return (relu(leaves[0]) * Tensor(w)).sum()

    return grad_check(f, [a], step=step)


def _check_softmax(step):
    rng = np.random.default_rng(105)
    a = rng.normal(size=(2, 6))
    w = rng.normal(size=(2, 6))

    def f(leaves):
        return (softmax(leaves[0], axis=-1) * Tensor(w)).sum()

    return grad_check(f, [a], step=step)


def _check_layer_norm(step):
    rng = np.random.default_rng(106)
    x = rng.normal(size=(2, 3, 6))
    gamma = rng.normal(size=6) * 0.5 + 1.0
    beta = rng.normal(size=6) * 0.1
    w = rng.normal(size=(2, 3, 6))

    def f(leaves):
        h, g, b = leaves
        return (layer_norm(h, g, b) * Tensor(w)).sum()

    return grad_check(f, [x, gamma, beta], step=step)


def _check_conv1d(step):
    rng = np.random.default_rng(107)
    x = rng.normal(size=(2, 3, 7))
    k = rng.normal(size=(4, 3, 3)) * 0.5
    b = rng.normal(size=4) * 0.1
    w = rng.normal(size=(2, 4, 7))

    def f(leaves):
        h, kk, bb = leaves
        return (conv1d(h, kk, bb, stride=1, padding=1) * Tensor(w)).sum()

    return grad_check(f, [x, k, b], step=step)


def _check_conv2d(step):
    rng = np.random.default_rng(108)
    x = rng.normal(size=(2, 3, 6, 6))
    k = rng.normal(size=(4, 3, 3, 3)) * 0.5
    b = rng.normal(size=4) * 0.1
    w = rng.normal(size=(2, 4, 3, 3))

    def f(leaves):
        h, kk, bb = leaves
        return (conv2d(h, kk, bb, stride=2, padding=1) * Tensor(w)).sum()

    return grad_check(f, [x, k, b], step=step)


def _check_adaptive_pool(step):
    rng = np.random.default_rng(109)
    x = rng.normal(size=(2, 3, 7))
    w = rng.normal(size=(2, 3, 2))

    def f(leaves):
        return (adaptive_avg_pool1d(leaves[0], 2) * Tensor(w)).sum()

    return grad_check(f, [x], step=step)


def _check_embedding(step):
    rng = np.random.default_rng(110)
    table = rng.normal(size=(5, 4))
    idx = np.array([0, 3, 3, 1])
    w = rng.normal(size=(4, 4))

    def f(leaves):
        return (embedding_lookup(leaves[0], idx) * Tensor(w)).sum()

    return grad_check(f, [table], step=step)


def _check_mse(step):
    rng = np.random.default_rng(111)
    pred = rng.normal(size=(3, 4))
    target = rng.normal(size=(3, 4))

    def f(leaves):
        return mse_loss(leaves[0], Tensor(target))

    return grad_check(f, [pred], step=step)


def _check_cross_entropy(step):
    rng = np.random.default_rng(112)
    logits = rng.normal(size=(4, 5))
    labels = np.array([1, 0, 4, 2])

    def f(leaves):
        return cross_entropy(leaves[0], labels)

    return grad_check(f, [logits], step=step)


def _tiny_policy(head_kind="mlp"):
    cfg = PolicyConfig(
        repr_dim=8, conv_dim=4, hidden_dim=8, lang_embed_dim=4, trunk_heads=2,
        select_mode="all", select_count=3, head_kind=head_kind,
        vq_codes=5, vq_dim=3, vq_hidden=6,
    )
    geo = GeoStubConfig(num_layers=3, feature_dim=4, num_keypoints=5)
    store = ParamStore()
    init_policy_params(store, cfg, _VOCAB, seed=5, geo=geo, dtype=np.float64)
    return cfg, geo, store


def _check_project_vision(step):
    cfg, geo, store = _tiny_policy()
    rng = np.random.default_rng(113)
    layers = [rng.normal(size=(2, geo.num_keypoints, geo.feature_dim)) for _ in range(3)]
    names = ["vision.conv0.w", "vision.conv1.w", "vision.mlp.1.w", "vision.mlp.2.b"]
    w = rng.normal(size=(2, cfg.repr_dim))

    def f(leaves):
        for name, leaf in zip(names, leaves[: len(names)]):
            store.replace(name, leaf)
        lts = [leaves[len(names) + i] for i in range(3)]
        return (project_vision(lts, store, cfg) * Tensor(w)).sum()

    inputs = [store[n].values.copy() for n in names] + layers
    return grad_check(f, inputs, step=step)


def _check_pixel_features(step):
    # Seed chosen so every relu preactivation sits at least 1.2e-3 from the
    # kink; a 1e-4 probe can then never cross one and flip a branch.
    store = ParamStore()
    rng = np.random.default_rng(135)
    init_pixel_params(store, rng, lang_embed_dim=4, repr_dim=8, dtype=np.float64)
    images = rng.uniform(0.0, 1.0, size=(2, 3, 8, 8))
    lang = rng.normal(size=(2, 4))
    names = ["pixel.conv1.w", "pixel.film.scale.w", "pixel.head.w2"]
    w = rng.normal(size=(2, 8))

    def f(leaves):
        for name, leaf in zip(names, leaves[: len(names)]):
            store.replace(name, leaf)
        return (pixel_features(leaves[len(names)], leaves[len(names) + 1], store) * Tensor(w)).sum()

    inputs = [store[n].values.copy() for n in names] + [images, lang]
    return grad_check(f, inputs, step=step)


def _check_trunk(step):
    cfg, _, store = _tiny_policy()
    rng = np.random.default_rng(115)
    b = 2
    zs = [rng.normal(size=(b, cfg.repr_dim)) for _ in range(cfg.views + 2)]
    names = ["trunk0.attn.q.w", "trunk0.ff.1.w", "trunk1.attn.v.w", "trunk1.ln2.g", "token.action"]
    w = rng.normal(size=(b, cfg.hidden_dim))

    def f(leaves):
        for name, leaf in zip(names, leaves[: len(names)]):
            store.replace(name, leaf)
        toks = leaves[len(names):]
        seq = build_token_sequence(list(toks[: cfg.views]), toks[cfg.views], toks[cfg.views + 1], store, cfg)
        return (trunk_forward(seq, store, cfg) * Tensor(w)).sum()

    inputs = [store[n].values.copy() for n in names] + zs
    return grad_check(f, inputs, step=step)


def _check_mlp_head(step):
    cfg, _, store = _tiny_policy()
    rng = np.random.default_rng(116)
    h = rng.normal(size=(2, cfg.hidden_dim))
    target = rng.normal(size=(2, cfg.chunk_len, 7))
    names = ["head.1.w", "head.2.b"]

    def f(leaves):
        for name, leaf in zip(names, leaves[: len(names)]):
            store.replace(name, leaf)
        return mse_loss(mlp_head(leaves[len(names)], store, cfg), Tensor(target))

    inputs = [store[n].values.copy() for n in names] + [h]
    return grad_check(f, inputs, step=step)


def _check_vqbet_head(step):
    # Finite differences can only validate surfaces whose backward path is the
    # true derivative.  The autoencoder pretraining objective is excluded: its
    # straight-through estimator routes recon gradient to the encoder as if
    # quantization were the identity, which deliberately differs from the
    # piecewise-constant derivative a probe measures (that objective is
    # exercised functionally by the codebook-training tests instead).  The
    # codebook is likewise not a leaf here because the head objective detaches
    # it on purpose.  The encoder weights stay as a leaf to pin the intended
    # zero gradient: both sides must agree on exactly zero, so a dropped
    # detach shows up.  Codes are spread out so no probe crosses a
    # nearest-code boundary.
    cfg, _, store = _tiny_policy(head_kind="vqbet")
    rng = np.random.default_rng(117)
    store.replace("vq.codes", rng.normal(size=(cfg.vq_codes, cfg.vq_dim)) * 2.0)
    h = rng.normal(size=(2, cfg.hidden_dim))
    actions = rng.normal(size=(2, cfg.act_dim)) * 0.5
    names = ["vq.enc.1.w", "vq.dec.2.w", "vq.cls.w", "vq.offset.1.w"]

    def f(leaves):
        for name, leaf in zip(names, leaves[: len(names)]):
            store.replace(name, leaf)
        loss, _ = vqbet_train_loss(leaves[len(names)], leaves[len(names) + 1], store, cfg, codebook_trained=True)
        return loss

    inputs = [store[n].values.copy() for n in names] + [h, actions]
    return grad_check(f, inputs, step=step)


def _check_end_to_end(step):
    cfg, geo, store = _tiny_policy()
    rng = np.random.default_rng(118)
    vision = rng.normal(size=(2, cfg.views, geo.num_layers, geo.num_keypoints, geo.feature_dim))
    proprio = rng.normal(size=(2, 7))
    instructions = [_VOCAB[0], _VOCAB[1]]
    target = rng.normal(size=(2, cfg.chunk_len, 7))
    names = [
        "vision.conv0.w", "vision.mlp.2.w", "lang.mlp.1.w", "proprio.2.w",
        "trunk0.attn.k.w", "trunk1.ff.2.w", "head.2.w", "token.pos",
    ]

    def f(leaves):
        for name, leaf in zip(names, leaves):
            store.replace(name, leaf)
        out = policy_forward(vision, instructions, Tensor(proprio), store, cfg, _VOCAB, geo=geo)
        return mse_loss(out, Tensor(target))

    inputs = [store[n].values.copy() for n in names]
    return grad_check(f, inputs, step=step)


_CHECKS = [
    ("add_sub_mul", _check_elementwise),
    ("matmul", _check_matmul),
    ("reshape_transpose_slice_concat", _check_shape_ops),
    ("relu", _check_relu),
    ("softmax", _check_softmax),
    ("layer_norm", _check_layer_norm),
    ("conv1d", _check_conv1d),
    ("conv2d", _check_conv2d),
    ("adaptive_avg_pool1d", _check_adaptive_pool),
    ("embedding_lookup", _check_embedding),
    ("mse_loss", _check_mse),
    ("cross_entropy", _check_cross_entropy),
    ("project_vision", _check_project_vision),
    ("pixel_features", _check_pixel_features),
    ("trunk", _check_trunk),
    ("mlp_head", _check_mlp_head),
    ("vqbet_head", _check_vqbet_head),
    ("end_to_end", _check_end_to_end),
]


def run_gradcheck_suite(step=SUITE_STEP, tolerance=SUITE_TOLERANCE):
    """Run every check; returns a list of result records in execution order."""
    records = []
    for name, check in _CHECKS:
        err = float(check(step))
        records.append({"component": name, "max_rel_err": err, "tolerance": tolerance, "passed": err <= tolerance})
    return records


def suite_passed(records):
    return all(r["passed"] for r in records)
