"""Gradient verification suites: per-primitive finite-difference checks
and an end-to-end check of the full model loss."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, finite_diff_check
from .config import RunConfig, make_datasets
from .encoders import EncoderConfig
from .fusion import AblationSwitches, FusionConfig, Model, ModelConfig
from .text import PromptTemplate, TextConfig
from .trainer import cross_entropy

PRIMITIVE_EPS = 1e-5
PRIMITIVE_TOL = 1e-6
END_TO_END_EPS = 1e-4
END_TO_END_TOL = 1e-3


def _rand(rng, *shape):
    return Tensor(rng.uniform(-1.0, 1.0, size=shape), requires_grad=True)


def _weighted_sum(x: Tensor, w: np.ndarray) -> Tensor:
    return ad.sum_all(ad.mul(x, Tensor(w)))


def primitive_checks(seed: int = 0) -> dict[str, float]:
    """Max relative finite-difference error for every differentiable
    primitive on random inputs in [-1, 1]."""
    rng = np.random.default_rng(seed)
    results: dict[str, float] = {}

    a, b = _rand(rng, 3, 4), _rand(rng, 4, 2)
    w = rng.uniform(-1, 1, (3, 2))
    results["matmul"] = finite_diff_check(
        lambda: _weighted_sum(ad.matmul(a, b), w), [a, b], PRIMITIVE_EPS)

    x, y = _rand(rng, 3, 4), _rand(rng, 3, 4)
    w = rng.uniform(-1, 1, (3, 4))
    results["add"] = finite_diff_check(
        lambda: _weighted_sum(ad.add(x, y), w), [x, y], PRIMITIVE_EPS)
    results["mul"] = finite_diff_check(
        lambda: _weighted_sum(ad.mul(x, y), w), [x, y], PRIMITIVE_EPS)
    results["scale"] = finite_diff_check(
        lambda: _weighted_sum(ad.scale(x, -1.7), w), [x], PRIMITIVE_EPS)
    results["transpose"] = finite_diff_check(
        lambda: _weighted_sum(ad.transpose(x), w.T), [x], PRIMITIVE_EPS)

    row = Tensor(rng.uniform(-1, 1, (1, 4)), requires_grad=True)
    results["add_row_broadcast"] = finite_diff_check(
        lambda: _weighted_sum(ad.add(x, row), w), [x, row], PRIMITIVE_EPS)

    # keep relu inputs away from its kink
    xr = Tensor(np.where(np.abs(x.data) < 0.2, 0.5, x.data), requires_grad=True)
    results["relu"] = finite_diff_check(
        lambda: _weighted_sum(ad.relu(xr), w), [xr], PRIMITIVE_EPS)
    results["gelu"] = finite_diff_check(
        lambda: _weighted_sum(ad.gelu(x), w), [x], PRIMITIVE_EPS)

    results["softmax_rows"] = finite_diff_check(
        lambda: _weighted_sum(ad.softmax_rows(x), w), [x], PRIMITIVE_EPS)
    w1 = rng.uniform(-1, 1, (3, 1))
    results["logsumexp_rows"] = finite_diff_check(
        lambda: _weighted_sum(ad.logsumexp_rows(x), w1), [x], PRIMITIVE_EPS)

    gain = Tensor(rng.uniform(0.5, 1.5, (1, 4)), requires_grad=True)
    bias = _rand(rng, 1, 4)
    results["layer_norm"] = finite_diff_check(
        lambda: _weighted_sum(ad.layer_norm(x, gain, bias), w),
        [x, gain, bias], PRIMITIVE_EPS)

    w6 = rng.uniform(-1, 1, (6, 4))
    results["concat_rows"] = finite_diff_check(
        lambda: _weighted_sum(ad.concat_rows(x, y), w6), [x, y], PRIMITIVE_EPS)
    results["slice_rows"] = finite_diff_check(
        lambda: _weighted_sum(ad.slice_rows(x, 1, 3), w[:2]), [x], PRIMITIVE_EPS)
    w8 = rng.uniform(-1, 1, (3, 8))
    results["concat_cols"] = finite_diff_check(
        lambda: _weighted_sum(ad.concat_cols(x, y), w8), [x, y], PRIMITIVE_EPS)
    results["slice_cols"] = finite_diff_check(
        lambda: _weighted_sum(ad.slice_cols(x, 1, 3), w[:, :2].copy()),
        [x], PRIMITIVE_EPS)

    results["mean_rows"] = finite_diff_check(
        lambda: _weighted_sum(ad.mean_rows(x), w[:1]), [x], PRIMITIVE_EPS)
    results["sum_all"] = finite_diff_check(
        lambda: ad.sum_all(ad.mul(x, x)), [x], PRIMITIVE_EPS)

    table = _rand(rng, 5, 4)
    results["take_rows"] = finite_diff_check(
        lambda: _weighted_sum(ad.take_rows(table, [0, 2, 2]), w), [table],
        PRIMITIVE_EPS)

    q, k, v = _rand(rng, 2, 4), _rand(rng, 3, 4), _rand(rng, 3, 5)
    wq = rng.uniform(-1, 1, (2, 5))
    results["scaled_dot_attention"] = finite_diff_check(
        lambda: _weighted_sum(ad.scaled_dot_attention(q, k, v), wq),
        [q, k, v], PRIMITIVE_EPS)
    return results


def gradcheck_model_config() -> ModelConfig:
    """Small but fully featured config so end-to-end checks stay fast."""
    enc = dict(image_size=16, patch_size=8, dim=32, depth=1, heads=4,
               mlp_ratio=2.0)
    return ModelConfig(
        rgb=EncoderConfig(frozen=True, **enc),
        event=EncoderConfig(frozen=True, **enc),
        text=TextConfig(dim=32, depth=1, heads=4, mlp_ratio=2.0, max_len=8),
        fusion=FusionConfig(dim=32, depth=1, heads=4, mlp_ratio=2.0),
        labels=["square moving right", "square moving left",
                "disc moving up", "disc moving down"],
        template=PromptTemplate("The action of the human is {}"),
    )


def end_to_end_check(seed: int = 0, n_params: int = 32,
                     coords_per_param: int = 2) -> tuple[float, list[str]]:
    """Finite-difference check of the full model loss on sampled
    parameters spanning every sub-network.

    Returns (max relative error, names of the checked parameters)."""
    from .config import load_config

    cfg = load_config(None, {
        "data.samples_per_class": 1,
        "data.frames": 2,
        "data.resolution": [16, 16],
        "rgb_encoder.image_size": 16, "rgb_encoder.dim": 32,
        "rgb_encoder.depth": 1, "rgb_encoder.mlp_ratio": 2.0,
        "event_encoder.image_size": 16, "event_encoder.dim": 32,
        "event_encoder.depth": 1, "event_encoder.mlp_ratio": 2.0,
        "text.dim": 32, "text.mlp_ratio": 2.0, "text.max_len": 8,
        "fusion.dim": 32, "fusion.mlp_ratio": 2.0,
        "seed": seed,
    })
    train, _ = make_datasets(cfg)
    sample = train[0]
    model = Model(cfg.model_config(), seed=cfg.seed)
    switches = AblationSwitches()

    rng = np.random.default_rng(seed)
    # free_tokens only enter the graph with sci off; skip them here
    names = [n for n in model.store.names() if n != "fusion.free_tokens"]
    groups: dict[str, list[str]] = {}
    for n in names:
        groups.setdefault(n.split(".")[0], []).append(n)
    # one guaranteed pick per sub-network, the rest uniform
    chosen: list[str] = [g[rng.integers(len(g))] for g in groups.values()]
    pool = [n for n in names if n not in chosen]
    extra = rng.choice(len(pool), size=max(0, n_params - len(chosen)),
                       replace=False)
    chosen.extend(pool[i] for i in extra)

    def loss_fn():
        logits = model.forward(sample, switches)
        return cross_entropy(logits, sample.label)

    err = finite_diff_check(loss_fn, [model.store[n] for n in chosen],
                            eps=END_TO_END_EPS, rng=rng,
                            max_coords_per_param=coords_per_param)
    return err, chosen


def run_gradcheck(seed: int = 0, inject_fault: bool = False) -> dict:
    """Full verification gate; returns a report dict with per-primitive
    errors, the end-to-end error, and an overall pass flag."""
    ad.set_backward_fault(inject_fault)
    try:
        prim = primitive_checks(seed)
        e2e_err, checked = end_to_end_check(seed)
    finally:
        ad.set_backward_fault(False)
    failures = [name for name, err in prim.items() if err >= PRIMITIVE_TOL]
    if e2e_err >= END_TO_END_TOL:
        failures.append("end_to_end")
    return {
        "primitives": prim,
        "primitive_tolerance": PRIMITIVE_TOL,
        "end_to_end_error": e2e_err,
        "end_to_end_tolerance": END_TO_END_TOL,
        "checked_parameters": checked,
        "failures": failures,
        "passed": not failures,
    }
