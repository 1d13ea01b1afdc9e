"""Finite-difference verification of every differentiable op, block and a tiny model."""

import numpy as np

from . import autograd as ag
from .autograd import Tensor, finite_diff_check
from .layers import (LayerSpec, init_params, res_block_forward, sol_forward, sor_block_forward,
                     upsampler_forward)
from .models import ModelSpec, build_model, model_forward

TOLERANCE = 1e-3
# perturbed evaluations run in float64, so a small step keeps the truncation
# error of the central difference (and the chance of straddling a relu kink)
# negligible
EPS = 1e-5


def _uniform(rng, shape, lo=-0.9, hi=0.9):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _away_from_zero(rng, shape, margin=0.05):
    mag = rng.uniform(margin, 0.9, size=shape)
    return Tensor(mag * rng.choice([-1.0, 1.0], size=shape), requires_grad=True)


def _probe(rng, shape):
    return rng.standard_normal(shape)


def _params_of(*layer_params):
    return [t for p in layer_params for _, t in p.tensors()]


def _check_layer_fn(fwd, x, params, rng):
    r = _probe(rng, fwd().shape)
    return finite_diff_check(lambda: ag.weighted_sum(fwd(), r), [x] + params,
                             eps=EPS, rng=rng)


def _item_conv2d(rng):
    x = _uniform(rng, (1, 2, 5, 5))
    w = _uniform(rng, (3, 2, 3, 3))
    b = _uniform(rng, (3,))
    return _check_layer_fn(lambda: ag.conv2d(x, w, b), x, [w, b], rng)


def _unary(op):
    def item(rng, op=op):
        x = _away_from_zero(rng, (1, 2, 4, 4)) if op is ag.relu else _uniform(rng, (1, 2, 4, 4))
        r = _probe(rng, x.shape)
        return finite_diff_check(lambda: ag.weighted_sum(op(x), r), [x], eps=EPS, rng=rng)
    return item


def _binary(op):
    def item(rng, op=op):
        x, y = _uniform(rng, (1, 2, 3, 3)), _uniform(rng, (1, 2, 3, 3))
        r = _probe(rng, x.shape)
        return finite_diff_check(lambda: ag.weighted_sum(op(x, y), r), [x, y], eps=EPS, rng=rng)
    return item


def _item_mean_abs(rng):
    x = _uniform(rng, (1, 2, 3, 3))
    # keep every |x - y| >= 0.1 so no perturbation crosses the kink
    y = Tensor(x.data + _away_from_zero(rng, x.shape, margin=0.1).data, requires_grad=True)
    return finite_diff_check(lambda: ag.mean_abs(x, y), [x, y], eps=EPS, rng=rng)


def _item_pixel_shuffle(rng):
    x = _uniform(rng, (1, 8, 3, 3))
    r = _probe(rng, (1, 2, 6, 6))
    return finite_diff_check(lambda: ag.weighted_sum(ag.pixel_shuffle(x, 2), r), [x],
                             eps=EPS, rng=rng)


def _item_sol(rng):
    x = _uniform(rng, (1, 2, 4, 4))
    p = init_params(LayerSpec("sol", 2, 3, q=3), rng)
    p.bias.data = rng.uniform(-0.5, 0.5, size=3).astype(np.float32)
    return _check_layer_fn(lambda: sol_forward(x, p), x, _params_of(p), rng)


def _item_res_block(rng):
    x = _uniform(rng, (1, 4, 5, 5))
    p1 = init_params(LayerSpec("conv", 4, 4), rng)
    p2 = init_params(LayerSpec("conv", 4, 4), rng)
    return _check_layer_fn(lambda: res_block_forward(x, p1, p2), x, _params_of(p1, p2), rng)


def _item_sor_block(rng):
    x = _uniform(rng, (1, 4, 5, 5))
    p1 = init_params(LayerSpec("sol", 4, 4, q=3), rng)
    p2 = init_params(LayerSpec("sol", 4, 4, q=3), rng)
    return _check_layer_fn(lambda: sor_block_forward(x, p1, p2), x, _params_of(p1, p2), rng)


def _upsampler(kind):
    def item(rng, kind=kind):
        x = _uniform(rng, (1, 2, 3, 3))
        q = 3 if kind == "sol" else 1
        stages = [init_params(LayerSpec(kind, 2, 8, q=q), rng) for _ in range(2)]
        return _check_layer_fn(lambda: upsampler_forward(x, 4, stages), x,
                               _params_of(*stages), rng)
    return item


def _model(spec):
    def item(rng, spec=spec):
        m = build_model(spec, rng)
        x = _uniform(rng, (1, 3, 8, 8))
        x.requires_grad = False
        r = _probe(rng, (1, 3, 8 * spec.scale, 8 * spec.scale))
        # cubic terms stacked through the SOL layers make float32 gradients of
        # an untrained model cancellation-limited, so this item runs in float64
        return finite_diff_check(lambda: ag.weighted_sum(model_forward(m, x), r),
                                 m.parameters(), eps=EPS, max_coords=4, rng=rng,
                                 precision="float64")
    return item


ITEMS = [
    ("conv2d", _item_conv2d),
    ("elem_pow(n=2)", _unary(lambda x: ag.elem_pow(x, 2))),
    ("elem_pow(n=3)", _unary(lambda x: ag.elem_pow(x, 3))),
    ("tanh", _unary(ag.tanh)),
    ("relu", _unary(ag.relu)),
    ("add", _binary(ag.add)),
    ("sub", _binary(ag.sub)),
    ("scalar_mul", _unary(lambda x: ag.scalar_mul(x, -1.7))),
    ("mean_abs", _item_mean_abs),
    ("pixel_shuffle", _item_pixel_shuffle),
    ("sol(q=3)", _item_sol),
    ("res_block", _item_res_block),
    ("sor_block", _item_sor_block),
    ("upsampler(conv, x4)", _upsampler("conv")),
    ("upsampler(sol, x4)", _upsampler("sol")),
    ("model(selfonn, 2 blocks, 8 ch, q=3)", _model(ModelSpec.selfonn(2, 8, q=3))),
    ("model(hybrid, 2 blocks, 1 sor, 8 ch, q=3)",
     _model(ModelSpec.hybrid(2, 8, q=3, num_sor=1))),
    ("model(edsr, 2 blocks, 8 ch)", _model(ModelSpec.edsr(2, 8))),
]


def run_gradcheck(seed=0, items=None):
    """Returns [(name, max relative error, passed)] for every check item."""
    results = []
    for name, fn in items or ITEMS:
        err = fn(np.random.default_rng([seed, len(results)]))
        results.append((name, err, err < TOLERANCE))
    return results


def format_results(results):
    width = max(len(n) for n, _, _ in results)
    lines = [f"{'item':<{width}}  max_rel_err  status"]
    for name, err, ok in results:
        lines.append(f"{name:<{width}}  {err:11.3e}  {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines)
