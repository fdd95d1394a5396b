"""Central-difference comparison for every parameter tensor of the reference CNN."""

import numpy as np

from mixaug import network
from mixaug.numerics import Rng, finite_diff_grad

FLOOR = 1e-6


def max_rel_error(analytic, numeric):
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FLOOR)
    return float(np.max(np.abs(analytic - numeric) / scale))


def mixaugment_objective(mb, mode, rate, mask_seed):
    """Loss as a function of params; reseeding replays identical dropout masks."""

    def f(params):
        rng = Rng(mask_seed)
        tv = network.forward(params, mb.virtual.images, mode, rate, rng)
        ti = network.forward(params, mb.real_i.images, mode, rate, rng)
        tj = network.forward(params, mb.real_j.images, mode, rate, rng)
        return network.mixaugment_loss_sum(tv.probs, ti.probs, tj.probs, mb.real_i.labels, mb.real_j.labels, mb.lam)

    return f


def check_all(params, objective, grads, eps=1e-5):
    errors = {}
    for name in network.PARAM_NAMES:
        numeric = finite_diff_grad(lambda t: objective(params.like({**params.tensors, name: t})), params[name], eps)
        errors[name] = max_rel_error(grads[name], numeric)
    return errors
