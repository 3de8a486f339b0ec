import numpy as np


def finite_difference(f, params, key, idx, eps=1e-6):
    p = params[key]
    old = p[idx]
    p[idx] = old + eps
    a = f()
    p[idx] = old - eps
    b = f()
    p[idx] = old
    return (a - b) / (2 * eps)


def grad_check(f, params, grads, rng, per_tensor=4, floor=1e-7):
    """Worst relative error between analytic and central-difference gradients
    over a few random entries of every tensor."""
    worst = 0.0
    for key in sorted(params):
        shape = params[key].shape
        for _ in range(per_tensor):
            idx = tuple(int(rng.integers(s)) for s in shape)
            num = finite_difference(f, params, key, idx)
            ana = float(grads[key][idx])
            scale = max(abs(num), abs(ana))
            if scale > floor:
                worst = max(worst, abs(num - ana) / scale)
    return worst
