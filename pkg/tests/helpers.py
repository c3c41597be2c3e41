"""Shared independent oracles for the test suite.

Everything in here is deliberately written the slow, obvious way (explicit
loops, brute-force enumeration) so it stays independent of the library code
paths it checks.
"""

import numpy as np

from dualvae import tensor as T


def finite_difference(loss_fn, params, h=1e-6):
    """Central-difference gradient of ``loss_fn()`` wrt each Parameter.

    ``loss_fn`` must be a zero-argument callable returning a float and
    reading the parameter values at call time.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn()
            flat[k] = orig - h
            down = loss_fn()
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, zero_floor=1e-7, zero_atol=1e-8):
    """Max relative error, treating near-zero pairs with an absolute check."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=np.float64)
        n = np.asarray(n, dtype=np.float64)
        denom = np.maximum(np.abs(a), np.abs(n))
        big = denom > zero_floor
        if np.any(big):
            worst = max(worst, float((np.abs(a - n)[big] / denom[big]).max()))
        small = ~big
        if np.any(small):
            assert float(np.abs(a - n)[small].max()) < zero_atol, "near-zero gradient mismatch"
    return worst


def tape_grads(build_loss, params):
    """Analytic gradients of a tape-built scalar loss wrt the parameters."""
    for p in params:
        p.zero_grad()
    tape = T.Tape()
    loss = build_loss(tape)
    tape.backward(loss)
    return [p.grad.copy() for p in params]
