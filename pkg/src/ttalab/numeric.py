"""Dense numeric primitives: stable softmax, Shannon entropy, their analytic
gradients, a central finite-difference checker, and a single-sample
entropy-descent simulator.

Probability vectors live in ordinary float64 numpy arrays. Anything that
returns probabilities clamps entries into [EPS_PROB, 1 - EPS_PROB] and
renormalizes, so downstream logs never see zero.
"""

from __future__ import annotations

import io

import numpy as np

from .errors import InvalidInput

# Probability clamp applied before any log; keeps near-one-hot outputs finite.
EPS_PROB = 1e-12

# Central-difference step balancing truncation and round-off in float64.
FD_STEP = 1e-5


def _require_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite values")


def softmax(z):
    """Numerically stable softmax along the last axis.

    Accepts a single logit vector or a batch of rows. Entries of the result
    are clamped to [EPS_PROB, 1 - EPS_PROB] and renormalized so each row sums
    to one and every entry is strictly positive.
    """
    z = np.asarray(z, dtype=np.float64)
    _require_finite("logits", z)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    p = np.clip(p, EPS_PROB, 1.0 - EPS_PROB)
    return p / p.sum(axis=-1, keepdims=True)


def _validate_probs(p):
    p = np.asarray(p, dtype=np.float64)
    _require_finite("probabilities", p)
    if np.any(p < 0.0):
        raise InvalidInput("probabilities must be non-negative")
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise InvalidInput("probabilities must sum to 1 within 1e-9")
    return p


def entropy(p):
    """Shannon entropy H(p) = -sum_k p_k log p_k, natural log.

    Works row-wise on 2-D input. Entries are clamped at EPS_PROB inside the
    log so exact zeros are tolerated. 0 <= H <= log K.
    """
    p = _validate_probs(p)
    logp = np.log(np.maximum(p, EPS_PROB))
    return -np.sum(p * logp, axis=-1)


def binary_entropy_grad(p):
    """dH/dp for the two-class entropy H = -p log p - (1-p) log(1-p).

    Equals log((1-p)/p): zero at p = 0.5, negative for p > 0.5.
    """
    p = float(p)
    if not (EPS_PROB <= p <= 1.0 - EPS_PROB):
        raise InvalidInput(f"p={p} outside [{EPS_PROB}, {1.0 - EPS_PROB}]")
    return float(np.log((1.0 - p) / p))


def entropy_grad_logits(z):
    """Analytic gradient of H(softmax(z)) with respect to the logits z.

    With p = softmax(z) the gradient is -p_k (log p_k + H(p)). Components sum
    to zero, and the component of the argmax class is <= 0 (strictly negative
    off the uniform point), which is why entropy descent sharpens the largest
    probability.
    """
    p = softmax(z)
    logp = np.log(p)
    h = -np.sum(p * logp, axis=-1, keepdims=True)
    return -p * (logp + h)


def finite_diff_check(f, x, analytic, step=FD_STEP):
    """Max relative error between an analytic gradient and central differences.

    Args:
        f: scalar-valued function of a 1-D vector.
        x: point at which to check.
        analytic: claimed gradient of f at x, same shape as x.
        step: central-difference step; must be nonzero.

    Returns:
        max over coordinates of |analytic - fd| / max(1, |analytic|).
    """
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise InvalidInput("analytic gradient shape does not match x")
    if step == 0:
        raise InvalidInput("finite-difference step must be nonzero")
    worst = 0.0
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump.flat[i] = step
        hi = float(f(x + bump))
        lo = float(f(x - bump))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise InvalidInput("f returned a non-finite value near x")
        fd = (hi - lo) / (2.0 * step)
        a = analytic.flat[i]
        worst = max(worst, abs(a - fd) / max(1.0, abs(a)))
    return worst


def simulate_entropy_descent(p0, lr, steps):
    """Gradient descent on the logits of a single probability vector.

    Starts from z = log(p0) and iterates z <- z - lr * dH/dz, recording the
    softmax after every step. Row 0 of the returned (steps+1, K) trajectory
    is p0 itself. The probability of the initially-largest class never
    decreases along the trajectory.
    """
    p0 = _validate_probs(np.asarray(p0, dtype=np.float64))
    if p0.ndim != 1:
        raise InvalidInput("p0 must be a single probability vector")
    if lr <= 0:
        raise InvalidInput("learning rate must be positive")
    traj = np.empty((steps + 1, p0.size), dtype=np.float64)
    traj[0] = p0
    z = np.log(np.maximum(p0, EPS_PROB))
    for t in range(1, steps + 1):
        z = z - lr * entropy_grad_logits(z)
        traj[t] = softmax(z)
    return traj


def trajectory_csv(trajectory):
    """Render a descent trajectory as CSV with header step,p_1,...,p_K."""
    trajectory = np.asarray(trajectory, dtype=np.float64)
    buf = io.StringIO()
    k = trajectory.shape[1]
    buf.write("step," + ",".join(f"p_{i + 1}" for i in range(k)) + "\n")
    for step, row in enumerate(trajectory):
        buf.write(str(step) + "," + ",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()
