"""Dense numeric primitives, Adam, and the finite-difference gradient checker.

Everything trainable in this package routes its updates through
``adam_step`` and is validated by ``finite_diff_gradcheck``; gradients are
hand-derived per operation (the operator set is small and fixed), and the
checker is the safety net.
"""

from dataclasses import dataclass, field

import numpy as np

from . import accel
from .errors import DivergenceError, KgaxError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def xavier_init(shape, rng, dtype=np.float64):
    """Uniform draw in [-b, b] with b = sqrt(6 / (fan_in + fan_out)).

    For matrices fan_in/fan_out are the two trailing dims; a 1-D shape is
    treated as square fan. Deterministic for a given generator state.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s < 1 for s in shape):
        raise KgaxError(f"xavier_init needs positive dims, got {shape}")
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_in, fan_out = shape[-1], shape[-2]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def leaky_relu(x, slope):
    """x where x >= 0, slope * x elsewhere."""
    x = np.asarray(x)
    return np.where(x >= 0, x, slope * x)


def leaky_relu_grad(x, slope):
    """Elementwise derivative: 1 on the nonnegative branch, slope below."""
    x = np.asarray(x)
    return np.where(x >= 0, x.dtype.type(1), x.dtype.type(slope))


def stable_softmax(logits):
    """Softmax with max-subtraction; sums to 1 and is shift-invariant."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise KgaxError("stable_softmax: empty input")
    if not np.all(np.isfinite(logits)):
        raise KgaxError("stable_softmax: non-finite logits")
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def hadamard(a, b):
    """Elementwise product of two equal-shape vectors."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise KgaxError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def dot(a, b):
    """Inner product of two equal-shape vectors."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise KgaxError(f"dot shape mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


def affine(w, x):
    """y = W x. Columns of W must match len(x)."""
    w = np.asarray(w)
    x = np.asarray(x)
    if w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise KgaxError(f"affine shape mismatch: W {w.shape} vs x {x.shape}")
    return w @ x


def affine_grad(w, x, gy):
    """Gradients of y = W x for upstream gy: (dW, dx) = (gy x^T, W^T gy)."""
    return np.outer(gy, x), w.T @ gy


@dataclass
class AdamState:
    """First/second moment arrays and step counters, one slot per parameter."""

    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)

    def slot(self, name, param):
        if name not in self.m:
            self.m[name] = np.zeros_like(param)
            self.v[name] = np.zeros_like(param)
            self.t[name] = 0
        return self.m[name], self.v[name]


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update over a dict of named parameter arrays.

    Mutates params and state in place; parameters without a gradient entry
    are left untouched and their step counter does not advance.
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient for parameter {name!r}")
        param = params[name]
        m, v = state.slot(name, param)
        state.t[name] += 1
        accel.adam_update(param, grad, m, v, state.t[name],
                          lr, state.beta1, state.beta2, state.eps)


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    argmax_coord: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    tolerance: float
    checks: list
    passed: bool
    max_rel_err: float
    worst_param: str

    def summary_lines(self):
        lines = []
        for c in self.checks:
            lines.append(
                f"{c.name}: max rel err {c.max_rel_err:.3e} at {c.argmax_coord} "
                f"(analytic {c.analytic:.6e}, numeric {c.numeric:.6e})"
            )
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(
            f"{verdict}: max rel err {self.max_rel_err:.3e} "
            f"(worst {self.worst_param}, tol {self.tolerance:.1e})"
        )
        return lines


def finite_diff_gradcheck(loss_fn, params, h=1e-5, tol=1e-5):
    """Compare analytic gradients against central differences, in float64.

    loss_fn(params) must return (loss, grads) where grads maps parameter
    names to arrays shaped like the parameters. Relative error per
    coordinate is |a - n| / max(1e-12, |a| + |n|).
    """
    params64 = {k: np.asarray(v, dtype=np.float64).copy() for k, v in params.items()}
    loss, grads = loss_fn(params64)
    if not np.isfinite(loss):
        raise DivergenceError("gradcheck: loss is non-finite at the base point")

    checks = []
    for name in sorted(params64):
        theta = params64[name]
        analytic = np.asarray(grads.get(name, np.zeros_like(theta)), dtype=np.float64)
        numeric = np.zeros_like(theta)
        flat = theta.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + h
            lo_hi, _ = loss_fn(params64)
            flat[i] = orig - h
            lo_lo, _ = loss_fn(params64)
            flat[i] = orig
            if not (np.isfinite(lo_hi) and np.isfinite(lo_lo)):
                raise DivergenceError(
                    f"gradcheck: non-finite loss probing {name}[{i}]"
                )
            num_flat[i] = (lo_hi - lo_lo) / (2.0 * h)
        denom = np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))
        rel = np.abs(analytic - numeric) / denom
        flat_arg = int(np.argmax(rel))
        coord = np.unravel_index(flat_arg, theta.shape)
        checks.append(ParamCheck(
            name=name,
            max_rel_err=float(rel.reshape(-1)[flat_arg]),
            argmax_coord=tuple(int(c) for c in coord),
            analytic=float(analytic.reshape(-1)[flat_arg]),
            numeric=float(numeric.reshape(-1)[flat_arg]),
        ))

    worst = max(checks, key=lambda c: c.max_rel_err)
    return GradCheckReport(
        tolerance=tol,
        checks=checks,
        passed=worst.max_rel_err < tol,
        max_rel_err=worst.max_rel_err,
        worst_param=worst.name,
    )


def softplus(x):
    """log(1 + exp(x)) computed without overflow; -ln(sigmoid(-x))."""
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
