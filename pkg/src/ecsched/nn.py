"""Minimal dense-network machinery: forward, reverse mode, Adam, and a
finite-difference gradient checker.

Everything operates on plain numpy arrays.  A network is a list of
(weight, bias) layers; hidden activations are ReLU6, the output layer
applies either the identity or ReLU6 plus a small positive floor.
Backward passes consume the caches produced by the forward pass, so a
training step is forward -> external loss gradient -> backward -> Adam.

Subgradient convention: ReLU6 has derivative zero at both kinks (0 and
6).  The checker probes random coordinates with central differences and
compares against the analytic gradient; because the loss surface is
piecewise smooth, a probe whose two evaluations commit to different
discrete selections (reported by the loss callable) is discarded and
redrawn rather than compared.
"""

from dataclasses import dataclass, field

import numpy as np


def relu6(z):
    return np.minimum(np.maximum(z, 0.0), 6.0)


def relu6_grad(z):
    return ((z > 0.0) & (z < 6.0)).astype(float)


@dataclass
class Mlp:
    """Dense layers with shared hidden activation.

    output: "identity" or "relu6_eps" (ReLU6 plus eps, keeps outputs
    strictly positive).
    """

    weights: list
    biases: list
    output: str = "identity"
    eps: float = 1e-6

    @property
    def widths(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]


def init_mlp(widths, rng, output="identity", eps=1e-6):
    """Glorot-uniform weights, zero biases: W_ij ~ U(+-sqrt(6/(fi+fo)))."""
    if len(widths) < 2:
        raise ValueError("need an input and an output width")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights=weights, biases=biases, output=output, eps=eps)


def mlp_forward(mlp, x):
    """Batched forward pass; x is (rows, widths[0]).

    Returns (y, cache) where the cache holds each layer's input and
    preactivation for the backward pass.
    """
    inputs, preacts = [], []
    a = x
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        inputs.append(a)
        z = a @ w.T + b
        preacts.append(z)
        if i < last:
            a = relu6(z)
        elif mlp.output == "identity":
            a = z
        elif mlp.output == "relu6_eps":
            a = relu6(z) + mlp.eps
        else:
            raise ValueError(f"unknown output transform '{mlp.output}'")
    return a, (inputs, preacts)


def mlp_backward(mlp, cache, dy):
    """Gradients from a forward cache.

    Returns (dx, grads) with grads a flat list [dW0, db0, dW1, db1, ...]
    matching parameters(mlp).
    """
    inputs, preacts = cache
    last = len(mlp.weights) - 1
    grads = [None] * (2 * len(mlp.weights))
    d = dy
    for i in range(last, -1, -1):
        z = preacts[i]
        if i < last or mlp.output == "relu6_eps":
            d = d * relu6_grad(z)
        # identity output: d passes through
        grads[2 * i] = d.T @ inputs[i]
        grads[2 * i + 1] = d.sum(axis=0)
        d = d @ mlp.weights[i]
    return d, grads


def parameters(mlp):
    """Flat parameter list [W0, b0, W1, b1, ...]; arrays are live views."""
    out = []
    for w, b in zip(mlp.weights, mlp.biases):
        out.append(w)
        out.append(b)
    return out


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: list
    v: list
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state, params, grads):
    """One bias-corrected Adam update, applied to params in place."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("params/grads do not match the optimizer state")
    state.step += 1
    b1c = 1.0 - state.beta1 ** state.step
    b2c = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)
    return params, state


@dataclass
class GradCheckReport:
    """Per-coordinate comparison of analytic vs central-difference grads."""

    coords: list = field(default_factory=list)  # (param idx, flat idx, analytic, numeric, rel err)
    max_rel_err: float = 0.0
    n_kinks_skipped: int = 0

    def worst(self):
        if not self.coords:
            return None
        return max(self.coords, key=lambda c: c[4])


def grad_check(loss_and_grad, params, rng, n_coords=20, h=1e-5, max_retries=50):
    """Probe random parameter coordinates with central differences.

    loss_and_grad() must return (loss, grads, signature) at the current
    params; the signature captures every discrete selection the loss
    committed to.  A probe where the signatures at +h and -h differ
    straddles a kink and is redrawn (counted, not compared).  Relative
    error uses max(|analytic|, |numeric|) as denominator; coordinates
    where both magnitudes are below 1e-8 count as exact.
    """
    _, grads0, sig0 = loss_and_grad()
    sizes = [p.size for p in params]
    total = sum(sizes)
    report = GradCheckReport()
    picked = 0
    attempts = 0
    while picked < n_coords:
        if attempts > n_coords + max_retries:
            raise RuntimeError("too many kinked coordinates; loosen h or reseed")
        attempts += 1
        flat = int(rng.integers(total))
        pi = 0
        while flat >= sizes[pi]:
            flat -= sizes[pi]
            pi += 1
        p = params[pi].reshape(-1)
        old = p[flat]
        p[flat] = old + h
        lp, _, sig_plus = loss_and_grad()
        p[flat] = old - h
        lm, _, sig_minus = loss_and_grad()
        p[flat] = old
        if sig_plus != sig_minus or sig_plus != sig0:
            report.n_kinks_skipped += 1
            continue
        numeric = (lp - lm) / (2.0 * h)
        analytic = float(grads0[pi].reshape(-1)[flat])
        denom = max(abs(analytic), abs(numeric))
        rel = 0.0 if denom < 1e-8 else abs(analytic - numeric) / denom
        report.coords.append((pi, flat, analytic, numeric, rel))
        report.max_rel_err = max(report.max_rel_err, rel)
        picked += 1
    return report
