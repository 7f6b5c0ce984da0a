"""Concrete (Gumbel-Softmax) sampling primitives.

A concrete sample with location parameters alpha > 0 and temperature
tau > 0 is

    x_k = exp((log alpha_k + G_k) / tau) / sum_j exp((log alpha_j + G_j) / tau)

with iid standard Gumbel noise G = -log(-log U).  Uniform draws are
clamped to [1e-12, 1 - 1e-12] before the double log, and the softmax
subtracts the row maximum before exponentiating, so samples are finite
for any tau >= 0.01 and alpha within [1e-6, 1e6].

Rounding a sample to its largest coordinate recovers an exact categorical
draw with probabilities alpha / ||alpha||_1, at any temperature.  Excluded
categories are masked by adding -1e9 to their logit, which leaves them
with zero probability mass.
"""

import numpy as np

U_CLAMP = 1e-12
MASK_LOGIT = -1e9


def sample_gumbel(rng, size=None):
    """Standard Gumbel draws via the clamped inverse CDF."""
    u = np.clip(rng.uniform(size=size), U_CLAMP, 1.0 - U_CLAMP)
    return -np.log(-np.log(u))


def _validate_alpha(alpha):
    alpha = np.asarray(alpha, dtype=float)
    if alpha.size == 0:
        raise ValueError("alpha must be nonempty")
    if not np.all(alpha > 0):
        raise ValueError("alpha must be strictly positive")
    return alpha


def concrete_sample(alpha, tau, rng):
    """One concrete sample on the simplex for a 1-d alpha vector."""
    alpha = _validate_alpha(alpha)
    if tau <= 0:
        raise ValueError("temperature must be positive")
    logits = (np.log(alpha) + sample_gumbel(rng, alpha.shape)) / tau
    logits -= logits.max()
    e = np.exp(logits)
    return e / e.sum()


def round_onehot(x):
    """Index of the largest coordinate; first index wins ties."""
    x = np.asarray(x)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("expected a nonempty 1-d sample")
    return int(np.argmax(x))


def categorical_sample(alpha, rng):
    """Exact categorical draw with probabilities alpha / sum(alpha).

    Equivalent in law to round_onehot(concrete_sample(...)) at any
    temperature, but needs one uniform instead of a Gumbel per category.
    """
    alpha = _validate_alpha(alpha)
    cum = np.cumsum(alpha)
    r = rng.uniform() * cum[-1]
    return int(min(np.searchsorted(cum, r, side="right"), alpha.size - 1))


def concrete_rows_given(alpha, valid, tau, g):
    """Row-wise masked concrete transform for pre-drawn Gumbel noise g.

    alpha, valid, g: (R, P); every row needs at least one valid entry
    with alpha > 0 there.  Masked entries get -1e9 added to their logit.
    Returns x whose rows sum to 1 with zeros on masked entries.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if not valid.any(axis=1).all():
        raise ValueError("every row needs at least one valid category")
    safe = np.log(np.maximum(alpha, np.finfo(float).tiny))
    logits = (np.where(valid, safe, MASK_LOGIT) + g) / tau
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    e[~valid] = 0.0
    return e / e.sum(axis=1, keepdims=True)


def concrete_rows(alpha, valid, tau, rng):
    """Row-wise masked concrete samples.

    Gumbel noise is drawn for the full (R, P) block in one call
    (row-major).  Returns (x, gumbels); see concrete_rows_given for the
    transform itself.
    """
    g = sample_gumbel(rng, alpha.shape)
    return concrete_rows_given(alpha, valid, tau, g), g


def categorical_rows(alpha, valid, rng):
    """Row-wise masked categorical draws; one uniform per row.

    Never returns an excluded index: masked entries carry zero mass and
    the rare boundary draw is snapped to the first valid category.
    """
    if not valid.any(axis=1).all():
        raise ValueError("every row needs at least one valid category")
    p = np.where(valid, alpha, 0.0)
    cum = np.cumsum(p, axis=1)
    r = rng.uniform(size=alpha.shape[0]) * cum[:, -1]
    idx = np.minimum(np.sum(cum < r[:, None], axis=1), alpha.shape[1] - 1)
    rows = np.arange(alpha.shape[0])
    bad = ~valid[rows, idx]
    if bad.any():
        idx[bad] = np.argmax(valid[bad], axis=1)
    return idx
