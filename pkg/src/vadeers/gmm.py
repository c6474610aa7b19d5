"""Semi-supervised Gaussian-mixture latent prior.

Components are diagonal Gaussians parameterized by free mixture logits
(softmax keeps the weights on the simplex), means, and log-scales
(positivity of the scales for free).  A point with an observed guiding
label is scored only under its labeled component; an unlabeled point is
scored under the full mixture, so with no labels anywhere the prior is
exactly the classical mixture density.

Density functions are written over the autodiff tensors so the same code
path serves evaluation and gradient-based training; the convenience
wrappers at the bottom return plain floats/arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ContractViolation
from .nnkernel import (
    Tensor,
    add,
    exp,
    logsumexp,
    mul,
    neg,
    reshape,
    square,
    sub,
    take_rows,
    tsum,
    wrap,
)

LOG_2PI = float(np.log(2.0 * np.pi))

UNLABELED = -1  # sentinel in label arrays; scalar API uses None


@dataclass(frozen=True)
class GmmParams:
    """Trainable mixture parameters.

    ``constrained=True`` fixes every component covariance to the identity:
    log_scales are zero and must never receive updates.
    """

    mixture_logits: np.ndarray  # (K,)
    means: np.ndarray           # (K, D)
    log_scales: np.ndarray      # (K, D)
    constrained: bool = False

    def __post_init__(self):
        logits = np.asarray(self.mixture_logits, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        log_scales = np.asarray(self.log_scales, dtype=np.float64)
        object.__setattr__(self, "mixture_logits", logits)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "log_scales", log_scales)
        if logits.ndim != 1 or means.ndim != 2 or log_scales.shape != means.shape:
            raise ContractViolation(
                f"inconsistent GMM shapes: logits {logits.shape}, "
                f"means {means.shape}, log_scales {log_scales.shape}"
            )
        if logits.shape[0] != means.shape[0]:
            raise ContractViolation(
                f"{logits.shape[0]} logits for {means.shape[0]} components"
            )
        for name, arr in (("mixture_logits", logits), ("means", means),
                          ("log_scales", log_scales)):
            if not np.all(np.isfinite(arr)):
                raise ContractViolation(f"{name} contains non-finite entries")
        if self.constrained and np.any(log_scales != 0.0):
            raise ContractViolation("constrained GMM requires log_scales == 0")

    @property
    def n_components(self) -> int:
        return self.mixture_logits.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.means.shape[1]

    def weights(self) -> np.ndarray:
        """Mixture weights via softmax of the logits."""
        z = self.mixture_logits - self.mixture_logits.max()
        e = np.exp(z)
        return e / e.sum()

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def with_arrays(self, mixture_logits, means, log_scales) -> "GmmParams":
        return replace(
            self,
            mixture_logits=mixture_logits,
            means=means,
            log_scales=log_scales,
        )


def init_gmm(
    n_components: int,
    latent_dim: int,
    rng: np.random.Generator,
    constrained: bool = False,
) -> GmmParams:
    """Zero logits and log-scales; means drawn from N(0, 4 I) so components
    start separated relative to unit posterior scales."""
    return GmmParams(
        mixture_logits=np.zeros(n_components),
        means=rng.normal(0.0, 2.0, size=(n_components, latent_dim)),
        log_scales=np.zeros((n_components, latent_dim)),
        constrained=constrained,
    )


# ---------------------------------------------------------------------------
# differentiable densities (tensor in, tensor out)
# ---------------------------------------------------------------------------

def component_log_densities(z, means, log_scales) -> Tensor:
    """Log density of every component at every row of ``z``.

    z: (n, D); means, log_scales: (K, D).  Returns (n, K).
    """
    z, means, log_scales = wrap(z), wrap(means), wrap(log_scales)
    n, d = z.shape
    k = means.shape[0]
    z3 = reshape(z, (n, 1, d))
    mu3 = reshape(means, (1, k, d))
    inv_scale3 = reshape(exp(neg(log_scales)), (1, k, d))
    scaled = mul(sub(z3, mu3), inv_scale3)
    quad = tsum(square(scaled), axis=2)               # (n, K)
    log_norm = add(
        mul(wrap(0.5 * d * LOG_2PI), wrap(np.ones((1, k)))),
        reshape(tsum(log_scales, axis=1), (1, k)),
    )
    return sub(mul(wrap(-0.5), quad), log_norm)


def log_weights(mixture_logits) -> Tensor:
    """Log softmax of the mixture logits."""
    logits = wrap(mixture_logits)
    return sub(logits, logsumexp(logits, axis=0, keepdims=True))


def mixture_log_density_rows(z, mixture_logits, means, log_scales) -> Tensor:
    """log sum_k pi_k N(z | mu_k, Sigma_k) per row, via log-sum-exp."""
    comp = component_log_densities(z, means, log_scales)
    lw = reshape(log_weights(mixture_logits), (1, comp.shape[1]))
    return logsumexp(add(comp, lw), axis=1)


def labeled_log_density_rows(z, labels, means, log_scales) -> Tensor:
    """Log density of each row under its labeled component only."""
    z = wrap(z)
    idx = np.asarray(labels, dtype=np.intp)
    mu = take_rows(means, idx)
    ls = take_rows(log_scales, idx)
    scaled = mul(sub(z, mu), exp(neg(ls)))
    quad = tsum(square(scaled), axis=1)
    log_norm = add(wrap(0.5 * z.shape[1] * LOG_2PI), tsum(ls, axis=1))
    return sub(mul(wrap(-0.5), quad), log_norm)


def semi_supervised_log_prior_rows(
    z, labels, mixture_logits, means, log_scales
) -> Tensor:
    """Row-wise log prior: labeled rows use their component, the rest the
    full mixture.  ``labels`` uses -1 for unlabeled."""
    labels = np.asarray(labels, dtype=np.int64)
    means_arr = wrap(means).data
    k = means_arr.shape[0]
    if labels.size and labels.max() >= k:
        raise IndexError(
            f"guiding label {labels.max()} out of range for {k} components"
        )
    mix = mixture_log_density_rows(z, mixture_logits, means, log_scales)
    if np.all(labels == UNLABELED):
        return mix
    safe = np.where(labels == UNLABELED, 0, labels)
    lab = labeled_log_density_rows(z, safe, means, log_scales)
    mask = wrap((labels != UNLABELED).astype(np.float64))
    one = wrap(np.ones_like(mask.data))
    return add(mul(mask, lab), mul(sub(one, mask), mix))


def standard_normal_log_density_rows(z) -> Tensor:
    """Row-wise log N(z | 0, I), the vanilla-VAE prior."""
    z = wrap(z)
    quad = tsum(square(z), axis=1)
    return sub(mul(wrap(-0.5), quad), wrap(0.5 * z.shape[1] * LOG_2PI))


# ---------------------------------------------------------------------------
# scalar / numpy convenience API
# ---------------------------------------------------------------------------

def _check_component(k: int, params: GmmParams):
    if not (0 <= k < params.n_components):
        raise IndexError(
            f"component {k} out of range for {params.n_components} components"
        )


def _check_vector(z, params: GmmParams) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] != params.latent_dim:
        raise ContractViolation(
            f"expected a vector of length {params.latent_dim}, got shape {z.shape}"
        )
    if not np.all(np.isfinite(z)):
        raise ContractViolation("z contains non-finite entries")
    return z


def log_component_density(z, k: int, params: GmmParams) -> float:
    """Log diagonal-Gaussian density of component ``k`` at vector ``z``."""
    _check_component(k, params)
    z = _check_vector(z, params)
    out = labeled_log_density_rows(
        z[None, :], np.array([k]), params.means, params.log_scales
    )
    return float(out.data[0])


def log_mixture_density(z, params: GmmParams) -> float:
    """Log of the full mixture density at vector ``z``."""
    z = _check_vector(z, params)
    out = mixture_log_density_rows(
        z[None, :], params.mixture_logits, params.means, params.log_scales
    )
    return float(out.data[0])


def log_prior(z, label: int | None, params: GmmParams) -> float:
    """Semi-supervised prior: labeled -> component density, else mixture."""
    if label is not None:
        _check_component(label, params)
        return log_component_density(z, label, params)
    return log_mixture_density(z, params)


def responsibilities(z, params: GmmParams) -> np.ndarray:
    """Posterior over components at ``z``: r_k ∝ pi_k N(z | mu_k, Sigma_k)."""
    z = _check_vector(z, params)
    comp = component_log_densities(
        z[None, :], params.means, params.log_scales
    ).data[0]
    scores = comp + np.log(params.weights())
    scores -= scores.max()
    e = np.exp(scores)
    return e / e.sum()


def sample_component(
    k: int, params: GmmParams, n: int, rng: np.random.Generator
) -> np.ndarray:
    """n i.i.d. draws from component ``k``."""
    _check_component(k, params)
    if n < 1:
        raise ContractViolation(f"n must be >= 1, got {n}")
    eps = rng.standard_normal((n, params.latent_dim))
    return params.means[k] + params.scales()[k] * eps


def sample_mixture(params: GmmParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw component indices from Cat(pi), then from those components."""
    if n < 1:
        raise ContractViolation(f"n must be >= 1, got {n}")
    ks = rng.choice(params.n_components, size=n, p=params.weights())
    eps = rng.standard_normal((n, params.latent_dim))
    return params.means[ks] + params.scales()[ks] * eps
