"""The three-network model: a drug VAE with two decoders (DVAE), a
deterministic cell-line autoencoder (CAE), and a sensitivity prediction
network (DSPN) consuming the concatenation of the drug latent mean and
the cell latent.

All forward passes are built from the nnkernel ops, so every loss here
is differentiable end to end, including through the mixture prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gmm
from .exceptions import ContractViolation, NumericError
from .nnkernel import (
    GradientTape,
    LayerSpec,
    Tensor,
    add,
    affine,
    as_matrix,
    concat,
    exp,
    init_layer_params,
    mlp_forward,
    mul,
    neg,
    reshape,
    square,
    sub,
    take_rows,
    tmean,
    tsum,
    wrap,
)
from .nnkernel.losses import mse, mse_rows

PRIOR_VARIANTS = ("vanilla", "gmm_constrained", "gmm_unconstrained")

ENTROPY_CONST = 0.5 * (1.0 + gmm.LOG_2PI)  # per-dimension Gaussian entropy at sigma=1


@dataclass(frozen=True)
class ModelConfig:
    smiles_dim: int = 300
    ip_dim: int = 294
    bio_dim: int = 241
    latent_dim: int = 10
    dvae_encoder_dims: tuple[int, ...] = (128, 64)
    decoder_dims: tuple[int, ...] = (64, 128)
    dspn_dims: tuple[int, ...] = (512, 256, 128)
    dspn_dropout: float = 0.5
    n_components: int = 3
    n_guiding_labels: int = 3
    prior_variant: str = "gmm_constrained"
    dspn_input: str = "mean"  # "mean" feeds the encoder mean to DSPN, "sample" the z draw

    def __post_init__(self):
        for name in ("smiles_dim", "ip_dim", "bio_dim", "latent_dim"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be >= 1")
        if self.prior_variant not in PRIOR_VARIANTS:
            raise ContractViolation(
                f"prior_variant must be one of {PRIOR_VARIANTS}, "
                f"got {self.prior_variant!r}"
            )
        if self.n_guiding_labels > self.n_components:
            raise ContractViolation(
                f"n_guiding_labels ({self.n_guiding_labels}) exceeds "
                f"n_components ({self.n_components})"
            )
        if not (0.0 <= self.dspn_dropout < 1.0):
            raise ContractViolation("dspn_dropout must be in [0, 1)")
        if self.dspn_input not in ("mean", "sample"):
            raise ContractViolation("dspn_input must be 'mean' or 'sample'")
        if any(d < 1 for d in (*self.dvae_encoder_dims, *self.decoder_dims,
                               *self.dspn_dims)):
            raise ContractViolation("hidden dims must be >= 1")

    @property
    def uses_gmm(self) -> bool:
        return self.prior_variant != "vanilla"


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights of the loss terms; the defaults are all 1."""

    smiles_recon: float = 1.0
    ip_recon: float = 1.0
    prior: float = 1.0
    entropy: float = 1.0
    cae: float = 1.0
    dspn: float = 1.0

    def __post_init__(self):
        for name in ("smiles_recon", "ip_recon", "prior", "entropy", "cae", "dspn"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"loss weight {name} must be >= 0")


@dataclass
class EncoderOutput:
    """Gaussian encoder output with the recorded reparameterization noise:
    z = mu + exp(log_sigma) * eps, eps ~ N(0, I)."""

    mu: Tensor
    log_sigma: Tensor
    z: Tensor
    eps: np.ndarray


@dataclass
class Batch:
    """One training batch: the unique drugs and cells touched by a set of
    observed sensitivity pairs, plus the pair index triples."""

    x_smiles: np.ndarray          # (n_drugs, smiles_dim)
    ip: np.ndarray                # (n_drugs, ip_dim), zero rows where unprofiled
    ip_mask: np.ndarray           # (n_drugs,) 1.0 where the profile is real
    labels: np.ndarray            # (n_drugs,) guiding label or -1
    x_bio: np.ndarray             # (n_cells, bio_dim)
    pair_drug: np.ndarray         # (n_pairs,) index into the drug rows
    pair_cell: np.ndarray         # (n_pairs,) index into the cell rows
    y: np.ndarray                 # (n_pairs,) sensitivity targets

    @property
    def n_pairs(self) -> int:
        return int(self.pair_drug.shape[0])


def _chain(prefix: str, in_dim: int, hidden: tuple[int, ...], out_dim: int,
           out_activation: str = "identity",
           dropout_rate: float = 0.0,
           dropout_layers: tuple[int, ...] = ()) -> list[tuple[str, LayerSpec]]:
    """Named layer chain: relu hidden layers then one output layer."""
    dims = (in_dim, *hidden)
    out = []
    for i in range(len(hidden)):
        rate = dropout_rate if i in dropout_layers else 0.0
        out.append((f"{prefix}.{i}", LayerSpec(dims[i], dims[i + 1], "relu", rate)))
    out.append((f"{prefix}.out", LayerSpec(dims[-1], out_dim, out_activation)))
    return out


class _Binder:
    """Maps parameter names to tensors for one forward pass: trainable
    parameters register on the tape, frozen ones become constants."""

    def __init__(self, arrays: dict[str, np.ndarray],
                 tape: GradientTape | None, frozen: frozenset[str]):
        self._arrays = arrays
        self._tape = tape
        self._frozen = frozen
        self._cache: dict[str, Tensor] = {}

    def __call__(self, name: str) -> Tensor:
        t = self._cache.get(name)
        if t is None:
            arr = self._arrays[name]
            if self._tape is not None and name not in self._frozen:
                t = self._tape.parameter(name, arr)
            else:
                t = Tensor(arr, name=name)
            self._cache[name] = t
        return t

    def pairs(self, chain: list[tuple[str, LayerSpec]]):
        return [(self(f"{n}.W"), self(f"{n}.b")) for n, _ in chain]


def entropy_rows(log_sigma) -> Tensor:
    """Analytical entropy of a diagonal Gaussian per row:
    D/2 (1 + ln 2 pi) + sum_d log sigma_d."""
    log_sigma = wrap(log_sigma)
    d = log_sigma.shape[1]
    return add(tsum(log_sigma, axis=1), wrap(d * ENTROPY_CONST))


class VadeersModel:
    """Parameter store plus forward passes and losses for one variant."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    # ---- architecture ----------------------------------------------------

    def dvae_encoder_chain(self):
        c = self.config
        dims = (c.smiles_dim, *c.dvae_encoder_dims)
        return [(f"dvae.enc.{i}", LayerSpec(dims[i], dims[i + 1], "relu"))
                for i in range(len(c.dvae_encoder_dims))]

    def cae_encoder_chain(self):
        c = self.config
        return _chain("cae.enc", c.bio_dim, c.dvae_encoder_dims, c.latent_dim)

    def smiles_decoder_chain(self):
        c = self.config
        return _chain("dvae.dec_s", c.latent_dim, c.decoder_dims, c.smiles_dim)

    def ip_decoder_chain(self):
        c = self.config
        return _chain("dvae.dec_i", c.latent_dim, c.decoder_dims, c.ip_dim)

    def cae_decoder_chain(self):
        c = self.config
        return _chain("cae.dec", c.latent_dim, c.decoder_dims, c.bio_dim)

    def dspn_chain(self):
        c = self.config
        return _chain("dspn", 2 * c.latent_dim, c.dspn_dims, 1,
                      dropout_rate=c.dspn_dropout, dropout_layers=(0, 1))

    def _enc_trunk_out(self) -> int:
        c = self.config
        return c.dvae_encoder_dims[-1] if c.dvae_encoder_dims else c.smiles_dim

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator) -> "VadeersModel":
        model = cls(config, {})
        chains = [
            model.dvae_encoder_chain(),
            model.smiles_decoder_chain(),
            model.ip_decoder_chain(),
            model.cae_encoder_chain(),
            model.cae_decoder_chain(),
            model.dspn_chain(),
        ]
        params: dict[str, np.ndarray] = {}
        for chain in chains:
            for name, spec in chain:
                w, b = init_layer_params(rng, spec)
                params[f"{name}.W"] = w
                params[f"{name}.b"] = b
        trunk_out = model._enc_trunk_out()
        for head in ("mu", "logsig"):
            spec = LayerSpec(trunk_out, config.latent_dim, "identity")
            w, b = init_layer_params(rng, spec)
            params[f"dvae.enc.{head}.W"] = w
            params[f"dvae.enc.{head}.b"] = b
        if config.uses_gmm:
            g = gmm.init_gmm(
                config.n_components, config.latent_dim, rng,
                constrained=config.prior_variant == "gmm_constrained",
            )
            params["gmm.logits"] = g.mixture_logits
            params["gmm.means"] = g.means
            params["gmm.log_scales"] = g.log_scales
        model.params = params
        return model

    def copy(self) -> "VadeersModel":
        return VadeersModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def frozen_names(self) -> frozenset[str]:
        if self.config.prior_variant == "gmm_constrained":
            return frozenset({"gmm.log_scales"})
        return frozenset()

    def binder(self, tape: GradientTape | None = None) -> _Binder:
        return _Binder(self.params, tape, self.frozen_names())

    def group_names(self, group: str) -> list[str]:
        """Parameter names of one subnetwork: dvae, cae, dspn, or gmm."""
        prefix = {"dvae": "dvae.", "cae": "cae.", "dspn": "dspn.", "gmm": "gmm."}[group]
        return sorted(n for n in self.params if n.startswith(prefix))

    def gmm_params(self) -> gmm.GmmParams | None:
        if not self.config.uses_gmm:
            return None
        return gmm.GmmParams(
            mixture_logits=self.params["gmm.logits"],
            means=self.params["gmm.means"],
            log_scales=self.params["gmm.log_scales"],
            constrained=self.config.prior_variant == "gmm_constrained",
        )

    # ---- forward passes ---------------------------------------------------

    def encode_drug(self, x, binder: _Binder | None = None,
                    rng: np.random.Generator | None = None,
                    sample: bool = True) -> EncoderOutput:
        """Two-headed encoder; z via reparameterization with one draw."""
        binder = binder or self.binder()
        x = wrap(x)
        as_matrix(x.data, "drug input")
        if x.shape[1] != self.config.smiles_dim:
            raise ContractViolation(
                f"drug input width {x.shape[1]} != smiles_dim "
                f"{self.config.smiles_dim}"
            )
        chain = self.dvae_encoder_chain()
        h = mlp_forward(x, [s for _, s in chain], binder.pairs(chain))
        mu = affine(h, binder("dvae.enc.mu.W"), binder("dvae.enc.mu.b"))
        log_sigma = affine(h, binder("dvae.enc.logsig.W"), binder("dvae.enc.logsig.b"))
        if not (np.all(np.isfinite(mu.data)) and np.all(np.isfinite(log_sigma.data))):
            raise NumericError("non-finite encoder head output")
        if sample:
            if rng is None:
                raise ContractViolation("sampling encoder requires an rng")
            eps = rng.standard_normal(mu.shape)
            z = add(mu, mul(exp(log_sigma), Tensor(eps)))
        else:
            eps = np.zeros(mu.shape)
            z = mu
        return EncoderOutput(mu=mu, log_sigma=log_sigma, z=z, eps=eps)

    def decode_drug(self, z, binder: _Binder | None = None) -> tuple[Tensor, Tensor]:
        """Two independent decoders on the same z: reconstruction of the
        drug embedding and prediction of the inhibition profile.  Output
        layers are linear."""
        binder = binder or self.binder()
        z = wrap(z)
        chain_s = self.smiles_decoder_chain()
        chain_i = self.ip_decoder_chain()
        recon = mlp_forward(z, [s for _, s in chain_s], binder.pairs(chain_s))
        ip_pred = mlp_forward(z, [s for _, s in chain_i], binder.pairs(chain_i))
        return recon, ip_pred

    def cae_encode(self, x, binder: _Binder | None = None) -> Tensor:
        binder = binder or self.binder()
        x = wrap(x)
        as_matrix(x.data, "cell input")
        if x.shape[1] != self.config.bio_dim:
            raise ContractViolation(
                f"cell input width {x.shape[1]} != bio_dim {self.config.bio_dim}"
            )
        chain = self.cae_encoder_chain()
        return mlp_forward(x, [s for _, s in chain], binder.pairs(chain))

    def cae_decode(self, latent, binder: _Binder | None = None) -> Tensor:
        binder = binder or self.binder()
        chain = self.cae_decoder_chain()
        return mlp_forward(latent, [s for _, s in chain], binder.pairs(chain))

    def dspn_predict(self, drug_latent, cell_latent,
                     binder: _Binder | None = None, mode: str = "eval",
                     rng: np.random.Generator | None = None) -> Tensor:
        """Prediction head on [drug latent, cell latent]; returns (n,)."""
        binder = binder or self.binder()
        drug_latent, cell_latent = wrap(drug_latent), wrap(cell_latent)
        if drug_latent.shape != cell_latent.shape:
            raise ContractViolation(
                f"latent shapes differ: {drug_latent.shape} vs {cell_latent.shape}"
            )
        x = concat([drug_latent, cell_latent], axis=1)
        chain = self.dspn_chain()
        out = mlp_forward(x, [s for _, s in chain], binder.pairs(chain),
                          mode=mode, rng=rng)
        return reshape(out, (out.shape[0],))

    # ---- losses ------------------------------------------------------------

    def prior_log_density_rows(self, z, labels, binder: _Binder) -> Tensor:
        if not self.config.uses_gmm:
            return gmm.standard_normal_log_density_rows(z)
        return gmm.semi_supervised_log_prior_rows(
            z, labels,
            binder("gmm.logits"), binder("gmm.means"), binder("gmm.log_scales"),
        )

    def _dvae_terms(self, enc: EncoderOutput, recon: Tensor, ip_pred: Tensor,
                    ip, ip_mask, labels, x_smiles,
                    weights: LossWeights, binder: _Binder):
        mask = np.asarray(ip_mask, dtype=np.float64)
        smiles_term = tmean(mse_rows(recon, x_smiles))
        ip_term = tmean(mul(mse_rows(ip_pred, ip), Tensor(mask)))
        prior_term = tmean(self.prior_log_density_rows(enc.z, labels, binder))
        ent_term = tmean(entropy_rows(enc.log_sigma))
        parts = {
            "smiles_recon": mul(wrap(weights.smiles_recon), smiles_term),
            "ip_recon": mul(wrap(weights.ip_recon), ip_term),
            "prior": neg(mul(wrap(weights.prior), prior_term)),
            "entropy": neg(mul(wrap(weights.entropy), ent_term)),
        }
        total = add(add(parts["smiles_recon"], parts["ip_recon"]),
                    add(parts["prior"], parts["entropy"]))
        return total, parts

    def dvae_loss_batch(self, binder: _Binder, x_smiles, ip, ip_mask, labels,
                        weights: LossWeights, rng: np.random.Generator):
        """Mean single-compound DVAE loss over a batch of drugs."""
        enc = self.encode_drug(x_smiles, binder, rng=rng, sample=True)
        recon, ip_pred = self.decode_drug(enc.z, binder)
        total, parts = self._dvae_terms(enc, recon, ip_pred, ip, ip_mask,
                                        labels, x_smiles, weights, binder)
        return total, parts, enc

    def cae_loss_batch(self, binder: _Binder, x_bio) -> tuple[Tensor, Tensor]:
        """Deterministic autoencoder reconstruction error; also returns
        the latent codes."""
        latent = self.cae_encode(x_bio, binder)
        recon = self.cae_decode(latent, binder)
        return latent, mse(x_bio, recon)

    def total_loss(self, binder: _Binder, batch: Batch, weights: LossWeights,
                   rng: np.random.Generator, mode: str = "train"):
        """Composite loss over one batch; returns (loss, breakdown, flags).

        The sensitivity term runs over the observed pairs only; a batch
        with zero observed pairs contributes nothing and is flagged."""
        dvae_total, parts, enc = self.dvae_loss_batch(
            binder, batch.x_smiles, batch.ip, batch.ip_mask, batch.labels,
            weights, rng,
        )
        flags = {"dspn_empty": False}
        if batch.x_bio.shape[0] > 0:
            cell_latent, cae_term = self.cae_loss_batch(binder, batch.x_bio)
        else:
            cell_latent, cae_term = None, wrap(0.0)

        if batch.n_pairs > 0 and cell_latent is not None:
            drug_latent = enc.z if self.config.dspn_input == "sample" else enc.mu
            dl = take_rows(drug_latent, batch.pair_drug)
            cl = take_rows(cell_latent, batch.pair_cell)
            preds = self.dspn_predict(dl, cl, binder, mode=mode, rng=rng)
            dspn_term = tmean(square(sub(preds, Tensor(batch.y))))
        else:
            dspn_term = wrap(0.0)
            flags["dspn_empty"] = True

        parts = dict(parts)
        parts["cae"] = mul(wrap(weights.cae), cae_term)
        parts["dspn"] = mul(wrap(weights.dspn), dspn_term)
        total = add(dvae_total, add(parts["cae"], parts["dspn"]))
        return total, parts, flags

    # ---- eval helpers -------------------------------------------------------

    def drug_latent_means(self, x_smiles) -> np.ndarray:
        """Encoder means, no sampling (deterministic)."""
        return self.encode_drug(x_smiles, sample=False).mu.data

    def cell_latents(self, x_bio) -> np.ndarray:
        return self.cae_encode(x_bio).data

    def predict_sensitivity(self, drug_latent, cell_latent) -> np.ndarray:
        """Deterministic eval-mode sensitivity prediction."""
        return self.dspn_predict(drug_latent, cell_latent, mode="eval").data


def dvae_loss(x_smiles, x_smiles_recon, x_ip, x_ip_pred, enc: EncoderOutput,
              label: int | None, gmm_params: gmm.GmmParams | None,
              weights: LossWeights) -> tuple[float, dict[str, float]]:
    """Single-compound loss combined from its pieces.

    ``x_ip`` may be None (drug without a measured profile); the profile
    term is then skipped entirely.  With a GMM prior a present ``label``
    selects the labeled branch; ``gmm_params=None`` means the standard
    normal prior, under which a label is rejected."""
    x_smiles = np.atleast_2d(np.asarray(x_smiles, dtype=np.float64))
    x_smiles_recon = np.atleast_2d(np.asarray(x_smiles_recon, dtype=np.float64))
    smiles_term = float(mse(x_smiles_recon, x_smiles).data)
    if x_ip is not None:
        ip_term = float(mse(
            np.atleast_2d(np.asarray(x_ip_pred, dtype=np.float64)),
            np.atleast_2d(np.asarray(x_ip, dtype=np.float64)),
        ).data)
    else:
        ip_term = 0.0
    z = np.asarray(enc.z.data, dtype=np.float64).reshape(-1)
    if gmm_params is not None:
        log_p = gmm.log_prior(z, label, gmm_params)
    else:
        if label is not None:
            raise ContractViolation("guiding label given but the prior has no components")
        log_p = float(gmm.standard_normal_log_density_rows(z[None, :]).data[0])
    log_sigma = np.asarray(enc.log_sigma.data, dtype=np.float64).reshape(1, -1)
    h = float(entropy_rows(log_sigma).data[0])
    parts = {
        "smiles_recon": weights.smiles_recon * smiles_term,
        "ip_recon": weights.ip_recon * ip_term,
        "prior": -weights.prior * log_p,
        "entropy": -weights.entropy * h,
    }
    return sum(parts.values()), parts
