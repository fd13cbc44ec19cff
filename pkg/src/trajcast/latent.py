"""Discrete-latent CVAE machinery: prior and posterior heads over a
25-way categorical latent, KL and mutual-information terms, the gated-GRU
trajectory decoder, and proposal sampling.

The decoder emits one bivariate Gaussian per future step over position
increments whose means accumulate from the last observed position; the
previous mean increment feeds the next step's input. Sampling uses a
counter-based stream keyed per proposal, so proposal k is reproducible no
matter how the proposals are partitioned across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (Value, clip, concat, dot, log, log_softmax, narrow, neg,
                       softmax, tanh, uniform_init, vsum)
from .cells import GRU_MOGRIFIER_GAIN, GruParams, MogrifierParams, mogrifier_gru_step
from .classifier import TrajectoryProposal
from .nnops import affine, gaussian_nll, gaussian_cov, gaussian_sample


@dataclass
class CategoricalLatent:
    """Distribution over the discrete latent; probs always sum to one."""

    probs: Value
    logits: Value | None = None

    @classmethod
    def from_logits(cls, logits: Value) -> "CategoricalLatent":
        if not np.all(np.isfinite(logits.data)):
            raise FloatingPointError(f"non-finite latent logits: {logits.data}")
        return cls(probs=softmax(logits), logits=logits)

    @classmethod
    def from_probs(cls, probs) -> "CategoricalLatent":
        probs = probs if isinstance(probs, Value) else Value(np.asarray(probs, float))
        total = float(np.sum(probs.data))
        if not math.isclose(total, 1.0, abs_tol=1e-6):
            raise ValueError(f"probs sum to {total}, expected 1")
        return cls(probs=probs)

    @property
    def size(self) -> int:
        return self.probs.data.shape[0]

    def log_probs(self) -> Value:
        if self.logits is not None:
            return log_softmax(self.logits)
        return log(self.probs)

    def argmax(self) -> int:
        """Most likely symbol; ties broken toward the lowest index."""
        return int(np.argmax(self.probs.data))


@dataclass
class LatentHeadParams:
    """Affine, tanh, affine stack producing the latent logits."""

    W1: Value
    b1: Value
    W2: Value
    b2: Value

    @classmethod
    def init(cls, rng, cond_dim, hidden, latent_size, prefix="head"):
        return cls(
            W1=uniform_init(rng, (hidden, cond_dim), cond_dim, name=f"{prefix}.W1"),
            b1=Value(np.zeros(hidden), requires_grad=True, name=f"{prefix}.b1"),
            W2=uniform_init(rng, (latent_size, hidden), hidden, name=f"{prefix}.W2"),
            b2=Value(np.zeros(latent_size), requires_grad=True, name=f"{prefix}.b2"),
        )

    def params(self):
        return {p.name: p for p in (self.W1, self.b1, self.W2, self.b2)}

    def logits(self, cond: Value) -> Value:
        return affine(self.W2, tanh(affine(self.W1, cond, self.b1)), self.b2)


def prior_distribution(v_i: Value, map_enc: Value | None, params: LatentHeadParams) -> CategoricalLatent:
    """p(z | complete history). `map_enc` is accepted for conditions that
    keep the map encoding outside v_i; pass None when it is already part
    of v_i."""
    cond = concat([v_i, map_enc]) if map_enc is not None else v_i
    return CategoricalLatent.from_logits(params.logits(cond))


def posterior_distribution(v_i: Value, future_feature: Value, map_enc: Value | None,
                           params: LatentHeadParams) -> CategoricalLatent:
    """q(z | future, history): same head structure as the prior over the
    concatenated condition (training only)."""
    parts = [v_i, future_feature] + ([map_enc] if map_enc is not None else [])
    return CategoricalLatent.from_logits(params.logits(concat(parts)))


def kl_divergence(q: CategoricalLatent, p: CategoricalLatent) -> Value:
    """Sum q_k (log q_k - log p_k) with 0 log 0 = 0.

    With strictly positive probabilities (anything built from logits)
    this is differentiable; with an exact zero somewhere the value is
    computed out-of-graph, and q_k > 0 against p_k = 0 reports +inf."""
    if q.size != p.size:
        raise ValueError(f"latent sizes differ: {q.size} vs {p.size}")
    qp = q.probs.data
    pp = p.probs.data
    if np.all(qp > 0.0) and np.all(pp > 0.0):
        return dot(q.probs, q.log_probs() - p.log_probs())
    mask = qp > 0.0
    if np.any(pp[mask] == 0.0):
        return Value(np.inf)
    val = float(np.sum(qp[mask] * (np.log(qp[mask]) - np.log(pp[mask]))))
    return Value(val)


def mutual_information(q_batch) -> Value:
    """Mean KL between each conditional and the batch-average latent
    distribution."""
    if len(q_batch) == 0:
        raise ValueError("mutual_information requires a non-empty batch")
    avg = q_batch[0].probs
    for q in q_batch[1:]:
        avg = avg + q.probs
    avg = avg * (1.0 / len(q_batch))
    marginal = CategoricalLatent(probs=avg)
    total = None
    for q in q_batch:
        term = kl_divergence(q, marginal)
        total = term if total is None else total + term
    return total * (1.0 / len(q_batch))


@dataclass
class GaussianStep:
    """One predicted step: absolute-position mean and the factor of the
    increment covariance."""

    mean: Value
    fac: Value

    def cov(self) -> np.ndarray:
        return gaussian_cov(self.fac.data)

    def log_density(self, target) -> Value:
        return neg(gaussian_nll(self.mean, self.fac, target))

    def sample(self, rng) -> np.ndarray:
        return gaussian_sample(self.mean.data, self.fac.data, rng)


@dataclass
class DecodedDistribution:
    """Per-step Gaussians for one latent component."""

    steps: list
    latent_index: int

    @property
    def horizon(self) -> int:
        return len(self.steps)

    def mean_trajectory(self) -> np.ndarray:
        return np.stack([s.mean.data for s in self.steps])

    def log_likelihood(self, future) -> Value:
        """Sum of per-step log-densities of the ground-truth future."""
        future = np.asarray(future, dtype=np.float64)
        if future.shape != (self.horizon, 2):
            raise ValueError(f"future shape {future.shape} does not match horizon "
                             f"{self.horizon}")
        total = self.steps[0].log_density(future[0])
        for t in range(1, self.horizon):
            total = total + self.steps[t].log_density(future[t])
        return total

    def sample_trajectory(self, rng) -> np.ndarray:
        return np.stack([s.sample(rng) for s in self.steps])


@dataclass
class DecoderParams:
    """Gated-GRU trajectory decoder: hidden state seeded by an affine map
    of (condition, one-hot z); two affine heads emit the per-step
    increment mean and covariance factor."""

    W_init: Value
    b_init: Value
    gru: GruParams
    mogrifier: MogrifierParams
    W_mean: Value
    b_mean: Value
    W_fac: Value
    b_fac: Value
    latent_size: int

    @classmethod
    def init(cls, rng, cond_dim, hidden, latent_size, mogrifier_rounds=6, prefix="dec"):
        in_dim = cond_dim + latent_size
        return cls(
            W_init=uniform_init(rng, (hidden, in_dim), in_dim, name=f"{prefix}.W_init"),
            b_init=Value(np.zeros(hidden), requires_grad=True, name=f"{prefix}.b_init"),
            gru=GruParams.init(rng, 2, hidden, prefix=f"{prefix}.gru"),
            mogrifier=MogrifierParams.init(rng, 2, hidden, rounds=mogrifier_rounds,
                                           gain=GRU_MOGRIFIER_GAIN,
                                           prefix=f"{prefix}.mog"),
            W_mean=uniform_init(rng, (2, hidden), hidden, name=f"{prefix}.W_mean"),
            b_mean=Value(np.zeros(2), requires_grad=True, name=f"{prefix}.b_mean"),
            W_fac=uniform_init(rng, (3, hidden), hidden, name=f"{prefix}.W_fac"),
            b_fac=Value(np.zeros(3), requires_grad=True, name=f"{prefix}.b_fac"),
            latent_size=latent_size,
        )

    def params(self):
        out = {p.name: p for p in (self.W_init, self.b_init, self.W_mean, self.b_mean,
                                   self.W_fac, self.b_fac)}
        out.update(self.gru.params())
        out.update(self.mogrifier.params())
        return out


def decode_trajectory_distribution(v_i: Value, z_index: int, map_enc: Value | None,
                                   params: DecoderParams, last_observed, last_increment,
                                   horizon: int) -> DecodedDistribution:
    """Unroll the decoder for one latent component.

    Increment means accumulate from the last observed position; the
    previous mean increment is the next step's input, so the whole
    trajectory stays differentiable."""
    if not (0 <= z_index < params.latent_size):
        raise ValueError(f"latent index {z_index} outside [0, {params.latent_size})")
    one_hot = np.zeros(params.latent_size)
    one_hot[z_index] = 1.0
    parts = [v_i, Value(one_hot)]
    if map_enc is not None:
        parts.append(map_enc)
    h = affine(params.W_init, concat(parts), params.b_init)
    x = Value(np.asarray(last_increment, dtype=np.float64))
    pos = Value(np.asarray(last_observed, dtype=np.float64))
    steps = []
    for _ in range(horizon):
        h = mogrifier_gru_step(x, h, params.gru, params.mogrifier)
        inc_mean = affine(params.W_mean, h, params.b_mean)
        # factor clamp keeps exp(+-fac) comfortably finite while training
        # transients pass through extreme states
        fac = clip(affine(params.W_fac, h, params.b_fac), -8.0, 8.0)
        pos = pos + inc_mean
        steps.append(GaussianStep(mean=pos, fac=fac))
        x = inc_mean
    return DecodedDistribution(steps=steps, latent_index=z_index)


def mixture_log_likelihood(prior: CategoricalLatent, decoded_all, future) -> Value:
    """log sum_z p(z) p(future | z) via logsumexp over all components."""
    from .autodiff import logsumexp
    logp = prior.log_probs()
    terms = [narrow(logp, z, z + 1) + dist.log_likelihood(future)
             for z, dist in enumerate(decoded_all)]
    return logsumexp(concat(terms))


def proposal_rng(seed_material, k: int) -> np.random.Generator:
    """Counter-based per-proposal stream: identical for proposal k no
    matter how the proposal set is split across workers."""
    if isinstance(seed_material, (int, np.integer)):
        seed_material = (int(seed_material),)
    ss = np.random.SeedSequence(tuple(seed_material) + (k,))
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def sample_proposals(prior: CategoricalLatent, decode_fn, n: int, mode: str,
                     seed_material) -> list:
    """Draw n trajectory proposals.

    latent_mode: pin z to the prior argmax and draw every trajectory from
    that component. full: draw z per proposal from the prior, then the
    trajectory. Each proposal records its latent index."""
    if n < 1:
        raise ValueError("need at least one proposal")
    if mode not in ("latent_mode", "full"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    proposals = []
    decoded_cache = {}

    def decoded(z):
        if z not in decoded_cache:
            decoded_cache[z] = decode_fn(z)
        return decoded_cache[z]

    z_mode = prior.argmax()
    probs = prior.probs.data
    for k in range(n):
        rng = proposal_rng(seed_material, k)
        z = z_mode if mode == "latent_mode" else int(rng.choice(prior.size, p=probs))
        positions = decoded(z).sample_trajectory(rng)
        proposals.append(TrajectoryProposal(positions=positions, latent_index=z))
    return proposals
