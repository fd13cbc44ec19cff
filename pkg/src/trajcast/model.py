"""Full two-stage forecaster: encoders, latent prior/posterior heads,
trajectory decoder, and the proposal classifier, with versioned
checkpoint I/O that round-trips parameters bit-exactly."""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from . import classifier as clf
from . import encoders as enc
from . import latent as lat
from .autodiff import Value, no_grad
from .config import ModelConfig
from .scene import PredictionInstance

CHECKPOINT_VERSION = 1


class ForecastModel:
    """Owns every parameter group and the wiring between stages.

    The complete history tensor already contains the map encoding, so the
    latent heads and decoder receive their map argument as None; the
    condition dimensioning assumes a map encoder whenever the config
    enables one (instances without maps contribute zeros there).
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoder = enc.EncoderParams.init(rng, config)
        cond_dim = config.history_hidden + config.neighbor_hidden
        if config.use_map:
            cond_dim += config.map_encoding_dim
        self.cond_dim = cond_dim
        future_dim = 2 * config.future_hidden + config.neighbor_hidden
        self.prior_head = lat.LatentHeadParams.init(
            rng, cond_dim, config.head_hidden, config.latent_size, prefix="prior")
        self.posterior_head = lat.LatentHeadParams.init(
            rng, cond_dim + future_dim, config.head_hidden, config.latent_size,
            prefix="posterior")
        self.decoder = lat.DecoderParams.init(
            rng, cond_dim, config.decoder_hidden, config.latent_size,
            mogrifier_rounds=config.decoder_mogrifier_rounds, prefix="dec")
        self.classifier = clf.ClassifierParams.init(
            rng, cond_dim, hidden=config.classifier_hidden,
            head_hidden=config.classifier_hidden, prefix="cls")

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> dict:
        out = {}
        out.update(self.encoder.params())
        out.update(self.prior_head.params())
        out.update(self.posterior_head.params())
        out.update(self.decoder.params())
        out.update(self.classifier.params())
        return out

    # -- stage one ----------------------------------------------------------

    def encode_history(self, instance: PredictionInstance) -> enc.CompleteHistoryTensor:
        hist = enc.encode_history(instance, self.encoder)
        if self.config.use_map and not hist.has_map:
            # instances without a map contribute zeros in the map slot so
            # the condition dimension stays constant across the dataset
            pad = Value(np.zeros(self.config.map_encoding_dim))
            from .autodiff import concat
            hist = enc.CompleteHistoryTensor(
                v_i=concat([hist.v_i, pad]), has_social=hist.has_social, has_map=False)
        return hist

    def encode_future(self, instance: PredictionInstance):
        return enc.encode_future(instance, self.encoder)

    def prior(self, v_i: Value) -> lat.CategoricalLatent:
        return lat.prior_distribution(v_i, None, self.prior_head)

    def posterior(self, v_i: Value, v_f: Value) -> lat.CategoricalLatent:
        return lat.posterior_distribution(v_i, v_f, None, self.posterior_head)

    def last_increment(self, instance: PredictionInstance) -> np.ndarray:
        hist = instance.target_history
        if len(hist) >= 2:
            return hist[-1] - hist[-2]
        return np.zeros(2)

    def decode(self, v_i: Value, z_index: int, instance: PredictionInstance) -> lat.DecodedDistribution:
        return lat.decode_trajectory_distribution(
            v_i, z_index, None, self.decoder,
            last_observed=instance.last_observed,
            last_increment=self.last_increment(instance),
            horizon=instance.horizon)

    def propose(self, instance: PredictionInstance, n: int, mode: str, seed_material,
                v_i: Value | None = None):
        """Sample n proposals for the instance; reuses a precomputed
        condition tensor when given."""
        if v_i is None:
            v_i = self.encode_history(instance).v_i
        prior = self.prior(v_i)
        proposals = lat.sample_proposals(
            prior, lambda z: self.decode(v_i, z, instance), n, mode, seed_material)
        return proposals, prior, v_i

    # -- stage two ----------------------------------------------------------

    def score(self, proposals, v_i: Value, instance: PredictionInstance):
        return clf.score_proposals(proposals, v_i, self.classifier,
                                   origin=instance.last_observed)

    def predict(self, instance: PredictionInstance, n: int = 20, mode: str = "latent_mode",
                seed_material=0, k: int = 1):
        """Full two-stage prediction (no gradients).

        Returns (proposals, selected top-k list, argmax-z mean trajectory)."""
        with no_grad():
            v_i = self.encode_history(instance).v_i
            proposals, prior, _ = self.propose(instance, n, mode, seed_material, v_i=v_i)
            self.score(proposals, v_i, instance)
            selected = clf.select_final_trajectory(proposals, k=k)
            mode_trajectory = self.decode(v_i, prior.argmax(), instance).mean_trajectory()
        return proposals, selected, mode_trajectory


# ---------------------------------------------------------------------------
# checkpointing

def save_checkpoint(path, model: ForecastModel, extra: dict | None = None):
    """Versioned dump of the config and every parameter array; float64
    arrays are stored raw, so a load-save cycle is bit-exact."""
    payload = {
        "__version__": np.asarray(CHECKPOINT_VERSION),
        "__config__": np.frombuffer(
            json.dumps({
                "model": dataclasses.asdict(model.config),
                "extra": extra or {},
            }).encode(), dtype=np.uint8),
    }
    for name, p in model.parameters().items():
        payload["param/" + name] = p.data
    np.savez(path, **payload)


def load_checkpoint(path):
    """Rebuild a ForecastModel from a checkpoint; returns (model, extra)."""
    with np.load(path) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(bytes(data["__config__"]).decode())
        config = ModelConfig(**meta["model"])
        model = ForecastModel(config, seed=0)
        params = model.parameters()
        stored = {k[len("param/"):] for k in data.files if k.startswith("param/")}
        missing = set(params) - stored
        unknown = stored - set(params)
        if missing or unknown:
            raise ValueError(f"checkpoint parameter mismatch: missing={sorted(missing)} "
                             f"unknown={sorted(unknown)}")
        for name, p in params.items():
            arr = data["param/" + name]
            if arr.shape != p.data.shape:
                raise ValueError(f"checkpoint shape mismatch for {name}: "
                                 f"{arr.shape} vs {p.data.shape}")
            p.data[...] = arr
    return model, meta.get("extra", {})
