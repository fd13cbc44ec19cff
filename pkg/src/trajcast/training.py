"""Composite objective and the optimization loop.

The regression target is the negated conditional ELBO with beta-weighted
KL and a mutual-information bonus; the expectation over the discrete
latent is computed exactly by enumerating all components weighted by the
posterior. The classification loss trains only the proposal classifier:
sampled coordinates enter as constants and the condition tensor is
detached at the classifier boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import classifier as clf
from . import latent as lat
from .autodiff import AdamState, Value, adam_step, backward_grad, clip_global_norm, neg, zero_grad
from .config import ModelConfig, TrainConfig
from .data import trajectory_ade, trajectory_fde
from .model import ForecastModel


def beta_value(step: int, cfg: TrainConfig) -> float:
    """KL weight at a step: a constant, or a sigmoid anneal
    end*s + start*(1-s) with s = sigmoid(rate*(step - midpoint))."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if cfg.beta_schedule == "constant":
        return cfg.beta_constant
    s = 1.0 / (1.0 + math.exp(-cfg.beta_rate * (step - cfg.beta_midpoint)))
    return cfg.beta_end * s + cfg.beta_start * (1.0 - s)


def _instance_elbo_terms(instance, model: ForecastModel):
    """Encode one instance and build E_q[log p], KL, and the posterior."""
    v_i = model.encode_history(instance).v_i
    future_tensor, _bidir = model.encode_future(instance)
    q = model.posterior(v_i, future_tensor.v_f)
    p = model.prior(v_i)
    decoded = {z: model.decode(v_i, z, instance) for z in range(model.config.latent_size)}
    from .autodiff import concat, dot
    lls = concat([decoded[z].log_likelihood(instance.target_future)
                  for z in range(model.config.latent_size)])
    expected_ll = dot(q.probs, lls)
    kl = lat.kl_divergence(q, p)
    return v_i, q, p, decoded, expected_ll, kl


def regression_loss(instances, model: ForecastModel, beta: float, alpha: float):
    """Negated objective (minimization target) over an instance batch.

    Returns (loss Value, parts dict, context list); the context carries
    per-instance (v_i, prior, decoded components) for reuse by the
    classification stage within the same step."""
    if not isinstance(instances, (list, tuple)):
        instances = [instances]
    if len(instances) == 0:
        raise ValueError("regression_loss: empty batch")
    contexts = []
    expected = None
    kl_total = None
    qs = []
    for inst in instances:
        v_i, q, p, decoded, e_ll, kl = _instance_elbo_terms(inst, model)
        contexts.append({"instance": inst, "v_i": v_i, "prior": p, "decoded": decoded})
        qs.append(q)
        expected = e_ll if expected is None else expected + e_ll
        kl_total = kl if kl_total is None else kl_total + kl
    scale = 1.0 / len(instances)
    expected = expected * scale
    kl_mean = kl_total * scale
    iq = lat.mutual_information(qs)
    loss = neg(expected) + beta * kl_mean + (-alpha) * iq
    parts = {
        "recon": float(expected.data),
        "kl": float(kl_mean.data),
        "iq": float(iq.data),
        "reg": float(loss.data),
    }
    return loss, parts, contexts


def total_loss(reg_loss: Value, class_losses) -> Value:
    """reg + mean of the per-proposal classification losses."""
    if len(class_losses) == 0:
        return reg_loss
    total = class_losses[0]
    for term in class_losses[1:]:
        total = total + term
    return reg_loss + total * (1.0 / len(class_losses))


@dataclass
class TrainReport:
    """Per-step and per-epoch training record; every value finite unless
    the run diverged (which truncates the record)."""

    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False

    def to_dict(self):
        return {
            "steps": self.steps,
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "diverged": self.diverged,
        }


def _snapshot(params):
    return {name: p.data.copy() for name, p in params.items()}


def _restore(params, snap):
    for name, p in params.items():
        p.data[...] = snap[name]


def evaluate_model(model: ForecastModel, instances, config: TrainConfig, seed_tag=2):
    """Classifier-selected top-1 ADE/FDE over a held-out set."""
    if len(instances) == 0:
        return {"ade": float("nan"), "fde": float("nan")}
    ades = []
    fdes = []
    for idx, inst in enumerate(instances):
        _, selected, _ = model.predict(
            inst, n=config.n_proposals, mode=config.sample_mode,
            seed_material=(config.seed, seed_tag, idx), k=1)
        ades.append(trajectory_ade(selected[0].positions, inst.target_future))
        fdes.append(trajectory_fde(selected[0].positions, inst.target_future))
    return {"ade": float(np.mean(ades)), "fde": float(np.mean(fdes))}


def training_step(batch, batch_indices, model, config, step, opt):
    """One optimizer step over a batch; returns the logged parts."""
    params = model.parameters()
    beta = beta_value(step, config)
    zero_grad(params)
    reg, parts, contexts = regression_loss(batch, model, beta, config.alpha)
    w = model.classifier.bce_weight()
    class_terms = []
    cls_values = []
    for ctx, data_idx in zip(contexts, batch_indices):
        inst = ctx["instance"]
        proposals = lat.sample_proposals(
            ctx["prior"], lambda z: ctx["decoded"][z], config.n_proposals,
            "latent_mode", (config.seed, 1, step, int(data_idx)))
        clf.label_proposals(proposals, inst.target_future, config.gamma)
        scores = model.score(proposals, ctx["v_i"], inst)
        terms = clf.bce_terms(scores, [p.label for p in proposals], w)
        inst_mean = terms[0]
        for t in terms[1:]:
            inst_mean = inst_mean + t
        inst_mean = inst_mean * (1.0 / len(terms))
        class_terms.append(inst_mean)
        cls_values.append(float(inst_mean.data))
    total = total_loss(reg, class_terms)
    parts["cls"] = float(np.mean(cls_values)) if cls_values else 0.0
    parts["total"] = float(total.data)
    parts["beta"] = beta
    parts["step"] = step
    if not math.isfinite(parts["total"]):
        return parts, False
    backward_grad(total)
    clip_global_norm(params, config.clip_norm)
    adam_step(params, opt)
    return parts, True


def fit(dataset, config: TrainConfig, model_config: ModelConfig | None = None,
        model: ForecastModel | None = None, log=None):
    """Train on (train, val) instance lists.

    `dataset` is either a list (no validation) or a (train, val) pair.
    Fixed seeds make the report and final parameters reproducible. On a
    non-finite loss the last epoch-end parameters are restored and the
    report is marked diverged. With validation data, the parameters of
    the best epoch by validation FDE are restored at the end.
    """
    if isinstance(dataset, tuple):
        train, val = dataset
    else:
        train, val = dataset, []
    if len(train) == 0:
        raise ValueError("fit: empty train split")
    if model is None:
        model = ForecastModel(model_config or ModelConfig(), seed=config.seed)
    params = model.parameters()
    opt = AdamState(params, learning_rate=config.learning_rate)
    report = TrainReport()
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0)))
    step = 0
    last_good = _snapshot(params)
    best_fde = math.inf
    best_snap = None

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train))
        epoch_parts = []
        for lo in range(0, len(order), config.batch_size):
            chunk = order[lo:lo + config.batch_size]
            batch = [train[i] for i in chunk]
            parts, ok = training_step(batch, chunk, model, config, step, opt)
            report.steps.append(parts)
            epoch_parts.append(parts)
            step += 1
            if not ok:
                _restore(params, last_good)
                report.diverged = True
                return model, report
        row = {"epoch": epoch}
        for key in ("recon", "kl", "iq", "reg", "cls", "total"):
            row[key] = float(np.mean([p[key] for p in epoch_parts]))
        if val:
            metrics = evaluate_model(model, val, config)
            row["val_ade"] = metrics["ade"]
            row["val_fde"] = metrics["fde"]
            if metrics["fde"] < best_fde:
                best_fde = metrics["fde"]
                best_snap = _snapshot(params)
                report.best_epoch = epoch
        report.epochs.append(row)
        last_good = _snapshot(params)
        if log:
            log(row)
    if best_snap is not None:
        _restore(params, best_snap)
    return model, report
