"""Second stage: label sampled proposals against the ground truth, score
them with a recurrent binary classifier, and select the final output.

Scoring never feeds gradients back into the proposal generator: proposal
coordinates enter as constants and the condition tensor is detached, so
only the classifier's own parameters (and the loss weight) learn from the
classification loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Value, clip, concat, exp, log, neg, sigmoid, sub, tanh, uniform_init
from .cells import GruParams, gru_step
from .nnops import affine

SCORE_CLAMP = 1e-7  # scores clamped to [eps, 1-eps] before logs


@dataclass
class TrajectoryProposal:
    """One candidate future trajectory with its latent index, classifier
    score, and (training only) quality label."""

    positions: np.ndarray
    latent_index: int
    score: float | None = None
    label: int | None = None
    avg_distance: float | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)

    @property
    def horizon(self) -> int:
        return len(self.positions)


@dataclass
class ClassifierParams:
    """Proposal-increment GRU encoder plus a sigmoid scoring head and the
    learnable positive loss weight (exp-parameterized)."""

    gru: GruParams
    W1: Value
    b1: Value
    W2: Value
    b2: Value
    log_w: Value

    @classmethod
    def init(cls, rng, cond_dim, hidden=16, head_hidden=16, prefix="cls"):
        feat = hidden + cond_dim
        return cls(
            gru=GruParams.init(rng, 2, hidden, prefix=f"{prefix}.gru"),
            W1=uniform_init(rng, (head_hidden, feat), feat, name=f"{prefix}.W1"),
            b1=Value(np.zeros(head_hidden), requires_grad=True, name=f"{prefix}.b1"),
            W2=uniform_init(rng, (1, head_hidden), head_hidden, name=f"{prefix}.W2"),
            b2=Value(np.zeros(1), requires_grad=True, name=f"{prefix}.b2"),
            log_w=Value(0.0, requires_grad=True, name=f"{prefix}.log_w"),
        )

    @property
    def hidden_dim(self):
        return self.gru.hidden_dim

    def params(self):
        out = {p.name: p for p in (self.W1, self.b1, self.W2, self.b2, self.log_w)}
        out.update(self.gru.params())
        return out

    def bce_weight(self) -> Value:
        return exp(self.log_w)


def label_proposals(proposals, ground_truth, gamma: float = 3.0):
    """Assign binary quality labels.

    D is the per-proposal mean Euclidean distance to the ground truth
    over the horizon; D <= gamma is positive (the boundary case is
    assigned positive for determinism). Mutates and returns the list."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    gt = np.asarray(ground_truth, dtype=np.float64)
    for prop in proposals:
        if prop.positions.shape != gt.shape:
            raise ValueError(f"proposal horizon {prop.positions.shape} does not match "
                             f"ground truth {gt.shape}")
        d = float(np.mean(np.linalg.norm(prop.positions - gt, axis=1)))
        prop.avg_distance = d
        prop.label = 1 if d <= gamma else 0
    return proposals


def _proposal_increments(positions, origin):
    if origin is not None:
        pts = np.vstack([np.asarray(origin, dtype=np.float64)[None, :], positions])
    else:
        pts = positions
    return np.diff(pts, axis=0)


def score_proposals(proposals, v_i: Value, params: ClassifierParams, origin=None):
    """Score each proposal in (0, 1).

    The proposal's increment sequence runs through the GRU; the final
    hidden state concatenated with the (detached) condition tensor feeds
    the sigmoid head. Returns the score graph nodes aligned with the
    proposals; each proposal's .score is set to the float value."""
    if len(proposals) == 0:
        raise ValueError("score_proposals: empty proposal set")
    cond = v_i.detach()
    scores = []
    for prop in proposals:
        incs = _proposal_increments(prop.positions, origin)
        h = Value(np.zeros(params.hidden_dim))
        for inc in incs:
            h = gru_step(Value(inc), h, params.gru)
        feat = concat([h, cond])
        s = sigmoid(affine(params.W2, tanh(affine(params.W1, feat, params.b1)), params.b2))
        prop.score = float(s.data[0])
        scores.append(s)
    return scores


def bce_terms(scores, labels, w: Value):
    """Per-proposal -w (y log x + (1-y) log(1-x)) with clamped scores."""
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} scores vs {len(labels)} labels")
    terms = []
    for s, y in zip(scores, labels):
        x = clip(s, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
        if y not in (0, 1):
            raise ValueError(f"labels must be binary, got {y!r}")
        inner = log(x) if y == 1 else log(sub(1.0, x))
        terms.append(neg(w * inner))
    return terms


def classification_loss(scores, labels, w: Value) -> Value:
    """Weighted binary cross-entropy averaged over the proposal set."""
    terms = bce_terms(scores, labels, w)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def select_final_trajectory(proposals, k: int = 1):
    """Top-k proposals by descending score; ties resolved by lower
    average distance when known, then by original index, so the result
    is invariant to input permutations."""
    if k > len(proposals):
        raise ValueError(f"k={k} exceeds proposal count {len(proposals)}")
    order = sorted(
        range(len(proposals)),
        key=lambda i: (
            -(proposals[i].score if proposals[i].score is not None else 0.0),
            proposals[i].avg_distance if proposals[i].avg_distance is not None else np.inf,
            i,
        ),
    )
    return [proposals[i] for i in order[:k]]
