"""Policy over the number of images mixed per batch, trained with REINFORCE.

The policy is rewarded with the recognition loss, so it learns to pick the
mixing count that the face recognition network finds hardest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericFailure, RejectedInputError
from .mixup import MixedBatch
from .nn import Dense, FaceNet, LeakyReLU, ParamStore, mlp, sgd_step, softmax


@dataclass
class PolicyPMF:
    candidate_set: tuple[int, ...]
    probs: np.ndarray
    cache: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.candidate_set = tuple(int(k) for k in self.candidate_set)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (len(self.candidate_set),):
            raise RejectedInputError("probs and candidate_set lengths differ")

    def index(self, k: int) -> int:
        try:
            return self.candidate_set.index(int(k))
        except ValueError:
            raise RejectedInputError(f"k={k} is not in {self.candidate_set}") from None

    def prob(self, k: int) -> float:
        return float(self.probs[self.index(k)])

    def to_dict(self) -> dict:
        return {str(k): float(p) for k, p in zip(self.candidate_set, self.probs)}


@dataclass(frozen=True)
class RewardPair:
    L1: float
    L2: float
    combined: float

    @classmethod
    def weighted(cls, l1: float, l2: float, a: float = 1.0, b: float = 1.0) -> "RewardPair":
        return cls(float(l1), float(l2), float(a * l1 + b * l2))


class StrategyNet:
    """Per-image dense encoder, mean-pooled over the batch, then a softmax layer.

    Pooling collapses the batch so a whole batch yields one PMF.
    """

    def __init__(self, input_dim: int, candidate_set, hidden=(64,), slope: float = 0.1):
        self.candidate_set = tuple(int(k) for k in candidate_set)
        self.encoder = mlp("policy", (int(input_dim), *hidden), slope)
        self.act = LeakyReLU("policy.pool_act", slope)
        self.out = Dense("policy.out", hidden[-1], len(self.candidate_set))

    def init(self, rng: np.random.Generator) -> ParamStore:
        store = ParamStore()
        self.encoder.init(store, rng)
        self.out.init(store, rng)
        # Zero output layer: training starts from the uniform PMF.
        store.values["policy.out.W"][:] = 0.0
        return store

    def forward(self, store, batch) -> PolicyPMF:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim < 1 or batch.shape[0] == 0:
            raise RejectedInputError("policy needs a non-empty batch")
        emb, enc_cache = self.encoder.forward(store, batch)
        act, act_cache = self.act.forward(store, emb)
        pooled = act.mean(axis=0, keepdims=True)
        logits, out_cache = self.out.forward(store, pooled)
        probs = softmax(logits[0])
        return PolicyPMF(self.candidate_set, probs, cache=(batch.shape[0], enc_cache, act_cache, out_cache))

    def backward(self, store, pmf: PolicyPMF, dlogits) -> None:
        n, enc_cache, act_cache, out_cache = pmf.cache
        dpooled = self.out.backward(store, out_cache, np.asarray(dlogits)[None, :])
        dact = np.repeat(dpooled / n, n, axis=0)
        demb = self.act.backward(store, act_cache, dact)
        self.encoder.backward(store, enc_cache, demb)


class LogitPolicy:
    """Input-independent policy: softmax over one free logit per candidate."""

    def __init__(self, candidate_set):
        self.candidate_set = tuple(int(k) for k in candidate_set)

    def init(self, rng=None) -> ParamStore:
        store = ParamStore()
        store.add("policy.logits", np.zeros(len(self.candidate_set)))
        return store

    def forward(self, store, batch=None) -> PolicyPMF:
        return PolicyPMF(self.candidate_set, softmax(store["policy.logits"]))

    def backward(self, store, pmf, dlogits) -> None:
        store.accumulate("policy.logits", np.asarray(dlogits, dtype=np.float64))


def policy_forward(masked_batch, store: ParamStore, net) -> PolicyPMF:
    return net.forward(store, masked_batch)


def sample_k(pmf: PolicyPMF, rng: np.random.Generator) -> int:
    cdf = np.cumsum(pmf.probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return pmf.candidate_set[min(idx, len(cdf) - 1)]


def score_function_logit_grad(pmf: PolicyPMF, chosen_k: int, reward: float) -> np.ndarray:
    """Gradient of ``reward * log p(chosen_k)`` w.r.t. the policy logits."""
    onehot = np.zeros_like(pmf.probs)
    onehot[pmf.index(chosen_k)] = 1.0
    return reward * (onehot - pmf.probs)


def reinforce_update(
    store: ParamStore,
    net,
    pmf: PolicyPMF,
    chosen_k: int,
    reward,
    lr: float,
    baseline: float = 0.0,
) -> None:
    """One gradient-ascent step on ``(reward - baseline) * log p(chosen_k)``.

    ``pmf`` must come from ``net.forward`` with the same ``store``.
    """
    r = reward.combined if isinstance(reward, RewardPair) else float(reward)
    ascent = score_function_logit_grad(pmf, chosen_k, r - baseline)
    store.zero_grad()
    net.backward(store, pmf, -ascent)
    for name in store.names():
        new = store.values[name] - lr * store.grads[name]
        if not np.all(np.isfinite(new)):
            raise NumericFailure("non-finite policy update", name)
        store.values[name] = new
    store.zero_grad()


class MovingBaseline:
    """Exponential moving average of past rewards (optional variance reduction)."""

    def __init__(self, decay: float = 0.9):
        self.decay = decay
        self.value = None

    def get(self) -> float:
        return 0.0 if self.value is None else self.value

    def update(self, reward: float) -> None:
        self.value = reward if self.value is None else self.decay * self.value + (1 - self.decay) * reward


def compute_rewards(frnet: FaceNet, store: ParamStore, mixed: MixedBatch, cfg) -> RewardPair:
    """reward1 on the current network, reward2 after one scratch SGD step.

    ``store`` is left untouched; the scratch copy is discarded.
    """
    x = mixed.tensors
    targets = mixed.targets(frnet.arc.class_count)
    l1 = frnet.loss(store, x, targets)
    scratch = store.copy()
    scratch.zero_grad()
    frnet.loss_and_grad(scratch, x, targets)
    sgd_step(scratch, cfg.lr, cfg.momentum, cfg.weight_decay)
    l2 = frnet.loss(scratch, x, targets)
    if not (np.isfinite(l1) and np.isfinite(l2)):
        raise NumericFailure(f"reward is non-finite (L1={l1}, L2={l2})", "compute_rewards")
    return RewardPair.weighted(l1, l2, cfg.a, cfg.b)
