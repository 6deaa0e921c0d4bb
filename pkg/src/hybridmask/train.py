"""Training loops: baseline ArcFace, fixed-k masking + MixUp, adaptive MixUp.

The adaptive loop alternates per batch: the strategy network is updated
first, against rewards computed from the recognition network as it stood
before that batch; the recognition network then takes its own step on the
same mixed batch.

Randomness comes from independent streams spawned from ``cfg.seed``
(network init, batch order, MixUp plans, k sampling, policy init), so a
singleton candidate set reproduces the fixed-k run exactly.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigError, RejectedInputError
from .freq import BlockParams, MaskKey, ppfr_fd_mask
from .mixup import apply_mix, check_feasible, sample_mix_plan
from .nn import ArcFaceConfig, FaceNet, ParamStore, sgd_step
from .strategy import (
    MovingBaseline,
    PolicyPMF,
    StrategyNet,
    compute_rewards,
    reinforce_update,
    sample_k,
    score_function_logit_grad,
)

log = logging.getLogger(__name__)

MODES = ("baseline", "fixed", "adaptive")


@dataclass
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    a: float = 1.0
    b: float = 1.0
    candidate_set: tuple[int, ...] = (2, 3, 4)
    max_weight: float = 0.55
    seed: int = 0
    arc_scale: float = 64.0
    arc_margin: float = 0.5
    hidden: tuple[int, ...] = (256, 64)
    policy_hidden: tuple[int, ...] = (64,)
    policy_lr: float = 1e-3
    policy: str = "learned"  # or "uniform": fixed uniform PMF, no updates
    policy_cadence: str = "batch"  # or "epoch"
    policy_warmup: int = 0  # epochs of FR training before strategy updates start
    reward_baseline: bool = False

    def __post_init__(self):
        self.candidate_set = tuple(int(k) for k in self.candidate_set)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.policy_hidden = tuple(int(h) for h in self.policy_hidden)

    def validate(self) -> None:
        ks = self.candidate_set
        if not ks or min(ks) < 1 or any(b <= a for a, b in zip(ks, ks[1:])):
            raise ConfigError(f"candidate_set must be non-empty, strictly increasing, >= 1: {ks}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.policy not in ("learned", "uniform"):
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.policy_cadence not in ("batch", "epoch"):
            raise ConfigError(f"unknown policy_cadence {self.policy_cadence!r}")
        if self.policy_warmup < 0:
            raise ConfigError("policy_warmup must be >= 0")
        if not self.hidden or not self.policy_hidden:
            raise ConfigError("hidden layer lists must be non-empty")

    def arcface(self, class_count: int) -> ArcFaceConfig:
        try:
            return ArcFaceConfig(self.arc_scale, self.arc_margin, class_count)
        except RejectedInputError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        for key in ("candidate_set", "hidden", "policy_hidden"):
            doc[key] = list(doc[key])
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class RunRecord:
    mode: str
    seed: int
    config: dict
    epoch_losses: list[float] = field(default_factory=list)
    step_k: list[int] = field(default_factory=list)
    candidate_set: list[int] = field(default_factory=list)
    k_proportions: list[float] = field(default_factory=list)
    accuracy: float = float("nan")
    checkpoints: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunRecord":
        return cls(**doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @property
    def mean_k(self) -> float:
        return float(np.mean(self.step_k)) if self.step_k else float("nan")


@dataclass
class TrainResult:
    record: RunRecord
    net: FaceNet
    params: ParamStore
    telemetry: list[dict] = field(default_factory=list)
    policy_params: ParamStore | None = None


def smoothed(values, window: int = 3) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    values = np.asarray(values, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def k_proportions(step_k, candidate_set) -> list[float]:
    counts = np.array([sum(1 for k in step_k if k == c) for c in candidate_set], dtype=np.float64)
    total = counts.sum()
    return (counts / total).tolist() if total else [0.0] * len(candidate_set)


class _Streams:
    def __init__(self, seed: int):
        init, order, mix, choice, policy = np.random.SeedSequence(seed).spawn(5)
        self.init = np.random.default_rng(init)
        self.order = np.random.default_rng(order)
        self.mix = np.random.default_rng(mix)
        self.choice = np.random.default_rng(choice)
        self.policy = np.random.default_rng(policy)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _one_hot(labels, class_count: int) -> np.ndarray:
    out = np.zeros((len(labels), class_count))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def mask_images(images, key: MaskKey, params: BlockParams = BlockParams()) -> np.ndarray:
    if len(images) == 0:
        return np.zeros((0, key.n_channels) + tuple(s // params.block_h for s in np.shape(images)[1:]))
    return ppfr_fd_mask(images, key, params)


class _RunWriter:
    def __init__(self, run_dir, mode: str, cfg: TrainConfig, key: MaskKey | None):
        self.dir = None if run_dir is None else Path(run_dir)
        if self.dir is None:
            return
        (self.dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        snapshot = {"mode": mode, **cfg.to_dict()}
        (self.dir / "config.json").write_text(json.dumps(snapshot, indent=1) + "\n")
        if key is not None:
            key.save(self.dir / "key.json")
        self._telemetry = open(self.dir / "telemetry.jsonl", "w")

    def event(self, row: dict) -> None:
        if self.dir is not None:
            self._telemetry.write(json.dumps(row) + "\n")

    def finish(self, record: RunRecord, stores: dict[str, ParamStore]) -> None:
        if self.dir is None:
            return
        self._telemetry.close()
        for name, store in stores.items():
            rel = f"checkpoints/{name}.fmz"
            store.save(self.dir / rel)
            record.checkpoints[name] = rel
        record.save(self.dir / "record.json")

    def abort(self) -> None:
        if self.dir is not None and not self._telemetry.closed:
            self._telemetry.flush()
            self._telemetry.close()


def _check_candidates(cfg: TrainConfig) -> None:
    for k in cfg.candidate_set:
        try:
            check_feasible(k, cfg.max_weight)
        except RejectedInputError as exc:
            raise ConfigError(str(exc)) from exc
    if max(cfg.candidate_set) > cfg.batch_size / 4:
        warnings.warn(
            f"max candidate k={max(cfg.candidate_set)} exceeds batch_size/4="
            f"{cfg.batch_size / 4:g}; large k tends not to converge",
            stacklevel=3,
        )


def train_baseline(data: Dataset, cfg: TrainConfig, run_dir=None) -> TrainResult:
    """ArcFace on raw images (the F1 reference model); accuracy is acc_bsl."""
    cfg.validate()
    train, test = data.train(), data.test()
    streams = _Streams(cfg.seed)
    h, w = data.image_shape
    net = FaceNet(h * w, cfg.arcface(data.class_count), cfg.hidden)
    store = net.init(streams.init)
    writer = _RunWriter(run_dir, "baseline", cfg, None)
    record = RunRecord(mode="baseline", seed=cfg.seed, config=cfg.to_dict(), candidate_set=[1])
    try:
        step = 0
        for epoch in range(cfg.epochs):
            losses = []
            for idx in _batches(len(train), cfg.batch_size, streams.order):
                x = train.images[idx]
                targets = _one_hot(train.labels[idx], data.class_count)
                losses.append(net.loss_and_grad(store, x, targets))
                sgd_step(store, cfg.lr, cfg.momentum, cfg.weight_decay)
                writer.event({"step": step, "epoch": epoch, "loss": losses[-1]})
                step += 1
                record.step_k.append(1)
            record.epoch_losses.append(float(np.mean(losses)))
            log.info("baseline epoch %d loss %.4f", epoch, record.epoch_losses[-1])
    except Exception:
        writer.abort()
        raise
    record.k_proportions = [1.0] if record.step_k else [0.0]
    record.accuracy = net.accuracy(store, test.images, test.labels)
    writer.finish(record, {"fr": store})
    return TrainResult(record, net, store)


def train_fixed(data: Dataset, k: int, key: MaskKey, cfg: TrainConfig, run_dir=None) -> TrainResult:
    """Masking + MixUp with a fixed mixing count; accuracy is acc_mask."""
    if k < 2:
        raise ConfigError(f"masked MixUp training needs k >= 2, got {k}")
    cfg = dataclasses.replace(cfg, candidate_set=(int(k),))
    return _train_masked(data, key, cfg, "fixed", run_dir)


def train_adaptive(data: Dataset, key: MaskKey, cfg: TrainConfig, run_dir=None) -> TrainResult:
    """Masking + MixUp where k is drawn per batch from the strategy network."""
    return _train_masked(data, key, cfg, "adaptive", run_dir)


def _train_masked(data: Dataset, key: MaskKey, cfg: TrainConfig, mode: str, run_dir) -> TrainResult:
    cfg.validate()
    _check_candidates(cfg)
    try:
        key.validate()
    except RejectedInputError as exc:
        raise ConfigError(f"invalid mask key: {exc}") from exc
    train, test = data.train(), data.test()
    x_train = mask_images(train.images, key)
    x_test = mask_images(test.images, key)
    in_dim = int(np.prod(x_train.shape[1:])) if len(x_train) else int(np.prod(x_test.shape[1:]))

    streams = _Streams(cfg.seed)
    net = FaceNet(in_dim, cfg.arcface(data.class_count), cfg.hidden)
    store = net.init(streams.init)

    adaptive = mode == "adaptive"
    learn_policy = adaptive and cfg.policy == "learned"
    policy = StrategyNet(in_dim, cfg.candidate_set, cfg.policy_hidden)
    pstore = policy.init(streams.policy) if adaptive else None
    baseline = MovingBaseline() if cfg.reward_baseline else None
    uniform = np.full(len(cfg.candidate_set), 1.0 / len(cfg.candidate_set))

    record = RunRecord(mode=mode, seed=cfg.seed, config=cfg.to_dict(), candidate_set=list(cfg.candidate_set))
    writer = _RunWriter(run_dir, mode, cfg, key)
    telemetry: list[dict] = []
    fr_updates = 0
    try:
        step = 0
        for epoch in range(cfg.epochs):
            losses = []
            for idx in _batches(len(train), cfg.batch_size, streams.order):
                xb, yb = x_train[idx], train.labels[idx]
                row = {"step": step, "epoch": epoch, "fr_version": fr_updates}
                if adaptive:
                    if learn_policy:
                        pmf = policy.forward(pstore, xb)
                    else:
                        pmf = PolicyPMF(cfg.candidate_set, uniform)
                    k = sample_k(pmf, streams.choice)
                    row["pmf"] = pmf.probs.tolist()
                else:
                    k = cfg.candidate_set[0]
                plan = sample_mix_plan(len(idx), k, cfg.max_weight, streams.mix)
                mixed = apply_mix(xb, yb, plan)

                if adaptive:
                    reward = compute_rewards(net, store, mixed, cfg)
                    row.update(L1=reward.L1, L2=reward.L2, combined=reward.combined)
                    b = baseline.get() if baseline else 0.0
                    if learn_policy and epoch >= cfg.policy_warmup:
                        if cfg.policy_cadence == "batch":
                            reinforce_update(pstore, policy, pmf, k, reward, cfg.policy_lr, b)
                        else:
                            _accumulate_policy_grad(pstore, policy, pmf, k, reward.combined - b)
                    # The baseline tracks rewards through the warm-up as well.
                    if baseline:
                        baseline.update(reward.combined)

                targets = mixed.targets(data.class_count)
                losses.append(net.loss_and_grad(store, mixed.tensors, targets))
                sgd_step(store, cfg.lr, cfg.momentum, cfg.weight_decay)
                fr_updates += 1
                row.update(k=int(k), loss=losses[-1])
                telemetry.append(row)
                writer.event(row)
                record.step_k.append(int(k))
                step += 1
            if learn_policy and cfg.policy_cadence == "epoch" and epoch >= cfg.policy_warmup:
                _apply_policy_grad(pstore, cfg.policy_lr)
            record.epoch_losses.append(float(np.mean(losses)))
            log.info("%s epoch %d loss %.4f", mode, epoch, record.epoch_losses[-1])
    except Exception:
        writer.abort()
        raise
    record.k_proportions = k_proportions(record.step_k, cfg.candidate_set)
    record.accuracy = net.accuracy(store, x_test, test.labels)
    stores = {"fr": store}
    if pstore is not None:
        stores["policy"] = pstore
    writer.finish(record, stores)
    return TrainResult(record, net, store, telemetry, pstore)


def _accumulate_policy_grad(pstore: ParamStore, policy: StrategyNet, pmf: PolicyPMF, k: int, reward: float) -> None:
    policy.backward(pstore, pmf, -score_function_logit_grad(pmf, k, reward))


def _apply_policy_grad(pstore: ParamStore, lr: float) -> None:
    for name in pstore.names():
        pstore.values[name] = pstore.values[name] - lr * pstore.grads[name]
    pstore.zero_grad()
