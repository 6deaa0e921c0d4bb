"""Black-box reconstruction attacker: learns masked image -> original image.

A deterministic dense encoder-decoder trained on mean absolute pixel
error, used in place of a conditional GAN. Every masking method under
comparison should be attacked with the same :class:`AttackConfig`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericFailure, RejectedInputError
from ..nn import ParamStore, mlp, sgd_step


@dataclass(frozen=True)
class AttackConfig:
    hidden: tuple[int, ...] = (256,)
    epochs: int = 100
    # The L1 gradient is scaled by 1/(batch * pixels), hence the large step.
    lr: float = 1.0
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 32
    seed: int = 0


class AttackModel:
    def __init__(self, image_shape, cfg: AttackConfig = AttackConfig()):
        self.image_shape = tuple(int(s) for s in image_shape)
        self.cfg = cfg
        n = self.image_shape[0] * self.image_shape[1]
        self.net = mlp("attack", (n, *cfg.hidden, n))
        self.params = ParamStore()
        self.net.init(self.params, np.random.default_rng(cfg.seed))
        self.losses: list[float] = []

    def reconstruct(self, masked) -> np.ndarray:
        masked = np.asarray(masked, dtype=np.float64)
        out, _ = self.net.forward(self.params, masked)
        return out.reshape(len(masked), *self.image_shape)

    def _step(self, x, y) -> float:
        out, caches = self.net.forward(self.params, x)
        diff = out - y.reshape(len(y), -1)
        loss = float(np.abs(diff).mean())
        if not np.isfinite(loss):
            raise NumericFailure(f"attacker loss is {loss}", "attack")
        self.net.backward(self.params, caches, np.sign(diff) / diff.size)
        sgd_step(self.params, self.cfg.lr, self.cfg.momentum, self.cfg.weight_decay)
        return loss


def train_attacker(masked, originals, cfg: AttackConfig = AttackConfig()) -> AttackModel:
    """Fit the attacker on aligned (masked rendering, original) pairs."""
    masked = np.asarray(masked, dtype=np.float64)
    originals = np.asarray(originals, dtype=np.float64)
    if len(masked) == 0 or masked.shape != originals.shape:
        raise RejectedInputError(
            f"need non-empty aligned pairs, got {masked.shape} and {originals.shape}"
        )
    model = AttackModel(originals.shape[1:], cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    for _ in range(cfg.epochs):
        order = rng.permutation(len(masked))
        losses = [
            model._step(masked[idx], originals[idx])
            for idx in (order[i : i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size))
        ]
        model.losses.append(float(np.mean(losses)))
    return model


def reconstruction_error(model: AttackModel, masked, originals) -> float:
    """Mean absolute pixel error of the attacker's reconstructions."""
    return float(np.abs(model.reconstruct(masked) - np.asarray(originals)).mean())
