"""End-to-end measurement of one masking method.

The training split plays the attacker's auxiliary dataset; all scores are
measured on the test split. Masked tensors are rendered back to image
shape before they reach the reference model, the metric or the attacker.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..freq import BlockParams, MaskKey, ppfr_fd_mask, render
from ..mixup import DEFAULT_MAX_WEIGHT, apply_mix, sample_mix_plan
from .attack import AttackConfig, AttackModel, reconstruction_error, train_attacker
from .metrics import msssim_distance
from .scores import MethodScores, attack_scores, feature_score, visual_score


def masked_views(
    images,
    labels,
    key: MaskKey,
    k_values=(1,),
    k_probs=None,
    max_weight: float = DEFAULT_MAX_WEIGHT,
    batch_size: int = 32,
    rng: np.random.Generator | None = None,
    params: BlockParams = BlockParams(),
) -> np.ndarray:
    """Mask, mix within consecutive batches, and render; row ``r`` is led by image ``r``.

    Each batch draws its ``k`` from ``k_values`` with probabilities ``k_probs``
    (uniform when omitted).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    freq = ppfr_fd_mask(images, key, params)
    k_values = [int(k) for k in k_values]
    out = np.empty_like(images)
    for start in range(0, len(images), batch_size):
        sl = slice(start, start + batch_size)
        k = k_values[0] if len(k_values) == 1 else int(rng.choice(k_values, p=k_probs))
        plan = sample_mix_plan(len(images[sl]), k, 1.0 if k == 1 else max_weight, rng)
        mixed = apply_mix(freq[sl], labels[sl], plan)
        out[sl] = render(mixed.tensors, key, params)
    return out


@dataclass
class MethodEvaluation:
    scores: MethodScores
    attacker: AttackModel
    attacker_error: float
    S2_skipped: int = 0
    S4_skipped: int = 0


def evaluate_method(
    name: str,
    data,
    key: MaskKey,
    f1_net,
    f1_params,
    acc_mask: float,
    acc_bsl: float,
    k_values=(1,),
    k_probs=None,
    max_weight: float = DEFAULT_MAX_WEIGHT,
    batch_size: int = 32,
    attack_cfg: AttackConfig = AttackConfig(),
    seed: int = 0,
    metric=msssim_distance,
) -> MethodEvaluation:
    aux_rng, test_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    train, test = data.train(), data.test()
    aux = masked_views(train.images, train.labels, key, k_values, k_probs, max_weight, batch_size, aux_rng)
    shown = masked_views(test.images, test.labels, key, k_values, k_probs, max_weight, batch_size, test_rng)

    s1 = visual_score(test.images, shown, metric)
    s2 = feature_score(f1_net, f1_params, test.images, shown)
    attacker = train_attacker(aux, train.images, attack_cfg)
    s3, s4 = attack_scores(attacker, shown, test.images, f1_net, f1_params, metric)
    recon = attacker.reconstruct(shown)
    s4_full = feature_score(f1_net, f1_params, test.images, recon)
    return MethodEvaluation(
        scores=MethodScores(name, s1, s2.value, s3, s4, acc_mask, acc_bsl),
        attacker=attacker,
        attacker_error=reconstruction_error(attacker, shown, test.images),
        S2_skipped=s2.skipped,
        S4_skipped=s4_full.skipped,
    )
