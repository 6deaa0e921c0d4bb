"""Privacy and accuracy scores for masking methods, and their fusion.

S1/S3 are perceptual distances (masked or reconstructed vs original), S2/S4
are one minus the mean cosine similarity of reference-model features. The
fused privacy score weights the visual pair by ``alpha`` and the attack pair
by ``beta``; both it and the masked accuracy are min-max normalized across
the compared methods before being averaged.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import RejectedInputError
from .metrics import msssim_distance

DEFAULT_ALPHA = 0.4
DEFAULT_BETA = 0.6
DEFAULT_RANGE = (0.5, 1.0)


@dataclass(frozen=True)
class FeatureScore:
    value: float
    skipped: int = 0


@dataclass
class MethodScores:
    """Raw measurements for one masking method, before fusion."""

    method_name: str
    S1: float
    S2: float
    S3: float
    S4: float
    acc_mask: float
    acc_bsl: float


@dataclass
class ScoreCard:
    method_name: str
    S1: float
    S2: float
    S3: float
    S4: float
    acc_bsl: float
    acc_mask: float
    acc_ratio: float
    raw_pp: float
    Score_pp: float
    Score_cls: float
    Score: float


def _check_pairs(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise RejectedInputError(f"image sets differ in shape: {a.shape} vs {b.shape}")
    if len(a) == 0:
        raise RejectedInputError("no images to score")
    return a, b


def visual_score(originals, others, metric=msssim_distance) -> float:
    """Mean perceptual distance over aligned image pairs."""
    a, b = _check_pairs(originals, others)
    return float(np.mean(metric(a, b)))


def s1_visual(originals, masked_rendered, metric=msssim_distance) -> float:
    return visual_score(originals, masked_rendered, metric)


def feature_score(net, params, originals, others) -> FeatureScore:
    """``1 - mean cosine(F1(original), F1(other))``; zero-norm pairs are skipped."""
    a, b = _check_pairs(originals, others)
    ea, eb = net.embed(params, a), net.embed(params, b)
    na, nb = np.linalg.norm(ea, axis=1), np.linalg.norm(eb, axis=1)
    ok = (na > 0) & (nb > 0)
    skipped = int((~ok).sum())
    if not ok.any():
        return FeatureScore(float("nan"), skipped)
    cos = (ea[ok] * eb[ok]).sum(axis=1) / (na[ok] * nb[ok])
    return FeatureScore(float(1.0 - np.clip(cos, -1.0, 1.0).mean()), skipped)


def s2_feature(net, params, originals, masked_rendered) -> FeatureScore:
    return feature_score(net, params, originals, masked_rendered)


def attack_scores(attacker, masked_test, originals, net, params, metric=msssim_distance):
    """(S3, S4) for the attacker's reconstructions of ``masked_test``."""
    recon = attacker.reconstruct(masked_test)
    return (
        visual_score(originals, recon, metric),
        feature_score(net, params, originals, recon).value,
    )


def normalize(values, lo: float = 0.5, hi: float = 1.0) -> np.ndarray:
    """Linear map of the population min to ``lo`` and max to ``hi``.

    A population with no spread maps entirely to ``hi``.
    """
    values = np.asarray(values, dtype=np.float64)
    vmin, vmax = values.min(), values.max()
    if vmax == vmin:
        return np.full(values.shape, float(hi))
    return lo + (hi - lo) * (values - vmin) / (vmax - vmin)


def privacy_raw(s1, s2, s3, s4, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA) -> float:
    return alpha * (s1 + s2) + beta * (s3 + s4)


def combined_score(score_pp: float, score_cls: float) -> float:
    return (score_pp + score_cls) / 2.0


def fuse_scores(methods, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA, norm_range=DEFAULT_RANGE) -> list[ScoreCard]:
    methods = list(methods)
    if not methods:
        raise RejectedInputError("need at least one method to score")
    lo, hi = norm_range
    raw_pp = np.array([privacy_raw(m.S1, m.S2, m.S3, m.S4, alpha, beta) for m in methods])
    pp = normalize(raw_pp, lo, hi)
    cls = normalize([m.acc_mask for m in methods], lo, hi)
    cards = []
    for m, raw, p, c in zip(methods, raw_pp, pp, cls):
        ratio = m.acc_mask / m.acc_bsl if m.acc_bsl else float("nan")
        cards.append(
            ScoreCard(
                method_name=m.method_name,
                S1=float(m.S1), S2=float(m.S2), S3=float(m.S3), S4=float(m.S4),
                acc_bsl=float(m.acc_bsl), acc_mask=float(m.acc_mask), acc_ratio=float(ratio),
                raw_pp=float(raw), Score_pp=float(p), Score_cls=float(c),
                Score=combined_score(float(p), float(c)),
            )
        )
    return cards


REPORT_COLUMNS = [
    "method_name", "Score", "Score_pp", "Score_cls", "acc_mask", "acc_bsl",
    "acc_ratio", "S1", "S2", "S3", "S4", "raw_pp",
]


def write_report(cards, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / "report.csv", out_dir / "report.json"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for card in cards:
            writer.writerow({k: asdict(card)[k] for k in REPORT_COLUMNS})
    json_path.write_text(json.dumps([asdict(c) for c in cards], indent=1) + "\n")
    return csv_path, json_path
