"""Block DCT and the keyed frequency-domain masking pipeline.

Images are float arrays of shape ``(..., H, W)`` with values in [0, 1].
A frequency tensor has shape ``(..., channels, block_rows, block_cols)``;
channel ``u * block_w + v`` gathers coefficient ``(u, v)`` of every block.
All functions accept any number of leading batch dimensions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import LoadError, RejectedInputError

__all__ = [
    "BlockParams",
    "MaskKey",
    "dct_matrix",
    "dct2_block",
    "idct2_block",
    "bdct_forward",
    "bdct_inverse",
    "channelize",
    "dechannelize",
    "self_normalize",
    "ppfr_fd_mask",
    "render",
]


@dataclass(frozen=True)
class BlockParams:
    block_h: int = 8
    block_w: int = 8
    stride: int = 8

    def __post_init__(self):
        if min(self.block_h, self.block_w, self.stride) <= 0:
            raise RejectedInputError("block sizes and stride must be positive")
        if not (self.stride == self.block_h == self.block_w):
            raise RejectedInputError(
                "only non-overlapping square blocks are supported "
                f"(got {self.block_h}x{self.block_w}, stride {self.stride})"
            )

    @property
    def n_coeffs(self) -> int:
        return self.block_h * self.block_w

    def position(self, channel: int) -> tuple[int, int]:
        return divmod(channel, self.block_w)

    def channel(self, u: int, v: int) -> int:
        return u * self.block_w + v

    def all_positions(self) -> list[tuple[int, int]]:
        return [(u, v) for u in range(self.block_h) for v in range(self.block_w)]


@lru_cache(maxsize=None)
def _dct_matrix_cached(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] *= np.sqrt(0.5)
    mat.setflags(write=False)
    return mat


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``D`` with ``D[k, i] = a_k cos(pi (2i+1) k / 2n)``."""
    return _dct_matrix_cached(int(n))


def dct2_block(block, params: BlockParams = BlockParams()) -> np.ndarray:
    """Orthonormal 2-D DCT-II of one ``block_h x block_w`` block."""
    block = np.asarray(block, dtype=np.float64)
    if block.shape != (params.block_h, params.block_w):
        raise RejectedInputError(
            f"block shape {block.shape} does not match "
            f"{(params.block_h, params.block_w)}"
        )
    return dct_matrix(params.block_h) @ block @ dct_matrix(params.block_w).T


def idct2_block(coeffs, params: BlockParams = BlockParams()) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (params.block_h, params.block_w):
        raise RejectedInputError(
            f"coefficient shape {coeffs.shape} does not match "
            f"{(params.block_h, params.block_w)}"
        )
    return dct_matrix(params.block_h).T @ coeffs @ dct_matrix(params.block_w)


def bdct_forward(image, params: BlockParams = BlockParams()) -> np.ndarray:
    """Block DCT followed by channelization.

    Returns an array of shape ``(..., block_h * block_w, H // block_h, W // block_w)``.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim < 2:
        raise RejectedInputError("image must have at least two dimensions")
    h, w = image.shape[-2:]
    bh, bw = params.block_h, params.block_w
    if h == 0 or w == 0 or h % bh or w % bw:
        raise RejectedInputError(
            f"image size {h}x{w} is not a positive multiple of the {bh}x{bw} block"
        )
    blocks = np.swapaxes(image.reshape(*image.shape[:-2], h // bh, bh, w // bw, bw), -3, -2)
    coeffs = np.einsum("ui,...ij,vj->...uv", dct_matrix(bh), blocks, dct_matrix(bw), optimize=True)
    return channelize(coeffs)


def channelize(blocks) -> np.ndarray:
    """``(..., rows, cols, bh, bw)`` per-block coefficients -> ``(..., bh*bw, rows, cols)``."""
    blocks = np.asarray(blocks)
    *lead, rows, cols, bh, bw = blocks.shape
    return np.moveaxis(blocks.reshape(*lead, rows, cols, bh * bw), -1, -3)


def dechannelize(freq, block_h: int, block_w: int) -> np.ndarray:
    """Inverse of :func:`channelize`."""
    freq = np.asarray(freq)
    *lead, n, rows, cols = freq.shape
    return np.moveaxis(freq, -3, -1).reshape(*lead, rows, cols, block_h, block_w)


def _positions_to_channels(keep_list, params: BlockParams) -> np.ndarray:
    chans = []
    for pos in keep_list:
        u, v = (int(x) for x in pos)
        if not (0 <= u < params.block_h and 0 <= v < params.block_w):
            raise RejectedInputError(f"position {(u, v)} lies outside the block")
        chans.append(params.channel(u, v))
    if len(set(chans)) != len(chans):
        raise RejectedInputError("keep_list contains duplicate positions")
    return np.asarray(chans, dtype=np.intp)


def bdct_inverse(freq, params: BlockParams = BlockParams(), keep_list=None) -> np.ndarray:
    """Inverse of :func:`bdct_forward`.

    ``freq`` channel ``i`` is placed at block position ``keep_list[i]``;
    positions missing from ``keep_list`` are zero-filled.
    """
    freq = np.asarray(freq, dtype=np.float64)
    if freq.ndim < 3:
        raise RejectedInputError("frequency tensor must have at least three dimensions")
    bh, bw = params.block_h, params.block_w
    if keep_list is None:
        keep_list = params.all_positions()
    chans = _positions_to_channels(keep_list, params)
    if freq.shape[-3] != len(chans):
        raise RejectedInputError(
            f"tensor has {freq.shape[-3]} channels but keep_list has {len(chans)}"
        )
    lead = freq.shape[:-3]
    rows, cols = freq.shape[-2:]
    full = np.zeros((*lead, bh * bw, rows, cols))
    full[..., chans, :, :] = freq
    coeffs = dechannelize(full, bh, bw)
    blocks = np.einsum("ui,...uv,vj->...ij", dct_matrix(bh), coeffs, dct_matrix(bw), optimize=True)
    return np.swapaxes(blocks, -3, -2).reshape(*lead, rows * bh, cols * bw)


def self_normalize(freq) -> np.ndarray:
    """Divide every channel by its maximum absolute value; zero channels pass through."""
    freq = np.asarray(freq, dtype=np.float64)
    peak = np.max(np.abs(freq), axis=(-2, -1), keepdims=True)
    return freq / np.where(peak > 0, peak, 1.0)


@dataclass
class MaskKey:
    """The secret of one masking run.

    Permutations act as ``out[i] = in[perm[i]]``. ``mix_plan`` triples
    ``(target, partner, weight)`` are applied in order, in place:
    ``x[target] = weight * x[target] + (1 - weight) * x[partner]``.
    """

    perm1: list[int]
    mix_plan: list[tuple[int, int, float]]
    perm2: list[int]
    keep_list: list[tuple[int, int]]
    normalize: bool = True
    seed: int | None = field(default=None, compare=False)

    @classmethod
    def identity(cls, params: BlockParams = BlockParams()) -> "MaskKey":
        n = params.n_coeffs
        return cls(
            perm1=list(range(n)),
            mix_plan=[],
            perm2=list(range(n)),
            keep_list=params.all_positions(),
            normalize=False,
        )

    @classmethod
    def generate(
        cls,
        seed: int,
        params: BlockParams = BlockParams(),
        drop=((0, 0),),
        mix_weight: float = 0.5,
    ) -> "MaskKey":
        """Random key: drop ``drop`` positions, two shuffles, successor mixing."""
        dropped = {tuple(int(x) for x in p) for p in drop}
        keep = [p for p in params.all_positions() if p not in dropped]
        n = len(keep)
        rng = np.random.default_rng(seed)
        perm1 = rng.permutation(n).tolist()
        perm2 = rng.permutation(n).tolist()
        mix_plan = [(i, i + 1, float(mix_weight)) for i in range(n - 1)]
        return cls(perm1, mix_plan, perm2, keep, normalize=True, seed=int(seed))

    @property
    def n_channels(self) -> int:
        return len(self.keep_list)

    def validate(self, params: BlockParams = BlockParams()) -> None:
        _positions_to_channels(self.keep_list, params)
        n = self.n_channels
        for name in ("perm1", "perm2"):
            perm = list(getattr(self, name))
            if sorted(perm) != list(range(n)):
                raise RejectedInputError(f"{name} is not a permutation of {n} channels")
        for t, p, w in self.mix_plan:
            if not (0 <= t < n and 0 <= p < n):
                raise RejectedInputError(f"mix triple {(t, p, w)} indexes outside {n} channels")
            if not 0.0 < w < 1.0:
                raise RejectedInputError(f"mix weight {w} is not in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "keep_list": [list(p) for p in self.keep_list],
            "perm1": [int(i) for i in self.perm1],
            "mix_plan": [[int(t), int(p), float(w)] for t, p, w in self.mix_plan],
            "perm2": [int(i) for i in self.perm2],
            "normalize": bool(self.normalize),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MaskKey":
        try:
            return cls(
                perm1=[int(i) for i in doc["perm1"]],
                mix_plan=[(int(t), int(p), float(w)) for t, p, w in doc["mix_plan"]],
                perm2=[int(i) for i in doc["perm2"]],
                keep_list=[(int(u), int(v)) for u, v in doc["keep_list"]],
                normalize=bool(doc.get("normalize", True)),
                seed=doc.get("seed"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise RejectedInputError(f"malformed mask key: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "MaskKey":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise LoadError(str(exc), path) from exc
        return cls.from_dict(doc)


def _mix_channels(freq: np.ndarray, mix_plan) -> np.ndarray:
    out = freq.copy()
    for target, partner, weight in mix_plan:
        out[..., target, :, :] = (
            weight * out[..., target, :, :] + (1.0 - weight) * out[..., partner, :, :]
        )
    return out


def ppfr_fd_mask(image, key: MaskKey, params: BlockParams = BlockParams()) -> np.ndarray:
    """Mask image(s): BDCT, channel selection, shuffle, normalize, mix, shuffle, normalize."""
    key.validate(params)
    freq = bdct_forward(image, params)
    freq = freq[..., _positions_to_channels(key.keep_list, params), :, :]
    freq = freq[..., np.asarray(key.perm1, dtype=np.intp), :, :]
    if key.normalize:
        freq = self_normalize(freq)
    freq = _mix_channels(freq, key.mix_plan)
    freq = freq[..., np.asarray(key.perm2, dtype=np.intp), :, :]
    if key.normalize:
        freq = self_normalize(freq)
    return freq


def render(freq, key: MaskKey, params: BlockParams = BlockParams()) -> np.ndarray:
    """Image-shaped view of a masked tensor (channel ``i`` placed at ``keep_list[i]``)."""
    return bdct_inverse(freq, params, key.keep_list)
