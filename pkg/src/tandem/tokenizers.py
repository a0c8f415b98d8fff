"""Modality-specific tokenizers.

Images are sliced into non-overlapping P x P patches, flattened in
(row, col, channel) order, linearly projected to the encoder width, prepended
with a learned class vector, and given additive position embeddings. Text
token ids are embedded from a word table, with additive position and segment
embeddings and a learned class vector at position 0. Both tokenizers produce
plain sequences for the shared encoder; there is no modality-type embedding.

Pixel inputs are expected pre-normalized to [-1, 1] (the synthetic data
generator guarantees this).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError, TruncationError, VocabularyError
from .rng import Rng
from .tensor import Tensor

INIT_STD = 0.02


@dataclass
class ImageTokenizerParams:
    """Patch projection, class vector, and (grid*grid + 1) position table."""

    patch: int
    grid: int
    channels: int
    proj: Tensor   # (patch*patch*channels, width)
    cls: Tensor    # (width,)
    pos: Tensor    # (grid*grid + 1, width)

    def __post_init__(self):
        ppc = self.patch * self.patch * self.channels
        if self.proj.shape[0] != ppc:
            raise ShapeError(
                f"patch projection expects {ppc} rows for patch {self.patch}, "
                f"got {self.proj.shape[0]}"
            )
        if self.pos.shape[0] != self.grid * self.grid + 1:
            raise ShapeError(
                f"position table has {self.pos.shape[0]} rows, grid {self.grid} "
                f"needs {self.grid * self.grid + 1}"
            )

    @property
    def width(self) -> int:
        return self.proj.shape[1]

    def tensors(self) -> dict:
        return {"img_tok/proj": self.proj, "img_tok/cls": self.cls, "img_tok/pos": self.pos}


@dataclass
class TextTokenizerParams:
    """Word/position/segment tables, class vector, and special token ids."""

    word: Tensor   # (vocab, width)
    pos: Tensor    # (max_len, width)
    seg: Tensor    # (2, width)
    cls: Tensor    # (width,)
    pad_id: int = 0
    cls_id: int = 1
    sep_id: int = 2
    mask_id: int = 3

    def __post_init__(self):
        vocab = self.word.shape[0]
        for name in ("pad_id", "cls_id", "sep_id", "mask_id"):
            if not 0 <= getattr(self, name) < vocab:
                raise VocabularyError(f"{name}={getattr(self, name)} outside vocab of {vocab}")

    @property
    def vocab_size(self) -> int:
        return self.word.shape[0]

    @property
    def max_len(self) -> int:
        return self.pos.shape[0]

    @property
    def width(self) -> int:
        return self.word.shape[1]

    def tensors(self) -> dict:
        return {
            "txt_tok/word": self.word,
            "txt_tok/pos": self.pos,
            "txt_tok/seg": self.seg,
            "txt_tok/cls": self.cls,
        }


@dataclass
class TextSample:
    """Raw token ids of sentence A and optional sentence B, plus the NSP label."""

    a: np.ndarray
    b: np.ndarray | None = None
    is_next: bool = False

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.int64)
        if self.b is not None:
            self.b = np.asarray(self.b, dtype=np.int64)


def init_image_tokenizer(patch, img_side, channels, width, rng: Rng, dtype) -> ImageTokenizerParams:
    grid = img_side // patch
    ppc = patch * patch * channels
    return ImageTokenizerParams(
        patch=patch,
        grid=grid,
        channels=channels,
        proj=Tensor(rng.truncated_normal((ppc, width), INIT_STD), requires_grad=True, dtype=dtype),
        cls=Tensor(np.zeros(width), requires_grad=True, dtype=dtype),
        pos=Tensor(rng.truncated_normal((grid * grid + 1, width), INIT_STD), requires_grad=True, dtype=dtype),
    )


def init_text_tokenizer(vocab_size, max_len, width, rng: Rng, dtype) -> TextTokenizerParams:
    return TextTokenizerParams(
        word=Tensor(rng.truncated_normal((vocab_size, width), INIT_STD), requires_grad=True, dtype=dtype),
        pos=Tensor(rng.truncated_normal((max_len, width), INIT_STD), requires_grad=True, dtype=dtype),
        seg=Tensor(rng.truncated_normal((2, width), INIT_STD), requires_grad=True, dtype=dtype),
        cls=Tensor(np.zeros(width), requires_grad=True, dtype=dtype),
    )


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """Slice (H, W, C) or (B, H, W, C) pixels into raster-ordered flat patches.

    Returns (N, patch*patch*C) or (B, N, patch*patch*C) with N = HW/patch^2;
    each row is one patch flattened in (row, col, channel) order.
    """
    image = np.asarray(image)
    batched = image.ndim == 4
    if image.ndim not in (3, 4):
        raise ShapeError(f"patchify expects (H, W, C) or (B, H, W, C), got {image.shape}")
    h, w, c = image.shape[-3:]
    if h % patch or w % patch:
        raise ShapeError(f"image {h}x{w} is not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    lead = image.shape[:1] if batched else ()
    x = image.reshape(lead + (gh, patch, gw, patch, c))
    x = x.transpose((0, 1, 3, 2, 4, 5) if batched else (0, 2, 1, 3, 4))
    return np.ascontiguousarray(x.reshape(lead + (gh * gw, patch * patch * c)))


def embed_image(image: np.ndarray, params: ImageTokenizerParams) -> Tensor:
    """Project patches and prepend the class vector: output (N+1, D) or (B, N+1, D)."""
    patches = patchify(image, params.patch)
    n = patches.shape[-2]
    if n + 1 != params.pos.shape[0]:
        raise ShapeError(
            f"{n} patches need a position table of {n + 1} rows, have "
            f"{params.pos.shape[0]}; resize it explicitly with interpolate_pos_embed"
        )
    dtype = params.proj.data.dtype
    x = T.matmul(Tensor(patches.astype(dtype)), params.proj)
    lead = x.shape[:-2]
    cls = params.cls.reshape(*([1] * len(lead)), 1, params.width)
    cls = cls + Tensor(np.zeros(lead + (1, params.width), dtype=dtype))
    return T.concat([cls, x], axis=-2) + params.pos


def text_ids_and_segments(sample: TextSample, params: TextTokenizerParams):
    """Token ids (SEP-joined, no class slot) and per-position segments.

    Segment ids cover the full output sequence including the class position;
    the id array covers positions 1..M only.
    """
    pieces = [sample.a, np.array([params.sep_id])]
    if sample.b is not None:
        pieces += [sample.b, np.array([params.sep_id])]
    ids = np.concatenate(pieces).astype(np.int64)
    n_a = len(sample.a) + 1
    segments = np.zeros(len(ids) + 1, dtype=np.int64)
    segments[1 + n_a :] = 1
    if len(ids) + 1 > params.max_len:
        raise TruncationError(
            f"sequence of {len(ids) + 1} tokens exceeds the cap of {params.max_len}"
        )
    if ids.min() < 0 or ids.max() >= params.vocab_size:
        raise VocabularyError(
            f"token ids must lie in [0, {params.vocab_size}), got range "
            f"[{ids.min()}, {ids.max()}]"
        )
    return ids, segments


def embed_tokens(ids: np.ndarray, segments: np.ndarray, params: TextTokenizerParams) -> Tensor:
    """Embed id matrix (B, M) with segments (B, M+1) into (B, M+1, D); 2-d works too."""
    ids = np.asarray(ids)
    segments = np.asarray(segments)
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= params.vocab_size:
        raise VocabularyError(f"token ids outside [0, {params.vocab_size})")
    batched = ids.ndim == 2
    if not batched:
        ids = ids[None]
        segments = segments[None]
    b, m = ids.shape
    if m + 1 > params.max_len:
        raise TruncationError(f"sequence of {m + 1} tokens exceeds the cap of {params.max_len}")
    dtype = params.word.data.dtype
    tok = params.word[ids]                                   # (B, M, D)
    cls = params.cls.reshape(1, 1, params.width) + Tensor(np.zeros((b, 1, params.width), dtype=dtype))
    x = T.concat([cls, tok], axis=1)                         # (B, M+1, D)
    x = x + params.pos[: m + 1]
    x = x + params.seg[segments]
    return x if batched else x.reshape(m + 1, params.width)


def embed_text(sample: TextSample, params: TextTokenizerParams):
    """Eq.-style single-sample embedding: returns ((M+1, D) tensor, segment ids)."""
    ids, segments = text_ids_and_segments(sample, params)
    return embed_tokens(ids, segments, params), segments


def interpolate_pos_embed(pos: np.ndarray, target_side: int) -> np.ndarray:
    """Bilinearly resample a (n*n + 1, D) position table to (m*m + 1, D).

    Row 0 (the class position) is copied unchanged; grid rows are resampled
    per channel with align-corners sampling. Identity when m == n.
    """
    pos = np.asarray(pos)
    n_rows, width = pos.shape
    side = int(round((n_rows - 1) ** 0.5))
    if side * side != n_rows - 1:
        raise ShapeError(f"position table with {n_rows - 1} grid rows is not square")
    m = int(target_side)
    if m < 1:
        raise ShapeError(f"target grid side must be >= 1, got {m}")
    if m == side:
        return pos.copy()
    grid = pos[1:].reshape(side, side, width)
    if side == 1:
        resized = np.broadcast_to(grid, (m, m, width))
    else:
        coords = np.linspace(0.0, side - 1, m) if m > 1 else np.array([0.0])
        i0 = np.floor(coords).astype(int)
        i1 = np.minimum(i0 + 1, side - 1)
        w = (coords - i0).reshape(-1, 1)
        rows = grid[i0] * (1.0 - w[:, None]) + grid[i1] * w[:, None]      # (m, side, D)
        resized = rows[:, i0] * (1.0 - w[None]) + rows[:, i1] * w[None]   # (m, m, D)
    out = np.empty((m * m + 1, width), dtype=pos.dtype)
    out[0] = pos[0]
    out[1:] = resized.reshape(m * m, width)
    return out
