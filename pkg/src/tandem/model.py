"""The unified model: shared pre-LN transformer encoder plus task heads.

One encoder processes both modality sequences with zero branching on
modality. Each block is `x + MSA(LN(x))` followed by `x + MLP(LN(x))`
with scaled dot-product attention and an exact-GeLU two-layer MLP; a final
LayerNorm follows the last block (standard pre-LN practice, the training
objective is unstable without it). Heads are two-layer MLPs with GeLU whose
hidden width equals the encoder width.

Parameters live in a flat name -> Tensor store partitioned into the groups
``img_tok/``, ``txt_tok/``, ``encoder/``, and ``head/``; the encoder group is
exactly the domain of gradient masking.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace

import numpy as np

from . import tensor as T
from . import tokenizers as tok
from .checkpoint import load_arrays, save_arrays
from .errors import ShapeError
from .rng import Rng
from .tensor import Tensor

ATTN_MASK_VALUE = -1e9  # additive bias for padded keys; finite to keep FD checks clean

GROUP_IMG_TOK = "img_tok/"
GROUP_TXT_TOK = "txt_tok/"
GROUP_ENCODER = "encoder/"
GROUP_HEAD = "head/"


@dataclass(frozen=True)
class ModelDims:
    """Architecture hyperparameters (desk defaults; full-scale values configurable)."""

    depth: int = 4
    width: int = 64
    n_heads: int = 4
    mlp_width: int = 256
    patch: int = 4
    img_side: int = 16
    img_channels: int = 3
    n_img_classes: int = 8
    vocab_size: int = 260
    max_len: int = 64
    dropout: float = 0.1
    ln_eps: float = 1e-6

    def __post_init__(self):
        if self.width % self.n_heads:
            raise ShapeError(f"width {self.width} not divisible by {self.n_heads} heads")


class ModelParams:
    """Named parameter store with tokenizer / encoder / head groups."""

    def __init__(self, dims: ModelDims, tensors: dict, dtype=np.float32):
        self.dims = dims
        self.tensors = tensors
        self.dtype = np.dtype(dtype)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list:
        return sorted(self.tensors)

    def group(self, prefix: str) -> list:
        """Sorted tensor names under a group prefix."""
        return sorted(n for n in self.tensors if n.startswith(prefix))

    def encoder_names(self) -> list:
        return self.group(GROUP_ENCODER)

    def encoder_size(self) -> int:
        return sum(self.tensors[n].size for n in self.encoder_names())

    def image_tokenizer(self) -> tok.ImageTokenizerParams:
        d = self.dims
        return tok.ImageTokenizerParams(
            patch=d.patch,
            grid=int(round((self.tensors["img_tok/pos"].shape[0] - 1) ** 0.5)),
            channels=d.img_channels,
            proj=self.tensors["img_tok/proj"],
            cls=self.tensors["img_tok/cls"],
            pos=self.tensors["img_tok/pos"],
        )

    def text_tokenizer(self) -> tok.TextTokenizerParams:
        return tok.TextTokenizerParams(
            word=self.tensors["txt_tok/word"],
            pos=self.tensors["txt_tok/pos"],
            seg=self.tensors["txt_tok/seg"],
            cls=self.tensors["txt_tok/cls"],
        )

    def head_names(self) -> list:
        return sorted({n.split("/")[1] for n in self.tensors if n.startswith(GROUP_HEAD)})

    def all_tensors(self):
        return self.tensors.values()

    # -- persistence -------------------------------------------------------

    def save(self, path, meta: dict | None = None) -> None:
        arrays = {name: t.data for name, t in self.tensors.items()}
        full_meta = {"dims": asdict(self.dims), "dtype": self.dtype.str}
        if meta:
            full_meta.update(meta)
        save_arrays(path, arrays, full_meta)

    @staticmethod
    def load(path, dtype=None) -> tuple["ModelParams", dict]:
        arrays, meta = load_arrays(path)
        dims = ModelDims(**meta["dims"])
        dt = np.dtype(dtype) if dtype is not None else np.dtype(meta.get("dtype", "<f4"))
        tensors = {
            name: Tensor(arr, requires_grad=True, dtype=dt) for name, arr in arrays.items()
        }
        return ModelParams(dims, tensors, dt), meta


def _block_names(i: int) -> dict:
    p = f"encoder/block{i:02d}/"
    return {k: p + k for k in (
        "ln1_g", "ln1_b", "qkv_w", "qkv_b", "out_w", "out_b",
        "ln2_g", "ln2_b", "mlp1_w", "mlp1_b", "mlp2_w", "mlp2_b",
    )}


def init_encoder(dims: ModelDims, rng: Rng, dtype) -> dict:
    d, mlp = dims.width, dims.mlp_width
    tensors = {}

    def param(name, shape, kind):
        if kind == "proj":
            data = rng.child(name).truncated_normal(shape, tok.INIT_STD)
        elif kind == "ones":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        tensors[name] = Tensor(data, requires_grad=True, dtype=dtype)

    for i in range(dims.depth):
        n = _block_names(i)
        param(n["ln1_g"], (d,), "ones")
        param(n["ln1_b"], (d,), "zeros")
        param(n["qkv_w"], (d, 3 * d), "proj")
        param(n["qkv_b"], (3 * d,), "zeros")
        param(n["out_w"], (d, d), "proj")
        param(n["out_b"], (d,), "zeros")
        param(n["ln2_g"], (d,), "ones")
        param(n["ln2_b"], (d,), "zeros")
        param(n["mlp1_w"], (d, mlp), "proj")
        param(n["mlp1_b"], (mlp,), "zeros")
        param(n["mlp2_w"], (mlp, d), "proj")
        param(n["mlp2_b"], (d,), "zeros")
    param("encoder/final_ln_g", (d,), "ones")
    param("encoder/final_ln_b", (d,), "zeros")
    return tensors


def init_head(name: str, n_classes: int, dims: ModelDims, rng: Rng, dtype) -> dict:
    d = dims.width
    p = f"head/{name}/"
    return {
        p + "w1": Tensor(rng.child(p + "w1").truncated_normal((d, d), tok.INIT_STD),
                         requires_grad=True, dtype=dtype),
        p + "b1": Tensor(np.zeros(d), requires_grad=True, dtype=dtype),
        p + "w2": Tensor(rng.child(p + "w2").truncated_normal((d, n_classes), tok.INIT_STD),
                         requires_grad=True, dtype=dtype),
        p + "b2": Tensor(np.zeros(n_classes), requires_grad=True, dtype=dtype),
    }


def build_model(dims: ModelDims, rng: Rng, dtype=np.float32,
                modalities=("image", "text"), heads=None) -> ModelParams:
    """Fresh model. `heads` maps head name -> class count; default pre-training heads."""
    if heads is None:
        heads = {}
        if "image" in modalities:
            heads["image"] = dims.n_img_classes
        if "text" in modalities:
            heads["mlm"] = dims.vocab_size
            heads["nsp"] = 2
    tensors = {}
    if "image" in modalities:
        it = tok.init_image_tokenizer(
            dims.patch, dims.img_side, dims.img_channels, dims.width,
            rng.child("img_tok"), dtype,
        )
        tensors.update(it.tensors())
    if "text" in modalities:
        tt = tok.init_text_tokenizer(
            dims.vocab_size, dims.max_len, dims.width, rng.child("txt_tok"), dtype,
        )
        tensors.update(tt.tensors())
    tensors.update(init_encoder(dims, rng.child("encoder"), dtype))
    for head_name, k in heads.items():
        tensors.update(init_head(head_name, k, dims, rng.child("head"), dtype))
    return ModelParams(dims, tensors, dtype)


# -- forward passes ----------------------------------------------------------


def _attention(x: Tensor, params: ModelParams, names: dict, rng: Rng,
               training: bool, attn_bias) -> Tensor:
    dims = params.dims
    b, s, d = x.shape
    nh = dims.n_heads
    dh = d // nh
    qkv = T.matmul(x, params[names["qkv_w"]]) + params[names["qkv_b"]]
    qkv = qkv.reshape(b, s, 3, nh, dh).transpose(2, 0, 3, 1, 4)   # (3, B, nh, S, dh)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = T.matmul(q * (dh ** -0.5), k.transpose(0, 1, 3, 2))   # (B, nh, S, S)
    if attn_bias is not None:
        scores = scores + attn_bias
    probs = T.softmax(scores, axis=-1)
    probs = T.dropout(probs, dims.dropout, rng.child("attn"), training)
    ctx = T.matmul(probs, v)                                       # (B, nh, S, dh)
    ctx = ctx.transpose(0, 2, 1, 3).reshape(b, s, d)
    out = T.matmul(ctx, params[names["out_w"]]) + params[names["out_b"]]
    return T.dropout(out, dims.dropout, rng.child("proj"), training)


def encoder_forward(z0: Tensor, params: ModelParams, rng: Rng, training: bool = False,
                    attn_bias: np.ndarray | None = None, return_hidden: bool = False):
    """Run the pre-LN block stack plus the final LayerNorm.

    `z0` is (S, D) or (B, S, D); the output keeps the input shape.
    `attn_bias`, when given, is broadcast-added to attention scores
    (use ATTN_MASK_VALUE at padded key positions). With `return_hidden`,
    also returns the per-block post-residual outputs.
    """
    dims = params.dims
    batched = z0.ndim == 3
    x = z0 if batched else z0.reshape(1, *z0.shape)
    if x.shape[-1] != dims.width:
        raise ShapeError(f"sequence width {x.shape[-1]} does not match encoder width {dims.width}")
    bias = None
    if attn_bias is not None:
        bias = Tensor(np.asarray(attn_bias, dtype=x.data.dtype))
    hidden = []
    eps = dims.ln_eps
    for i in range(dims.depth):
        names = _block_names(i)
        brng = rng.child(f"block{i}")
        h = T.layer_norm(x, params[names["ln1_g"]], params[names["ln1_b"]], eps)
        x = x + _attention(h, params, names, brng, training, bias)
        h = T.layer_norm(x, params[names["ln2_g"]], params[names["ln2_b"]], eps)
        h = T.gelu(T.matmul(h, params[names["mlp1_w"]]) + params[names["mlp1_b"]])
        h = T.matmul(h, params[names["mlp2_w"]]) + params[names["mlp2_b"]]
        x = x + T.dropout(h, dims.dropout, brng.child("mlp"), training)
        if return_hidden:
            hidden.append(x if batched else x.reshape(*z0.shape))
    x = T.layer_norm(x, params["encoder/final_ln_g"], params["encoder/final_ln_b"], eps)
    out = x if batched else x.reshape(*z0.shape)
    return (out, hidden) if return_hidden else out


def head_logits(h: Tensor, params: ModelParams, task: str) -> Tensor:
    """Two-layer GeLU MLP over (..., D) features -> (..., K) logits."""
    p = f"head/{task}/"
    if h.shape[-1] != params.dims.width:
        raise ShapeError(f"feature width {h.shape[-1]} does not match head width {params.dims.width}")
    z = T.gelu(T.matmul(h, params[p + "w1"]) + params[p + "b1"])
    return T.matmul(z, params[p + "w2"]) + params[p + "b2"]


def head_forward(h: Tensor, params: ModelParams, task: str):
    """Logits plus softmax probabilities for one head."""
    squeeze = h.ndim == 1
    x = h.reshape(1, *h.shape) if squeeze else h
    logits = head_logits(x, params, task)
    probs = T.softmax(logits, axis=-1)
    if squeeze:
        return logits.reshape(logits.shape[-1]), probs.reshape(probs.shape[-1])
    return logits, probs


def select_output(zl: Tensor, task: str, positions=None) -> Tensor:
    """Pick head inputs from encoder output: class row, or rows at masked positions."""
    if task == "mlm":
        if positions is None or len(positions) == 0:
            raise IndexError("mlm selection requires a nonempty list of masked positions")
        seq_len = zl.shape[-2]
        if zl.ndim == 2:
            idx = np.asarray(positions, dtype=np.int64)
            if idx.min() < 0 or idx.max() >= seq_len:
                raise IndexError(f"masked position outside sequence of length {seq_len}")
            return zl[idx]
        rows = np.asarray([p[0] for p in positions], dtype=np.int64)
        cols = np.asarray([p[1] for p in positions], dtype=np.int64)
        if cols.min() < 0 or cols.max() >= seq_len or rows.max() >= zl.shape[0]:
            raise IndexError(f"masked position outside batch of shape {zl.shape}")
        return zl[rows, cols]
    if zl.ndim == 2:
        return zl[0]
    return zl[:, 0]
