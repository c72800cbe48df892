"""Dual-stream transformer predictor.

The upstream stream runs DiT blocks over coarse ``up_patch``-sized patches of
the whole image and emits a full-resolution coarse prediction. The downstream
stream embeds 2×2 patches only inside mask-selected ``win × win`` token
windows ("chunks") and refines them with self-attention, cross-attention to
the cached upstream tokens, and an MLP. The combined prediction replaces the
coarse prediction inside selected windows.

Both predictions are residuals over ``y0``: a zero-initialised output head
makes the untrained predictor return the upsampled LR image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError
from ..numerics import (
    Tensor,
    concat,
    gelu,
    index,
    layer_norm,
    matmul,
    reshape,
    scatter,
    silu,
    softmax,
    take,
    transpose,
)
from .config import ModelConfig

Params = dict[str, Tensor]


# --- parameters ----------------------------------------------------------------


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    d, r = cfg.hidden, cfg.mlp_ratio * cfg.hidden
    cin = 2 * cfg.in_channels
    p2 = cfg.up_patch**2
    shapes = {
        "time.w1": (cfg.time_dim, d),
        "time.b1": (d,),
        "time.w2": (d, d),
        "time.b2": (d,),
        "up.embed.w": (cin * p2, d),
        "up.embed.b": (d,),
    }
    for i in range(cfg.layers):
        pre = f"up.blocks.{i}."
        shapes.update(
            {
                pre + "ada.w": (d, 6 * d),
                pre + "ada.b": (6 * d,),
                pre + "attn.qkv.w": (d, 3 * d),
                pre + "attn.qkv.b": (3 * d,),
                pre + "attn.proj.w": (d, d),
                pre + "attn.proj.b": (d,),
                pre + "mlp.fc1.w": (d, r),
                pre + "mlp.fc1.b": (r,),
                pre + "mlp.fc2.w": (r, d),
                pre + "mlp.fc2.b": (d,),
            }
        )
    shapes.update(
        {
            "up.final.ada.w": (d, 2 * d),
            "up.final.ada.b": (2 * d,),
            "up.final.proj.w": (d, p2 * cfg.out_channels),
            "up.final.proj.b": (p2 * cfg.out_channels,),
            "down.embed.w": (4 * cin, d),
            "down.embed.b": (d,),
        }
    )
    for i in range(cfg.layers):
        pre = f"down.blocks.{i}."
        shapes.update(
            {
                f"kv.{i}.w": (d, 2 * d),
                pre + "ada.w": (d, 9 * d),
                pre + "ada.b": (9 * d,),
                pre + "msa.qkv.w": (d, 3 * d),
                pre + "msa.qkv.b": (3 * d,),
                pre + "msa.proj.w": (d, d),
                pre + "msa.proj.b": (d,),
                pre + "mca.q.w": (d, d),
                pre + "mca.q.b": (d,),
                pre + "mca.proj.w": (d, d),
                pre + "mca.proj.b": (d,),
                pre + "mlp.fc1.w": (d, r),
                pre + "mlp.fc1.b": (r,),
                pre + "mlp.fc2.w": (r, d),
                pre + "mlp.fc2.b": (d,),
            }
        )
    shapes.update(
        {
            "down.final.ada.w": (d, 2 * d),
            "down.final.ada.b": (2 * d,),
            "down.final.proj.w": (d, 4 * cfg.out_channels),
            "down.final.proj.b": (4 * cfg.out_channels,),
        }
    )
    return shapes


def _zero_init(name: str) -> bool:
    return name.endswith(".b") or ".ada." in name or ".final.proj." in name


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Params:
    """Fresh parameters: Xavier-uniform linears, N(0, 0.02) time MLP, zeroed adaLN and output heads."""
    gen = np.random.default_rng(seed)
    params = {}
    for name, shape in _param_shapes(cfg).items():
        if _zero_init(name):
            arr = np.zeros(shape)
        elif name.startswith("time."):
            arr = gen.normal(0.0, 0.02, size=shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            arr = gen.uniform(-limit, limit, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return params


def param_count(params: Params) -> int:
    return int(sum(p.data.size for p in params.values()))


def downstream_param_names(params: Params) -> list[str]:
    return [n for n in params if n.startswith("down.") or n.startswith("kv.")]


# --- building blocks -----------------------------------------------------------


def _linear(x, params: Params, prefix: str, bias: bool = True):
    y = matmul(x, params[prefix + ".w"])
    return y + params[prefix + ".b"] if bias else y


def _split(mod, n: int) -> list:
    """Split a (..., n*D) modulation tensor into n pieces shaped (..., 1, D)."""
    lead = mod.shape[:-1]
    d = mod.shape[-1] // n
    mod = reshape(mod, lead + (n, 1, d))
    return [index(mod, (Ellipsis, k, slice(None), slice(None))) for k in range(n)]


def _modulate(x, shift, scale):
    return layer_norm(x) * (scale + 1.0) + shift


def _heads(x, heads: int):
    """(N, T, D) -> (N, heads, T, D/heads)."""
    n, t, d = x.shape
    return transpose(reshape(x, (n, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x):
    n, h, t, hd = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (n, t, h * hd))


def _attend(q, k, v):
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * scale
    return matmul(softmax(scores, axis=-1), v)


def _self_attention(x, params: Params, prefix: str, heads: int):
    n, t, d = x.shape
    qkv = _linear(x, params, prefix + ".qkv")
    qkv = transpose(reshape(qkv, (n, t, 3, heads, d // heads)), (2, 0, 3, 1, 4))
    q, k, v = (index(qkv, k_) for k_ in range(3))
    return _linear(_merge_heads(_attend(q, k, v)), params, prefix + ".proj")


def _mlp(x, params: Params, prefix: str):
    return _linear(gelu(_linear(x, params, prefix + ".fc1")), params, prefix + ".fc2")


def sincos_2d(rows: np.ndarray, cols: np.ndarray, dim: int) -> np.ndarray:
    """Fixed 2-D sine-cosine embedding of (possibly fractional) positions.

    Half the channels encode the row, half the column.
    """
    if dim % 4:
        raise DimensionError(f"positional embedding dim {dim} must be divisible by 4")
    quarter = dim // 4
    omega = 1.0 / 10000 ** (np.arange(quarter, dtype=np.float64) / quarter)

    def enc(pos):
        out = np.asarray(pos, dtype=np.float64)[..., None] * omega
        return np.concatenate([np.sin(out), np.cos(out)], axis=-1)

    return np.concatenate([enc(rows), enc(cols)], axis=-1)


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer steps, frequency base 10000."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = t[:, None] * freqs[None]
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1)


def time_embed(t, params: Params, cfg: ModelConfig):
    """Shared (B, hidden) conditioning vector from diffusion steps ``t``."""
    dtype = params["time.w1"].dtype
    emb = Tensor(timestep_embedding(t, cfg.time_dim).astype(dtype))
    h = silu(matmul(emb, params["time.w1"]) + params["time.b1"])
    return matmul(h, params["time.w2"]) + params["time.b2"]


# --- upstream ------------------------------------------------------------------


def _patchify(x: np.ndarray, p: int) -> np.ndarray:
    b, c, h, w = x.shape
    x = x.reshape(b, c, h // p, p, w // p, p).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, (h // p) * (w // p), c * p * p)


def upstream_positions(h: int, w: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Upstream token centres in downstream-token (2×2 patch) units, row-major."""
    gh, gw = h // p, w // p
    tokens_per_patch = p / 2.0
    centre = (tokens_per_patch - 1) / 2.0
    rows = np.arange(gh) * tokens_per_patch + centre
    cols = np.arange(gw) * tokens_per_patch + centre
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return rr.reshape(-1), cc.reshape(-1)


def upstream_forward(x_in: np.ndarray, temb, params: Params, cfg: ModelConfig, y0: np.ndarray | None = None):
    """Coarse prediction and global tokens from the concatenated input.

    ``x_in`` is B×2C×H×W. Returns ``(coarse_pred, global_tokens)`` with the
    prediction shaped B×C_out×H×W (a residual over ``y0`` when given) and
    global tokens shaped B×(HW/p²)×hidden.
    """
    x_in = np.asarray(x_in)
    b, c2, h, w = x_in.shape
    p = cfg.up_patch
    if c2 != 2 * cfg.in_channels:
        raise DimensionError(f"expected {2 * cfg.in_channels} input channels, got {c2}")
    if h % p or w % p:
        raise DimensionError(f"image {h}×{w} not divisible by patch {p}")
    dtype = params["up.embed.w"].dtype
    tokens = _linear(Tensor(_patchify(x_in, p).astype(dtype, copy=False)), params, "up.embed")
    rows, cols = upstream_positions(h, w, p)
    tokens = tokens + sincos_2d(rows, cols, cfg.hidden).astype(dtype)

    cond = silu(temb)  # (B, D)
    cond = reshape(cond, (b, 1, cfg.hidden))
    for i in range(cfg.layers):
        pre = f"up.blocks.{i}."
        sh1, sc1, g1, sh2, sc2, g2 = _split(_linear(cond, params, pre + "ada"), 6)
        sh1, sc1, g1, sh2, sc2, g2 = (reshape(m, (b, 1, cfg.hidden)) for m in (sh1, sc1, g1, sh2, sc2, g2))
        tokens = tokens + g1 * _self_attention(_modulate(tokens, sh1, sc1), params, pre + "attn", cfg.heads)
        tokens = tokens + g2 * _mlp(_modulate(tokens, sh2, sc2), params, pre + "mlp")

    shift, scale = (reshape(m, (b, 1, cfg.hidden)) for m in _split(_linear(cond, params, "up.final.ada"), 2))
    out = _linear(_modulate(tokens, shift, scale), params, "up.final.proj")
    co = cfg.out_channels
    out = reshape(out, (b, h // p, w // p, co, p, p))
    out = reshape(transpose(out, (0, 3, 1, 4, 2, 5)), (b, co, h, w))
    if y0 is not None:
        out = out + np.asarray(y0, dtype=dtype)
    return out, tokens


# --- chunk selection -----------------------------------------------------------


@dataclass
class ChunkSet:
    """Mask-selected downstream windows.

    ``coords`` rows are (batch, window_row, window_col) on the window grid;
    ``tokens`` holds each window's raw 2×2-patch features (n, win², 4·2C) and
    ``positions`` the global token-grid (row, col) of every token.
    """

    coords: np.ndarray  # (n, 3) int
    grid: tuple[int, int, int]  # (B, windows per column, windows per row)
    win: int
    tokens: np.ndarray | None = None
    positions: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def flat_index(self) -> np.ndarray:
        _, nh, nw = self.grid
        return self.coords[:, 0] * nh * nw + self.coords[:, 1] * nw + self.coords[:, 2]

    def subset(self, sl: slice) -> "ChunkSet":
        return ChunkSet(
            coords=self.coords[sl],
            grid=self.grid,
            win=self.win,
            tokens=None if self.tokens is None else self.tokens[sl],
            positions=None if self.positions is None else self.positions[sl],
        )


def select_chunks(mask, h: int, w: int, win: int, x_in: np.ndarray | None = None) -> ChunkSet:
    """Windows of the (H/2)×(W/2) token grid that contain at least one active site.

    ``mask`` is B×(H/2)×(W/2) (a QuadtreeMask or array). When ``x_in`` is
    given, the raw 2×2-patch tokens of every selected window are gathered.
    """
    bits = np.asarray(getattr(mask, "bits", mask))
    if bits.ndim == 2:
        bits = bits[None]
    b, gh, gw = bits.shape
    if (gh, gw) != (h // 2, w // 2) or h % 2 or w % 2:
        raise DimensionError(f"mask {gh}×{gw} must be the 2×2-patch grid of a {h}×{w} image")
    if gh % win or gw % win:
        raise DimensionError(f"window {win} does not divide token grid {gh}×{gw}")
    nh, nw = gh // win, gw // win
    active = bits.reshape(b, nh, win, nw, win).any(axis=(2, 4))
    coords = np.argwhere(active).astype(np.int64).reshape(-1, 3)
    chunks = ChunkSet(coords=coords, grid=(b, nh, nw), win=win)
    local = np.arange(win)
    lr, lc = np.meshgrid(local, local, indexing="ij")
    chunks.positions = np.stack(
        [coords[:, 1, None] * win + lr.reshape(1, -1), coords[:, 2, None] * win + lc.reshape(1, -1)], axis=-1
    ).astype(np.float64)
    if x_in is not None:
        chunks.tokens = gather_tokens(np.asarray(x_in), chunks)
    return chunks


def _windows(x: np.ndarray, win_px: int) -> np.ndarray:
    """B×C×H×W -> (B·nh·nw)×C×win_px×win_px, row-major over windows."""
    b, c, h, w = x.shape
    nh, nw = h // win_px, w // win_px
    return x.reshape(b, c, nh, win_px, nw, win_px).transpose(0, 2, 4, 1, 3, 5).reshape(b * nh * nw, c, win_px, win_px)


def gather_tokens(x_in: np.ndarray, chunks: ChunkSet) -> np.ndarray:
    """Raw 2×2-patch token features of the selected windows: (n, win², 4·C)."""
    win = chunks.win
    wins = _windows(x_in, 2 * win)[chunks.flat_index]  # n×C×2win×2win
    n, c = wins.shape[:2]
    t = wins.reshape(n, c, win, 2, win, 2).transpose(0, 2, 4, 1, 3, 5)
    return t.reshape(n, win * win, c * 4)


# --- downstream ----------------------------------------------------------------


@dataclass
class KVCache:
    keys: list  # per layer, Tensor (B, heads, T_up, head_dim)
    values: list

    @property
    def size(self) -> int:
        return int(sum(k.data.size + v.data.size for k, v in zip(self.keys, self.values)))


def _project_kv(global_tokens, params: Params, cfg: ModelConfig, layer: int):
    kv = matmul(global_tokens, params[f"kv.{layer}.w"])  # (B, T, 2D)
    n, t, _ = kv.shape
    kv = transpose(reshape(kv, (n, t, 2, cfg.heads, cfg.head_dim)), (2, 0, 3, 1, 4))
    return index(kv, 0), index(kv, 1)


def precompute_kv(global_tokens, params: Params, cfg: ModelConfig) -> KVCache:
    """Project upstream tokens to per-layer keys/values once for all chunks."""
    keys, values = [], []
    for i in range(cfg.layers):
        k, v = _project_kv(global_tokens, params, cfg, i)
        keys.append(k)
        values.append(v)
    return KVCache(keys, values)


def downstream_conditioning(temb, params: Params, cfg: ModelConfig) -> list:
    """Per-layer (B, 9·D) adaLN modulations plus the final (B, 2·D) head modulation."""
    cond = silu(temb)
    mods = [_linear(cond, params, f"down.blocks.{i}.ada") for i in range(cfg.layers)]
    mods.append(_linear(cond, params, "down.final.ada"))
    return mods


def _downstream_group(chunks: ChunkSet, mods: list, kv: KVCache | None, global_tokens, params: Params, cfg: ModelConfig, y0_windows):
    n = len(chunks)
    d = cfg.hidden
    dtype = params["down.embed.w"].dtype
    bidx = chunks.coords[:, 0]
    x = _linear(Tensor(chunks.tokens.astype(dtype, copy=False)), params, "down.embed")
    x = x + sincos_2d(chunks.positions[..., 0], chunks.positions[..., 1], d).astype(dtype)
    for i in range(cfg.layers):
        pieces = _split(take(mods[i], bidx, axis=0), 9)  # each (n, 1, D)
        sh1, sc1, g1, sh2, sc2, g2, sh3, sc3, g3 = pieces
        x = x + g1 * _self_attention(_modulate(x, sh1, sc1), params, f"down.blocks.{i}.msa", cfg.heads)
        if kv is not None:
            k, v = take(kv.keys[i], bidx, axis=0), take(kv.values[i], bidx, axis=0)
        else:
            k, v = _project_kv(take(global_tokens, bidx, axis=0), params, cfg, i)
        q = _heads(_linear(_modulate(x, sh2, sc2), params, f"down.blocks.{i}.mca.q"), cfg.heads)
        x = x + g2 * _linear(_merge_heads(_attend(q, k, v)), params, f"down.blocks.{i}.mca.proj")
        x = x + g3 * _mlp(_modulate(x, sh3, sc3), params, f"down.blocks.{i}.mlp")
    shift, scale = _split(take(mods[-1], bidx, axis=0), 2)
    out = _linear(_modulate(x, shift, scale), params, "down.final.proj")  # (n, win², 4·Co)
    win, co = chunks.win, cfg.out_channels
    out = reshape(out, (n, win, win, co, 2, 2))
    out = reshape(transpose(out, (0, 3, 1, 4, 2, 5)), (n, co, 2 * win, 2 * win))
    if y0_windows is not None:
        out = out + y0_windows
    return out


def downstream_forward(
    chunks: ChunkSet,
    kv: KVCache | None,
    temb,
    params: Params,
    cfg: ModelConfig,
    y0: np.ndarray | None = None,
    global_tokens=None,
    group_size: int | None = None,
    mods: list | None = None,
):
    """Refined pixels for every selected window, shaped (n, C_out, 2·win, 2·win).

    Chunks are processed independently in groups of at most ``group_size``
    (default ``cfg.max_parallel_chunks``). With ``kv=None`` keys and values are
    recomputed per group from ``global_tokens``. Returns ``None`` for an
    empty chunk set.
    """
    if len(chunks) == 0:
        return None
    if chunks.tokens is None:
        raise DimensionError("chunk set carries no tokens; pass x_in to select_chunks")
    if chunks.tokens.shape[-1] != params["down.embed.w"].shape[0]:
        raise DimensionError("chunk token width does not match the downstream embedding")
    if kv is None and global_tokens is None:
        raise DimensionError("need a KV cache or the global tokens")
    if kv is not None and kv.keys[0].shape[-1] != cfg.head_dim:
        raise DimensionError("KV cache head size does not match the configuration")
    mods = mods if mods is not None else downstream_conditioning(temb, params, cfg)
    dtype = params["down.embed.w"].dtype
    y0w = None
    if y0 is not None:
        y0w = _windows(np.asarray(y0, dtype=dtype), 2 * chunks.win)[chunks.flat_index]
    size = group_size or cfg.max_parallel_chunks
    outs = []
    for start in range(0, len(chunks), size):
        sl = slice(start, start + size)
        outs.append(
            _downstream_group(chunks.subset(sl), mods, kv, global_tokens, params, cfg, None if y0w is None else y0w[sl])
        )
    return outs[0] if len(outs) == 1 else concat(outs, axis=0)


# --- combination ---------------------------------------------------------------


def window_support(mask, h: int, w: int, win: int) -> np.ndarray:
    """B×1×H×W indicator of the pixel footprints of all selected windows."""
    bits = np.asarray(getattr(mask, "bits", mask))
    if bits.ndim == 2:
        bits = bits[None]
    b, gh, gw = bits.shape
    nh, nw = gh // win, gw // win
    active = bits.reshape(b, nh, win, nw, win).any(axis=(2, 4))
    px = 2 * win
    return np.repeat(np.repeat(active, px, axis=1), px, axis=2)[:, None].astype(np.float64)


def combine_predictions(coarse_pred, refined, chunks: ChunkSet):
    """Coarse prediction with every selected window's pixels replaced by its refinement."""
    if refined is None or len(chunks) == 0:
        return coarse_pred
    flat = chunks.flat_index
    if len(np.unique(flat)) != len(flat):
        raise RuntimeError("overlapping windows in chunk set")
    b, co, h, w = coarse_pred.shape
    win_px = 2 * chunks.win
    nh, nw = h // win_px, w // win_px
    total = b * nh * nw
    dtype = coarse_pred.dtype
    keep = np.ones((total, 1, 1, 1), dtype=dtype)
    keep[flat] = 0
    wins = reshape(coarse_pred, (b, co, nh, win_px, nw, win_px))
    wins = reshape(transpose(wins, (0, 2, 4, 1, 3, 5)), (total, co, win_px, win_px))
    merged = wins * keep + scatter(refined, flat, total, axis=0)
    merged = transpose(reshape(merged, (b, nh, nw, co, win_px, win_px)), (0, 3, 1, 4, 2, 5))
    return reshape(merged, (b, co, h, w))


# --- full model ----------------------------------------------------------------


def token_mask_to_pixels(mask) -> np.ndarray:
    """Broadcast a B×(H/2)×(W/2) token mask to B×1×H×W pixel sites."""
    bits = np.asarray(getattr(mask, "bits", mask))
    return np.repeat(np.repeat(bits, 2, axis=-2), 2, axis=-1)[:, None].astype(np.float64)


def model_forward(
    x_t: np.ndarray,
    y0: np.ndarray,
    mask,
    t,
    params: Params,
    cfg: ModelConfig,
    use_kv_cache: bool = True,
    group_size: int | None = None,
    return_chunks: bool = False,
):
    """Predict ``x0`` from ``(x_t, y0, t)`` under token-grid ``mask``.

    Returns ``(pred_full, pred_up)``; with ``return_chunks`` also the ChunkSet.
    """
    x_t, y0 = np.asarray(x_t), np.asarray(y0)
    if x_t.shape != y0.shape:
        raise DimensionError(f"x_t {x_t.shape} and y0 {y0.shape} differ")
    b, c, h, w = x_t.shape
    cfg.check_image(h, w)
    t = np.broadcast_to(np.asarray(t), (b,))
    x_in = np.concatenate([x_t, y0], axis=1)
    temb = time_embed(t, params, cfg)
    pred_up, global_tokens = upstream_forward(x_in, temb, params, cfg, y0=y0)
    kv = precompute_kv(global_tokens, params, cfg) if use_kv_cache else None
    mods = downstream_conditioning(temb, params, cfg)
    chunks = select_chunks(mask, h, w, cfg.win, x_in=x_in)
    refined = downstream_forward(
        chunks, kv, temb, params, cfg, y0=y0, global_tokens=global_tokens, group_size=group_size, mods=mods
    )
    pred_full = combine_predictions(pred_up, refined, chunks)
    if return_chunks:
        return pred_full, pred_up, chunks
    return pred_full, pred_up
