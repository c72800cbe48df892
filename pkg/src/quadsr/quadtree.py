"""Binary quadtree masks marking detail-rich regions of low-quality images.

A block is homogeneous when the channel-summed intensity range
``sum_c (max - min)`` is at most the threshold ``s``. The mask marks the
complementary, detail-rich blocks at the pooling level ``l`` with ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .numerics import max_pool, resize_nearest


@dataclass
class QuadtreeMask:
    bits: np.ndarray  # uint8, B×Hm×Wm, entries in {0, 1}
    threshold: float
    level: int

    @property
    def shape(self) -> tuple:
        return self.bits.shape

    def density(self) -> float:
        return mask_density(self)


@dataclass(frozen=True)
class QuadNode:
    x: int  # column of the top-left pixel
    y: int  # row of the top-left pixel
    side: int
    is_leaf: bool
    value: float  # mean intensity over the block, summed over channels


@dataclass
class QuadtreePartition:
    size: int
    threshold: float
    nodes: list[QuadNode] = field(default_factory=list)

    @property
    def leaves(self) -> list[QuadNode]:
        return [n for n in self.nodes if n.is_leaf]


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def pooling_level(h: int, w: int, hm: int, wm: int) -> int:
    """Pooling level ``l``; blocks of side ``2**l`` are tested for homogeneity."""
    level = max(math.log2(h / hm), math.log2(w / wm))
    return max(math.ceil(level - 1e-12), 1)


def _validate(images: np.ndarray, hm: int, wm: int) -> int:
    if images.ndim != 4:
        raise DimensionError(f"expected B×C×H×W images, got shape {images.shape}")
    _, _, h, w = images.shape
    if not (_is_pow2(h) and _is_pow2(w)):
        raise DimensionError(f"image size {h}×{w} is not a power of two")
    if hm < 1 or wm < 1 or hm > h or wm > w:
        raise DimensionError(f"mask size {hm}×{wm} must lie in [1, {h}]×[1, {w}]")
    level = pooling_level(h, w, hm, wm)
    if 2**level > min(h, w):
        raise DimensionError(f"pooling block 2^{level} exceeds image size {h}×{w}")
    return level


def generate_mask(images, s: float, hm: int, wm: int) -> QuadtreeMask:
    """Quadtree mask via max pooling (batched).

    The comparison is strict (``range > s``) so that ``s = 0`` leaves
    exactly-constant blocks inactive.
    """
    images = np.asarray(images)
    level = _validate(images, hm, wm)
    k = 2**level
    hi = max_pool(images, k)
    lo = max_pool(-images, k)
    spread = (hi + lo).sum(axis=1)  # B×(H/k)×(W/k)
    bits = (spread > s).astype(np.uint8)
    bits = resize_nearest(bits, hm, wm)
    return QuadtreeMask(bits=np.ascontiguousarray(bits), threshold=float(s), level=level)


def brute_force_mask(image, s: float, hm: int, wm: int) -> QuadtreeMask:
    """Reference implementation by explicit per-block scans; batch size 1."""
    image = np.asarray(image)
    level = _validate(image, hm, wm)
    if image.shape[0] != 1:
        raise DimensionError("brute_force_mask expects a batch of one image")
    _, c, h, w = image.shape
    k = 2**level
    ph, pw = h // k, w // k
    pooled = np.zeros((ph, pw), dtype=np.uint8)
    for bi in range(ph):
        for bj in range(pw):
            total = 0.0
            for ch in range(c):
                lo = hi = image[0, ch, bi * k, bj * k]
                for y in range(bi * k, (bi + 1) * k):
                    for x in range(bj * k, (bj + 1) * k):
                        v = image[0, ch, y, x]
                        if v > hi:
                            hi = v
                        if v < lo:
                            lo = v
                total = total + (hi - lo)
            pooled[bi, bj] = 1 if total > s else 0
    bits = np.zeros((1, hm, wm), dtype=np.uint8)
    for i in range(hm):
        si = min((2 * i + 1) * ph // (2 * hm), ph - 1)
        for j in range(wm):
            sj = min((2 * j + 1) * pw // (2 * wm), pw - 1)
            bits[0, i, j] = pooled[si, sj]
    return QuadtreeMask(bits=bits, threshold=float(s), level=level)


def mask_density(mask) -> float:
    bits = mask.bits if isinstance(mask, QuadtreeMask) else np.asarray(mask)
    if bits.size == 0:
        return 0.0
    return float(np.count_nonzero(bits)) / bits.size


def _next_pow2(n: int) -> int:
    return 1 << max(n - 1, 0).bit_length()


def pad_to_pow2(images: np.ndarray) -> np.ndarray:
    """Edge-replicate B×C×H×W images into the enclosing power-of-two square."""
    _, _, h, w = images.shape
    side = _next_pow2(max(h, w))
    if (h, w) == (side, side):
        return images
    return np.pad(images, ((0, 0), (0, 0), (0, side - h), (0, side - w)), mode="edge")


def generate_mask_any(images, s: float, hm: int, wm: int) -> QuadtreeMask:
    """:func:`generate_mask` for arbitrary image sizes.

    Pads to the enclosing power-of-two square by edge replication, builds
    the mask at the proportionally enlarged size, then crops to ``(hm, wm)``.
    The requested mask must divide the image by a whole factor.
    """
    images = np.asarray(images)
    _, _, h, w = images.shape
    if _is_pow2(h) and _is_pow2(w):
        return generate_mask(images, s, hm, wm)
    if h % hm or w % wm or h // hm != w // wm:
        raise DimensionError(f"mask {hm}×{wm} must divide image {h}×{w} by one integer factor")
    factor = h // hm
    padded = pad_to_pow2(images)
    side = padded.shape[-1]
    if side % factor:
        raise DimensionError(f"mask reduction factor {factor} incompatible with padded size {side}")
    full = generate_mask(padded, s, side // factor, side // factor)
    return QuadtreeMask(bits=np.ascontiguousarray(full.bits[:, :hm, :wm]), threshold=full.threshold, level=full.level)


def build_partition(image, s: float) -> QuadtreePartition:
    """Full recursive quadtree decomposition of a square power-of-two image."""
    image = np.asarray(image)
    if image.ndim != 4 or image.shape[0] != 1:
        raise DimensionError("build_partition expects a 1×C×H×W image")
    _, _, h, w = image.shape
    if h != w or not _is_pow2(h):
        raise DimensionError(f"build_partition needs a square power-of-two image, got {h}×{w}")
    img = image[0]
    part = QuadtreePartition(size=h, threshold=float(s))

    def visit(y: int, x: int, side: int) -> None:
        block = img[:, y : y + side, x : x + side]
        spread = float((block.max(axis=(1, 2)) - block.min(axis=(1, 2))).sum())
        leaf = side == 1 or spread <= s
        part.nodes.append(QuadNode(x=x, y=y, side=side, is_leaf=leaf, value=float(block.mean(axis=(1, 2)).sum())))
        if not leaf:
            half = side // 2
            for dy in (0, half):
                for dx in (0, half):
                    visit(y + dy, x + dx, half)

    visit(0, 0, h)
    return part


def render_partition(image, partition: QuadtreePartition, color=(255, 0, 0)) -> np.ndarray:
    """RGB uint8 overlay of leaf boundaries on a 1×C×H×W image in [-1, 1]."""
    image = np.asarray(image)
    base = image[0]
    if base.shape[0] == 1:
        base = np.repeat(base, 3, axis=0)
    rgb = np.clip(np.rint((base[:3] + 1.0) * 127.5), 0, 255).astype(np.uint8).transpose(1, 2, 0).copy()
    for node in partition.leaves:
        if node.side < 2:
            continue
        y0, x0, y1, x1 = node.y, node.x, node.y + node.side - 1, node.x + node.side - 1
        rgb[y0, x0 : x1 + 1] = color
        rgb[y1, x0 : x1 + 1] = color
        rgb[y0 : y1 + 1, x0] = color
        rgb[y0 : y1 + 1, x1] = color
    return rgb
