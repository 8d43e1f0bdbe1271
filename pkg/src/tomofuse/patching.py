"""Adaptive patching: edge-driven quad/octrees and Z-ordered patch sequences.

An edge map scores every region by its summed edge pixels; starting from a
single root leaf over the zero-padded power-of-two square, the leaf with
the highest score is split into 2^d children until the next split would
exceed the leaf budget.  Leaves are linearized along a Z-order curve
(x supplies the least-significant interleaved bit) and resampled to a
fixed patch resolution, so sequences have uniform token shape regardless
of how unevenly the tree refined.

Masks travel through the same trees as images: nearest-neighbor resampling
both ways makes depatch(patchify(mask)) exact whenever the mask is
constant per leaf, which is what lets the tree itself replace a learned
decoder.

Trees serialize to a compact preorder split-flag stream so a patch
sequence can be shipped to another rank and depatched remotely.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class Region:
    """Axis-aligned cube in padded coordinates: origin per axis plus size."""

    origin: tuple[int, ...]  # (x, y) or (x, y, z)
    size: int

    @property
    def ndim(self) -> int:
        return len(self.origin)

    def z_index(self) -> int:
        return morton_index(self.origin)

    def slices(self) -> tuple[slice, ...]:
        # array axes are reversed relative to (x, y[, z]) coordinates
        return tuple(
            slice(o, o + self.size) for o in reversed(self.origin)
        )


def morton_index(coords: tuple[int, ...]) -> int:
    """Interleave coordinate bits; coords[0] (x) is the lowest bit."""
    n = len(coords)
    out = 0
    for bit in range(max(int(c).bit_length() for c in coords) if coords else 0):
        for axis, c in enumerate(coords):
            out |= ((c >> bit) & 1) << (bit * n + axis)
    return out


@dataclass(eq=False)
class TreeNode:
    region: Region
    score: float
    children: list["TreeNode"] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class PatchTree:
    """Budgeted refinement tree over a padded square/cube edge map."""

    root: TreeNode
    extent: tuple[int, ...]  # original array shape (before padding)
    padded: int
    fanout: int  # 2^d children per split
    budget: int
    leaves: list[TreeNode] = field(default_factory=list)  # Z-ordered

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def leaf_regions(self) -> list[Region]:
        return [leaf.region for leaf in self.leaves]

    def to_bytes(self) -> bytes:
        """Preorder split flags; regions are implied by the structure."""
        ndim = self.root.region.ndim
        head = struct.pack(
            "<4sBBII", b"TREE", ndim, _log2(self.fanout), self.padded, self.budget
        )
        head += struct.pack(f"<{ndim}I", *self.extent)
        flags = bytearray()

        def walk(node: TreeNode):
            flags.append(0 if node.is_leaf else 1)
            for child in node.children:
                walk(child)

        walk(self.root)
        return head + bytes(flags)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PatchTree":
        magic, ndim, log_fanout, padded, budget = struct.unpack_from("<4sBBII", blob)
        if magic != b"TREE":
            raise ValueError("not a serialized patch tree")
        off = struct.calcsize("<4sBBII")
        extent = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        flags = blob[off:]
        fanout = 1 << log_fanout
        pos = 0

        def walk(region: Region) -> TreeNode:
            nonlocal pos
            flag = flags[pos]
            pos += 1
            node = TreeNode(region=region, score=0.0)
            if flag:
                for child_region in _child_regions(region):
                    node.children.append(walk(child_region))
            return node

        root = walk(Region(origin=(0,) * ndim, size=padded))
        tree = cls(
            root=root,
            extent=tuple(int(e) for e in extent),
            padded=padded,
            fanout=fanout,
            budget=budget,
        )
        tree.leaves = _collect_leaves(root)
        return tree


def _log2(n: int) -> int:
    b = n.bit_length() - 1
    if 1 << b != n:
        raise ValueError(f"{n} is not a power of two")
    return b


def _child_regions(region: Region) -> list[Region]:
    half = region.size // 2
    ndim = region.ndim
    kids = []
    for code in range(1 << ndim):  # Z child order: x varies fastest
        origin = tuple(
            region.origin[axis] + (half if (code >> axis) & 1 else 0)
            for axis in range(ndim)
        )
        kids.append(Region(origin=origin, size=half))
    return kids


def _collect_leaves(root: TreeNode) -> list[TreeNode]:
    leaves = []

    def walk(node: TreeNode):
        if node.is_leaf:
            leaves.append(node)
        else:
            for child in node.children:
                walk(child)

    walk(root)
    leaves.sort(key=lambda leaf: leaf.region.z_index())
    return leaves


def pad_to_square(image: np.ndarray) -> tuple[np.ndarray, int]:
    """Zero-pad to the smallest power-of-two square/cube covering the array."""
    size = 1
    while size < max(image.shape):
        size *= 2
    padded = np.zeros((size,) * image.ndim, dtype=np.float64)
    padded[tuple(slice(0, s) for s in image.shape)] = image
    return padded, size


def build_tree(edge_map: np.ndarray, budget: int, fanout: int | None = None) -> PatchTree:
    """Grow a tree by repeatedly splitting the highest-scoring leaf.

    The score of a region is the sum of its edge pixels (a summed-area
    table makes each lookup O(1)); ties break toward the lowest Z-index.
    Splitting stops when another split would push the leaf count past
    ``budget``, so the final count is the largest 1 + k*(fanout - 1) that
    fits.  Leaves of size one cannot split and are skipped.
    """
    edge = np.asarray(edge_map, dtype=np.float64)
    if budget < 1:
        raise ValueError("budget must be >= 1")
    ndim = edge.ndim
    if ndim not in (2, 3):
        raise ValueError("edge map must be 2D or 3D")
    fanout = fanout if fanout is not None else (1 << ndim)
    if fanout != (1 << ndim):
        raise ValueError(f"fanout {fanout} does not match a {ndim}D split")

    padded, size = pad_to_square(edge)
    sat = padded
    for axis in range(ndim):
        sat = np.cumsum(sat, axis=axis)
    sat = np.pad(sat, [(1, 0)] * ndim)

    def region_sum(region: Region) -> float:
        lo = tuple(reversed(region.origin))
        hi = tuple(o + region.size for o in lo)
        total = 0.0
        for corner in range(1 << ndim):
            idx = tuple(
                hi[axis] if (corner >> axis) & 1 else lo[axis]
                for axis in range(ndim)
            )
            sign = -1 if (ndim - bin(corner).count("1")) % 2 else 1
            total += sign * sat[idx]
        return total

    root = TreeNode(region=Region(origin=(0,) * ndim, size=size), score=float(edge.sum()))
    leaves = [root]
    # candidates ordered by (-score, z-index); unsplittable leaves never enter
    heap: list[tuple[float, int, int, TreeNode]] = []
    serial = 0

    def push(node: TreeNode):
        nonlocal serial
        if node.region.size >= 2:
            heapq.heappush(heap, (-node.score, node.region.z_index(), serial, node))
            serial += 1

    push(root)
    while heap and len(leaves) + (fanout - 1) <= budget:
        _, _, _, node = heapq.heappop(heap)
        for child_region in _child_regions(node.region):
            child = TreeNode(region=child_region, score=region_sum(child_region))
            node.children.append(child)
            push(child)
        leaves.remove(node)
        leaves.extend(node.children)

    tree = PatchTree(
        root=root,
        extent=edge.shape,
        padded=size,
        fanout=fanout,
        budget=budget,
    )
    tree.leaves = _collect_leaves(root)
    return tree


@dataclass
class PatchSequence:
    """Z-ordered fixed-resolution payloads, one per tree leaf."""

    regions: list[Region]
    payloads: np.ndarray  # (n_patches, p, p[, p])
    kind: str  # "image" | "mask"
    patch_size: int

    def __post_init__(self):
        if self.kind not in ("image", "mask"):
            raise ValueError(f"payload kind must be image or mask, got {self.kind!r}")
        if len(self.regions) != len(self.payloads):
            raise ValueError("one payload per region required")

    def __len__(self) -> int:
        return len(self.payloads)


def _nearest_axis(src: int, dst: int) -> np.ndarray:
    return np.floor((np.arange(dst) + 0.5) * src / dst).astype(np.int64)


def _resample_nearest(block: np.ndarray, p: int) -> np.ndarray:
    idx = [_nearest_axis(s, p) for s in block.shape]
    return block[np.ix_(*idx)]

def _resample_bilinear(block: np.ndarray, p: int) -> np.ndarray:
    out = block.astype(np.float64)
    for axis in range(block.ndim):
        src = out.shape[axis]
        pos = np.clip((np.arange(p) + 0.5) * src / p - 0.5, 0, src - 1)
        i0 = np.floor(pos).astype(np.int64)
        i1 = np.minimum(i0 + 1, src - 1)
        frac = pos - i0
        moved = np.moveaxis(out, axis, 0)
        shape = (p,) + (1,) * (moved.ndim - 1)
        interp = moved[i0] * (1 - frac).reshape(shape) + moved[i1] * frac.reshape(shape)
        out = np.moveaxis(interp, 0, axis)
    return out


def patchify(data: np.ndarray, tree: PatchTree, patch_size: int, kind: str = "image") -> PatchSequence:
    """Emit leaf payloads in Z-order at a fixed resolution.

    Images resample bilinearly, masks by nearest neighbor; a leaf already
    at patch resolution passes through untouched either way.  Image and
    mask sequences built from the same tree are index-aligned.
    """
    if patch_size < 1:
        raise ValueError("patch resolution must be >= 1")
    arr = np.asarray(data)
    if arr.shape != tree.extent:
        raise ValueError(f"data shape {arr.shape} does not match tree extent {tree.extent}")
    padded = np.zeros((tree.padded,) * arr.ndim, dtype=np.float64)
    padded[tuple(slice(0, s) for s in arr.shape)] = arr
    resample = _resample_nearest if kind == "mask" else _resample_bilinear
    shape = (len(tree.leaves),) + (patch_size,) * arr.ndim
    payloads = np.empty(shape, dtype=np.float64)
    regions = []
    for i, leaf in enumerate(tree.leaves):
        block = padded[leaf.region.slices()]
        payloads[i] = block if block.shape[0] == patch_size else resample(block, patch_size)
        regions.append(leaf.region)
    return PatchSequence(regions=regions, payloads=payloads, kind=kind, patch_size=patch_size)


def depatch(seq: PatchSequence, tree: PatchTree) -> np.ndarray:
    """Rebuild a mask from its patch sequence using the tree structure.

    Each patch is nearest-neighbor upscaled back to its leaf region; the
    padding introduced at patchify time is cropped off, so the output has
    the tree's original extent.  Exact inverse of patchify for masks that
    are constant per leaf.
    """
    if len(seq) != tree.n_leaves:
        raise ValueError(
            f"sequence length {len(seq)} does not match tree leaves {tree.n_leaves}"
        )
    for got, leaf in zip(seq.regions, tree.leaves):
        if got != leaf.region:
            raise ValueError(f"sequence region {got} disagrees with tree {leaf.region}")
    ndim = tree.root.region.ndim
    canvas = np.zeros((tree.padded,) * ndim, dtype=seq.payloads.dtype)
    for payload, leaf in zip(seq.payloads, tree.leaves):
        size = leaf.region.size
        idx = [_nearest_axis(seq.patch_size, size) for _ in range(ndim)]
        canvas[leaf.region.slices()] = payload[np.ix_(*idx)]
    return canvas[tuple(slice(0, s) for s in tree.extent)]


def canny(
    image: np.ndarray,
    low_ratio: float = 0.1,
    high_ratio: float = 0.2,
    sigma: float = 1.0,
) -> np.ndarray:
    """Edge detector: smooth, Sobel, four-bin NMS, hysteresis threshold.

    Thresholds are ratios of the maximum gradient magnitude, so the result
    is invariant to positive affine rescaling of the image.  Returns a
    binary {0, 1} float map; a constant image yields all zeros.
    """
    if not (0 < low_ratio < high_ratio <= 1):
        raise ValueError("need 0 < low_ratio < high_ratio <= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("canny expects a 2D image")
    smooth = ndimage.gaussian_filter(img, sigma) if sigma > 0 else img
    gx = ndimage.sobel(smooth, axis=1, mode="nearest")
    gy = ndimage.sobel(smooth, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak == 0:
        return np.zeros_like(img)

    # quantize gradient direction into 4 bins: 0, 45, 90, 135 degrees
    angle = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.round(angle / (np.pi / 4)).astype(int) % 4
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}  # (dy, dx) along gradient

    def shifted(dy, dx):
        out = np.zeros_like(mag)
        h, w = mag.shape
        ys0, ys1 = max(0, dy), min(h, h + dy)
        xs0, xs1 = max(0, dx), min(w, w + dx)
        out[ys0:ys1, xs0:xs1] = mag[ys0 - dy : ys1 - dy, xs0 - dx : xs1 - dx]
        return out

    keep = np.zeros_like(mag, dtype=bool)
    for b, (dy, dx) in offsets.items():
        sel = bins == b
        ahead = shifted(dy, dx)
        behind = shifted(-dy, -dx)
        # survive a tie with the trailing neighbor, never the leading one
        keep |= sel & (mag > ahead) & (mag >= behind)
    nms = np.where(keep, mag, 0.0)

    strong = nms >= high_ratio * peak
    weak = nms >= low_ratio * peak
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros_like(img)
    connected = np.isin(labels, np.unique(labels[strong & (labels > 0)]))
    return (connected & weak).astype(np.float64)
