from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tomofuse.fabric import Fabric
from tomofuse.patching import PatchSequence, build_tree, canny, depatch, patchify
from tomofuse.segmentation import (
    BitmapMask,
    ThresholdSegmenter,
    connected_components,
    decode_bitmap,
    dice,
    dice_macro,
    encode_bitmap,
    fused_infer,
)


# ---------------------------------------------------------------------------
# bitmap codec


def test_bitmap_packing_example():
    bm = encode_bitmap(np.array([0, 1, 2, 3], dtype=np.uint8))
    assert bm.payload == bytes([0xE4])


def test_bitmap_pads_trailing_bits_with_zero():
    bm = encode_bitmap(np.array([3, 3, 3, 3, 3], dtype=np.uint8))
    assert len(bm.payload) == 2
    assert bm.payload[1] == 0b00000011


def test_bitmap_size_ratio_one_sixteenth():
    mask = np.zeros((4, 8, 8), dtype=np.uint8)  # n divisible by 4
    bm = encode_bitmap(mask)
    n = mask.size
    assert len(bm.payload) == n // 4
    assert len(bm.payload) * 16 == n * 4  # vs 32-bit labels


def test_bitmap_rejects_out_of_range_labels():
    with pytest.raises(ValueError):
        encode_bitmap(np.array([0, 4], dtype=np.uint8))


def test_bitmap_payload_length_checked_on_decode():
    with pytest.raises(ValueError):
        decode_bitmap(BitmapMask(dims=(8,), payload=b"123"))


@settings(max_examples=100, deadline=None)
@given(
    shape=st.sampled_from([(5,), (4, 4), (3, 5, 7), (2, 2, 2)]),
    seed=st.integers(0, 10_000),
)
def test_bitmap_codec_is_bijection(shape, seed):
    rng = np.random.default_rng(seed)
    mask = rng.integers(0, 4, size=shape).astype(np.uint8)
    assert np.array_equal(decode_bitmap(encode_bitmap(mask)), mask)


# ---------------------------------------------------------------------------
# dice


def test_dice_identical_masks():
    m = np.array([[0, 1], [2, 3]])
    for c in range(4):
        assert dice(m, m, c) == 1.0


def test_dice_disjoint_and_empty():
    a = np.array([1, 1, 0, 0])
    b = np.array([0, 0, 1, 1])
    assert dice(a, b, 1) == 0.0
    assert dice(a, b, 3) == 1.0  # both empty


def test_dice_half_overlap():
    a = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    b = np.array([1, 1, 0, 0, 1, 1, 0, 0])
    assert dice(a, b, 1) == 0.5


def test_dice_symmetry_and_macro():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 4, size=(6, 6, 6))
    b = rng.integers(0, 4, size=(6, 6, 6))
    for c in range(4):
        assert dice(a, b, c) == dice(b, a, c)
    assert 0.0 <= dice_macro(a, b) <= 1.0
    assert dice_macro(a, a) == 1.0


def test_dice_shape_mismatch():
    with pytest.raises(ValueError):
        dice(np.zeros((2, 2)), np.zeros((3, 2)), 0)


# ---------------------------------------------------------------------------
# connected components


def _bfs_components(mask, cls, connectivity):
    fg = np.asarray(mask) == cls
    if fg.ndim == 2:
        fg = fg[None]
    nz, ny, nx = fg.shape
    if connectivity == 6:
        neigh = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    else:
        neigh = [
            (dz, dy, dx)
            for dz in (-1, 0, 1)
            for dy in (-1, 0, 1)
            for dx in (-1, 0, 1)
            if (dz, dy, dx) != (0, 0, 0)
        ]
    seen = np.zeros_like(fg, dtype=bool)
    sizes = []
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if not fg[z, y, x] or seen[z, y, x]:
                    continue
                size = 0
                queue = deque([(z, y, x)])
                seen[z, y, x] = True
                while queue:
                    cz, cy, cx = queue.popleft()
                    size += 1
                    for dz, dy, dx in neigh:
                        vz, vy, vx = cz + dz, cy + dy, cx + dx
                        if (
                            0 <= vz < nz and 0 <= vy < ny and 0 <= vx < nx
                            and fg[vz, vy, vx] and not seen[vz, vy, vx]
                        ):
                            seen[vz, vy, vx] = True
                            queue.append((vz, vy, vx))
                sizes.append(size)
    return sizes  # in first-voxel raster order


def test_two_isolated_voxels():
    mask = np.zeros((3, 3, 3), dtype=np.uint8)
    mask[0, 0, 0] = 1
    mask[2, 2, 2] = 1
    out = connected_components(mask, 1)
    assert out.n_components == 2
    assert np.array_equal(out.sizes, [1, 1])


def test_solid_cube_is_one_component():
    mask = np.ones((3, 3, 3), dtype=np.uint8)
    out = connected_components(mask, 1, connectivity=6)
    assert out.n_components == 1
    assert out.sizes[0] == 27


def test_diagonal_touch_depends_on_connectivity():
    mask = np.zeros((2, 2, 2), dtype=np.uint8)
    mask[0, 0, 0] = 1
    mask[1, 1, 1] = 1
    assert connected_components(mask, 1, connectivity=6).n_components == 2
    assert connected_components(mask, 1, connectivity=26).n_components == 1


@pytest.mark.parametrize("connectivity", [6, 26])
def test_components_match_bfs_oracle(connectivity):
    rng = np.random.default_rng(21)
    for trial in range(10):
        mask = (rng.random((16, 16, 16)) < 0.25).astype(np.uint8)
        out = connected_components(mask, 1, connectivity=connectivity)
        oracle_sizes = _bfs_components(mask, 1, connectivity)
        assert out.n_components == len(oracle_sizes)
        assert out.sizes.tolist() == oracle_sizes  # same first-voxel ordering


def test_component_count_invariant_under_axis_permutation():
    rng = np.random.default_rng(22)
    mask = (rng.random((10, 12, 14)) < 0.2).astype(np.uint8)
    base = connected_components(mask, 1, connectivity=26)
    for axes in [(0, 2, 1), (1, 0, 2), (2, 1, 0)]:
        permuted = connected_components(np.transpose(mask, axes), 1, connectivity=26)
        assert permuted.n_components == base.n_components
        assert sorted(permuted.sizes) == sorted(base.sizes)


def test_component_labels_deterministic_order():
    mask = np.zeros((1, 4, 8), dtype=np.uint8)
    mask[0, 0, 6] = 1  # earlier in raster order than the blob below
    mask[0, 2:4, 0:2] = 1
    out = connected_components(mask, 1)
    assert out.labels[0, 0, 6] == 1
    assert out.labels[0, 2, 0] == 2
    assert np.array_equal(out.size_ranking, [2, 1])  # blob is bigger


def test_size_binning():
    mask = np.zeros((1, 2, 10), dtype=np.uint8)
    mask[0, 0, 9] = 1
    mask[0, 1, 0:9] = 1
    out = connected_components(mask, 1, bin_edges=np.array([1.0, 4.0, 100.0]))
    assert out.n_components == 2
    assert out.bin_of_component[0] == 0  # size 1 -> first bin
    assert out.bin_of_component[1] == 2  # size 9 -> third bin


def test_components_validation():
    with pytest.raises(ValueError):
        connected_components(np.zeros((2, 2, 2)), 1, connectivity=18)


# ---------------------------------------------------------------------------
# threshold segmenter


def test_threshold_segmenter_labels():
    seg = ThresholdSegmenter(t1=100, t2=200, t3=300)
    vals = np.array([0, 99, 100, 199, 200, 299, 300, 60000])
    assert seg.label_values(vals).tolist() == [0, 0, 1, 1, 2, 2, 3, 3]
    with pytest.raises(ValueError):
        ThresholdSegmenter(t1=5, t2=5, t3=6)


def test_threshold_segmenter_on_sequence():
    rng = np.random.default_rng(30)
    img = (rng.random((16, 16)) * 400).astype(np.uint16)
    tree = build_tree(np.ones((16, 16)), budget=16)
    seq = patchify(img, tree, 4, kind="image")
    seg = ThresholdSegmenter(t1=100, t2=200, t3=300)
    out = seg(seq)
    assert out.kind == "mask"
    assert out.regions == seq.regions
    assert np.array_equal(out.payloads, seg.label_values(seq.payloads))


# ---------------------------------------------------------------------------
# fused distributed inference


def _random_slices(rng, n_slices, size=32):
    # piecewise-constant slices so labels are reconstruction-exact
    slices = {}
    for z in range(n_slices):
        img = np.full((size, size), 10_000, dtype=np.uint16)
        cx, cy = rng.integers(8, size - 8, size=2)
        r = rng.integers(4, 8)
        yy, xx = np.ogrid[0:size, 0:size]
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 50_000
        slices[z] = img
    return slices


def _serial_reference(slices, budget, seg, patch_size):
    fab = Fabric(n_ranks=1)
    out, _ = fused_infer({0: slices}, budget, seg, fab, patch_size=patch_size)
    return out[0]


@pytest.mark.parametrize("n_ranks", [1, 2, 3, 4, 8])
def test_fused_infer_matches_single_rank(n_ranks):
    rng = np.random.default_rng(40)
    slices = _random_slices(rng, 9)
    seg = ThresholdSegmenter(t1=20_000, t2=40_000, t3=60_000)
    reference = _serial_reference(slices, budget=16, seg=seg, patch_size=8)

    local = {r: {} for r in range(n_ranks)}
    for z, img in slices.items():
        local[z % n_ranks][z] = img  # any residency works
    fab = Fabric(n_ranks=n_ranks)
    out, report = fused_infer(local, 16, seg, fab, patch_size=8)
    for rank, owned in local.items():
        for z in owned:
            assert np.array_equal(out[rank][z], reference[z])
    assert report.n_patches > 0


def test_fused_infer_single_rank_equals_local_pipeline():
    rng = np.random.default_rng(41)
    slices = _random_slices(rng, 3)
    seg = ThresholdSegmenter(t1=20_000, t2=40_000, t3=60_000)
    fab = Fabric(n_ranks=1)
    out, _ = fused_infer({0: slices}, 16, seg, fab, patch_size=8)
    for z, img in slices.items():
        edges = canny(img.astype(np.float64))
        tree = build_tree(edges, 16)
        seq = patchify(img, tree, 8, kind="image")
        seq = PatchSequence(
            regions=seq.regions,
            payloads=np.rint(np.clip(seq.payloads, 0, 65535)),
            kind="image",
            patch_size=8,
        )
        want = depatch(seg(seq), tree).astype(np.uint8)
        assert np.array_equal(out[0][z], want)


def test_fused_infer_byte_accounting():
    rng = np.random.default_rng(42)
    slices = _random_slices(rng, 4, size=64)
    seg = ThresholdSegmenter(t1=20_000, t2=40_000, t3=60_000)
    fab = Fabric(n_ranks=2)
    local = {0: {0: slices[0], 1: slices[1]}, 1: {2: slices[2], 3: slices[3]}}
    budget, p = 16, 8
    out, report = fused_infer(local, budget, seg, fab, patch_size=p)
    assert report.image_payload_bytes == report.n_patches * p * p * 2
    raw_bytes = sum(img.nbytes for img in slices.values())
    assert report.image_payload_bytes < raw_bytes  # N * p^2 < slice area
    assert report.mask_payload_bytes == report.n_patches * ((p * p) // 4)


def test_fused_infer_rejects_duplicate_residency():
    seg = ThresholdSegmenter(t1=1, t2=2, t3=3)
    fab = Fabric(n_ranks=2)
    img = np.zeros((16, 16), dtype=np.uint16)
    with pytest.raises(ValueError):
        fused_infer({0: {0: img}, 1: {0: img}}, 4, seg, fab)
