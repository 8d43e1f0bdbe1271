import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tomofuse.patching import (
    PatchSequence,
    PatchTree,
    Region,
    build_tree,
    canny,
    depatch,
    morton_index,
    pad_to_square,
    patchify,
)


# ---------------------------------------------------------------------------
# canny


def test_canny_constant_image_has_no_edges():
    assert np.all(canny(np.full((32, 32), 3.7)) == 0)


def test_canny_vertical_step_is_single_column():
    img = np.zeros((16, 16))
    img[:, 8:] = 1.0
    edges = canny(img, low_ratio=0.2, high_ratio=0.5, sigma=1.0)
    cols = np.nonzero(edges.any(axis=0))[0]
    assert len(cols) == 1  # one-pixel-wide line (NMS)
    assert cols[0] in (7, 8)
    rows_hit = edges[:, cols[0]]
    assert rows_hit.sum() >= 14  # nearly every row marked


def test_canny_invariant_to_affine_rescale():
    rng = np.random.default_rng(4)
    img = rng.random((24, 24))
    base = canny(img, 0.15, 0.4, 1.0)
    scaled = canny(2.0 * img + 5.0, 0.15, 0.4, 1.0)
    assert np.array_equal(base, scaled)


def test_canny_output_is_binary():
    rng = np.random.default_rng(5)
    edges = canny(rng.random((20, 20)), 0.1, 0.3, 1.0)
    assert set(np.unique(edges)).issubset({0.0, 1.0})


def test_canny_validation():
    with pytest.raises(ValueError):
        canny(np.zeros((4, 4)), 0.5, 0.2)
    with pytest.raises(ValueError):
        canny(np.zeros((4, 4)), 0.1, 1.5)
    with pytest.raises(ValueError):
        canny(np.zeros((4, 4)), 0.1, 0.2, sigma=-1)


# ---------------------------------------------------------------------------
# tree construction


def test_morton_interleave_x_low():
    assert [morton_index((x, y)) for y in (0, 1) for x in (0, 1)] == [0, 1, 2, 3]
    assert morton_index((3, 5)) == 0b100111  # x=11, y=101 interleaved


def test_build_tree_budget_law_on_flat_map():
    # flat map, N=16, quadtree: 5 splits yield exactly 16 leaves
    tree = build_tree(np.zeros((32, 32)), budget=16)
    assert tree.n_leaves == 16
    assert (tree.n_leaves - 1) % 3 == 0


def test_build_tree_budget_one_is_root_only():
    tree = build_tree(np.ones((16, 16)), budget=1)
    assert tree.n_leaves == 1
    assert tree.root.is_leaf


def test_build_tree_descends_into_hot_quadrant():
    edge = np.zeros((8, 8))
    edge[0:2, 0:2] = 1.0  # hot top-left corner
    tree = build_tree(edge, budget=13)
    # after the root split, every further split stays inside the hot quadrant
    hot = [l for l in tree.leaves if all(o < 4 for o in l.region.origin)]
    assert len(hot) == 10
    sizes = sorted(leaf.region.size for leaf in tree.leaves)
    assert sizes[:4] == [1, 1, 1, 1]
    cold = [l for l in tree.leaves if any(o >= 4 for o in l.region.origin)]
    assert all(leaf.region.size == 4 for leaf in cold)
    # the hot pixels themselves were refined to unit size
    hot_pixels = [l for l in tree.leaves if all(o < 2 for o in l.region.origin)]
    assert all(l.region.size == 1 for l in hot_pixels)


def test_leaves_tile_padded_square_exactly():
    rng = np.random.default_rng(6)
    for shape in ((16, 16), (20, 13), (9, 31)):
        tree = build_tree(rng.random(shape), budget=22)
        cover = np.zeros((tree.padded, tree.padded), dtype=int)
        for leaf in tree.leaves:
            cover[leaf.region.slices()] += 1
        assert np.all(cover == 1)


def test_leaves_sorted_by_z_index():
    rng = np.random.default_rng(7)
    tree = build_tree(rng.random((32, 32)), budget=19)
    zs = [leaf.region.z_index() for leaf in tree.leaves]
    assert zs == sorted(zs)
    assert len(set(zs)) == len(zs)


def test_octree_fanout():
    vol = np.zeros((8, 8, 8))
    vol[0, 0, 0] = 1.0
    tree = build_tree(vol, budget=15)
    assert tree.fanout == 8
    assert tree.n_leaves == 15  # 1 + 2*(8-1)
    cover = np.zeros((8, 8, 8), dtype=int)
    for leaf in tree.leaves:
        cover[leaf.region.slices()] += 1
    assert np.all(cover == 1)


# ---------------------------------------------------------------------------
# patchify / depatch


def test_patchify_native_resolution_is_exact():
    rng = np.random.default_rng(8)
    img = rng.random((16, 16))
    # all-ones map scores regions by area, so refinement is breadth-first
    # and N=16 yields a uniform 4x4 grid of 4-px leaves
    tree = build_tree(np.ones((16, 16)), budget=16)
    assert all(leaf.region.size == 4 for leaf in tree.leaves)
    seq = patchify(img, tree, patch_size=4, kind="image")
    for region, payload in zip(seq.regions, seq.payloads):
        x0, y0 = region.origin
        assert np.array_equal(payload, img[y0 : y0 + 4, x0 : x0 + 4])


def test_image_and_mask_sequences_align():
    rng = np.random.default_rng(9)
    img = rng.random((32, 32))
    mask = rng.integers(0, 4, size=(32, 32))
    tree = build_tree(canny(img), budget=25)
    a = patchify(img, tree, 8, kind="image")
    b = patchify(mask, tree, 8, kind="mask")
    assert a.regions == b.regions


def test_z_order_of_equal_quadrants():
    tree = build_tree(np.zeros((8, 8)), budget=4)
    origins = [leaf.region.origin for leaf in tree.leaves]
    assert origins == [(0, 0), (4, 0), (0, 4), (4, 4)]


def test_depatch_inverts_patchify_on_leaf_uniform_masks():
    rng = np.random.default_rng(10)
    edge = rng.random((32, 32))
    tree = build_tree(edge, budget=22)
    mask = np.zeros((32, 32))
    for i, leaf in enumerate(tree.leaves):
        mask[leaf.region.slices()] = i % 4
    seq = patchify(mask, tree, 8, kind="mask")
    back = depatch(seq, tree)
    assert np.array_equal(back, mask)


def test_depatch_matches_nearest_down_up_on_mixed_leaves():
    rng = np.random.default_rng(11)
    mask = rng.integers(0, 4, size=(8, 8)).astype(float)
    tree = build_tree(np.zeros((8, 8)), budget=1)  # single 8x8 leaf
    seq = patchify(mask, tree, 4, kind="mask")
    back = depatch(seq, tree)
    # documented lossy behavior: nearest-neighbor down then up
    down = mask[np.ix_([1, 3, 5, 7], [1, 3, 5, 7])]
    up = down[np.repeat(np.arange(4), 2)][:, np.repeat(np.arange(4), 2)]
    assert np.array_equal(back, up)


def test_depatch_empty_mask_stays_empty():
    tree = build_tree(np.zeros((16, 16)), budget=10)
    seq = patchify(np.zeros((16, 16)), tree, 4, kind="mask")
    assert np.all(depatch(seq, tree) == 0)


def test_depatch_rejects_mismatched_sequence():
    tree_a = build_tree(np.zeros((16, 16)), budget=10)
    tree_b = build_tree(np.zeros((16, 16)), budget=4)
    seq = patchify(np.zeros((16, 16)), tree_a, 4, kind="mask")
    with pytest.raises(ValueError):
        depatch(seq, tree_b)


def test_patchify_validation():
    tree = build_tree(np.zeros((8, 8)), budget=4)
    with pytest.raises(ValueError):
        patchify(np.zeros((8, 8)), tree, 0)
    with pytest.raises(ValueError):
        patchify(np.zeros((9, 9)), tree, 4)
    with pytest.raises(ValueError):
        PatchSequence(regions=[], payloads=np.zeros((0, 4, 4)), kind="bogus", patch_size=4)


def test_depatch_crops_to_original_extent():
    rng = np.random.default_rng(12)
    mask = rng.integers(0, 4, size=(20, 13)).astype(float)
    tree = build_tree(np.zeros((20, 13)), budget=16)
    seq = patchify(mask, tree, 8, kind="mask")
    back = depatch(seq, tree)
    assert back.shape == (20, 13)


# ---------------------------------------------------------------------------
# serialization


def test_tree_serialization_round_trip():
    rng = np.random.default_rng(13)
    edge = rng.random((32, 32))
    tree = build_tree(edge, budget=19)
    clone = PatchTree.from_bytes(tree.to_bytes())
    assert clone.extent == tree.extent
    assert clone.padded == tree.padded
    assert clone.fanout == tree.fanout
    assert clone.budget == tree.budget
    assert clone.leaf_regions() == tree.leaf_regions()


def test_remote_depatch_via_serialized_tree():
    rng = np.random.default_rng(14)
    edge = rng.random((16, 16))
    tree = build_tree(edge, budget=13)
    mask = np.zeros((16, 16))
    for i, leaf in enumerate(tree.leaves):
        mask[leaf.region.slices()] = (i * 2) % 4
    seq = patchify(mask, tree, 4, kind="mask")
    remote = PatchTree.from_bytes(tree.to_bytes())
    assert np.array_equal(depatch(seq, remote), mask)


def test_from_bytes_rejects_garbage():
    with pytest.raises(ValueError):
        PatchTree.from_bytes(b"NOPE" + bytes(16))


# ---------------------------------------------------------------------------
# randomized structural laws (small-scale version of the acceptance sweep)


@settings(max_examples=80, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    budget=st.integers(1, 40),
    shape=st.sampled_from([(16, 16), (32, 32), (24, 17)]),
)
def test_tree_laws_random(seed, budget, shape):
    rng = np.random.default_rng(seed)
    edge = rng.random(shape)
    tree = build_tree(edge, budget=budget)
    assert (tree.n_leaves - 1) % (tree.fanout - 1) == 0
    k = (tree.n_leaves - 1) // (tree.fanout - 1)
    assert tree.n_leaves <= budget
    # maximal: one more split would exceed the budget (or nothing splittable)
    if any(leaf.region.size >= 2 for leaf in tree.leaves):
        assert tree.n_leaves + (tree.fanout - 1) > budget
    assert sum(leaf.region.size**2 for leaf in tree.leaves) == tree.padded**2
    zs = [leaf.region.z_index() for leaf in tree.leaves]
    assert zs == sorted(zs) and len(set(zs)) == len(zs)
