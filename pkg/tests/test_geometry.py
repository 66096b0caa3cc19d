import numpy as np
import pytest

from aimcot.errors import ContractError, GridIndexError
from aimcot.geometry import GridSpec, RegionMask, apply_mask


def test_cell_bbox_even_partition():
    spec = GridSpec(s_g=4, image_w=16, image_h=16)
    assert spec.cell_bbox(0, 0) == (0, 0, 4, 4)
    assert spec.cell_bbox(3, 3) == (12, 12, 16, 16)


def test_cell_bbox_remainder_goes_to_trailing_cells():
    spec = GridSpec(s_g=4, image_w=17, image_h=16)
    # columns widths 4,4,4,5; rows all 4
    assert spec.cell_bbox(3, 0) == (0, 12, 4, 16)
    assert spec.cell_bbox(0, 3) == (12, 0, 17, 4)
    assert spec.cell_bbox(3, 3) == (12, 12, 17, 16)


def tiling_oracle(spec: GridSpec) -> None:
    """Exhaustive check: cell bboxes tile the image exactly, widths differ <= 1."""
    coverage = np.zeros((spec.image_h, spec.image_w), dtype=int)
    widths, heights = set(), set()
    for row in range(spec.s_g):
        for col in range(spec.s_g):
            x0, y0, x1, y1 = spec.cell_bbox(row, col)
            assert 0 <= x0 < x1 <= spec.image_w
            assert 0 <= y0 < y1 <= spec.image_h
            widths.add(x1 - x0)
            heights.add(y1 - y0)
            coverage[y0:y1, x0:x1] += 1
    assert (coverage == 1).all()
    assert max(widths) - min(widths) <= 1
    assert max(heights) - min(heights) <= 1


def test_tiling_exhaustive():
    for s_g in range(1, 9):
        for w in range(8, 34):
            for h in range(8, 34):
                tiling_oracle(GridSpec(s_g=s_g, image_w=w, image_h=h))


def test_cell_bbox_out_of_range():
    spec = GridSpec(s_g=4, image_w=16, image_h=16)
    with pytest.raises(GridIndexError):
        spec.cell_bbox(4, 0)
    with pytest.raises(GridIndexError):
        spec.cell_bbox(0, -1)


def test_region_from_cell_plain():
    spec = GridSpec(s_g=4, image_w=16, image_h=16, s_r=1)
    region = spec.region_from_cell(2, 3)
    assert (region.row, region.col, region.span) == (2, 3, 1)
    assert region.bbox == spec.cell_bbox(2, 3)


def test_region_from_cell_clamps():
    spec = GridSpec(s_g=4, image_w=16, image_h=16, s_r=2)
    region = spec.region_from_cell(3, 3)
    assert (region.row, region.col, region.span) == (2, 2, 2)


def test_region_bbox_is_cell_union():
    spec = GridSpec(s_g=4, image_w=20, image_h=16, s_r=1)
    region = spec.region_from_cell(0, 0)
    assert region.bbox == (0, 0, 5, 4)


def test_clamped_regions_stay_inside_grid():
    for s_g in range(1, 7):
        for s_r in range(1, s_g + 1):
            spec = GridSpec(s_g=s_g, image_w=32, image_h=32, s_r=s_r)
            for row in range(s_g):
                for col in range(s_g):
                    region = spec.region_from_cell(row, col)
                    assert region.row + region.span <= s_g
                    assert region.col + region.span <= s_g


def test_gridspec_invariants():
    with pytest.raises(ContractError):
        GridSpec(s_g=0, image_w=16, image_h=16)
    with pytest.raises(ContractError):
        GridSpec(s_g=4, image_w=16, image_h=16, s_r=5)
    with pytest.raises(ContractError):
        GridSpec(s_g=8, image_w=4, image_h=16)


def test_apply_mask_covers_everything():
    spec = GridSpec(s_g=2, image_w=8, image_h=8, s_r=2)
    full = spec.region_from_cell(0, 0)
    mask = apply_mask(spec.empty_mask(), [full])
    assert mask.cells.all()


def test_apply_mask_identity_and_idempotence():
    spec = GridSpec(s_g=4, image_w=16, image_h=16)
    base = apply_mask(spec.empty_mask(), [spec.region_from_cell(1, 2)])
    assert apply_mask(base, []).cells.tolist() == base.cells.tolist()
    r = spec.region_from_cell(0, 0)
    once = apply_mask(spec.empty_mask(), [r, r])
    assert once.cells.sum() == 1

    rng = np.random.default_rng(3)
    mask = spec.empty_mask()
    for _ in range(20):
        regions = [
            spec.region_from_cell(int(rng.integers(4)), int(rng.integers(4)))
            for _ in range(int(rng.integers(3)))
        ]
        after = apply_mask(mask, regions)
        # monotone: never clears
        assert (after.cells | mask.cells).tolist() == after.cells.tolist()
        assert (after.cells & mask.cells).tolist() == mask.cells.tolist()
        # idempotent
        again = apply_mask(after, regions)
        assert again.cells.tolist() == after.cells.tolist()
        mask = after


def test_mask_shape_validation():
    spec = GridSpec(s_g=4, image_w=16, image_h=16)
    with pytest.raises(ContractError):
        RegionMask(spec=spec, cells=np.zeros((3, 4), dtype=bool))
