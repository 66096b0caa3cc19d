"""Unit checks on the toy model itself (no subprocess)."""

import math

import pytest

from refbackend.toymodel import ToyModel, ToyModelError, ToySpec, two_level_distribution

SPEC = ToySpec.from_dict(
    {
        "grid": {"s_g": 4, "s_r": 1, "image_w": 64, "image_h": 64},
        "evidence_cells": [[0, 1], [2, 3]],
        "vocab_size": 512,
        "base_entropy_bits": 6.0,
        "per_cell_reduction_bits": 1.5,
        "attention_bias": 2.0,
        "noise_seed": 0,
    }
)


def entropy(probs):
    return -sum(p * math.log2(p) for p in probs if p > 0)


def region(row, col, model):
    g = model.spec.s_g
    return {
        "type": "visual_region", "row": row, "col": col, "span": 1,
        "bbox": list(model.cell_bbox(row, col)),
        "vokens": [model.voken_base + row * g + col],
    }


def base_segments(model, text="question"):
    return [
        {"type": "text", "tokens": model.encode(text)},
        {"type": "visual_base", "image": "sim://image"},
    ]


def test_base_entropy():
    model = ToyModel(SPEC)
    result = model.evaluate(base_segments(model))
    assert entropy(result["probs"]) == pytest.approx(6.0, abs=1e-9)


def test_entropy_floor_clamps():
    spec = ToySpec.from_dict(
        {
            "grid": {"s_g": 4, "s_r": 1, "image_w": 64, "image_h": 64},
            "evidence_cells": [[0, 1], [2, 3]],
            "base_entropy_bits": 2.0,
            "per_cell_reduction_bits": 1.5,
        }
    )
    model = ToyModel(spec)
    segments = base_segments(model) + [region(0, 1, model), region(2, 3, model)]
    assert entropy(model.evaluate(segments)["probs"]) == pytest.approx(0.0, abs=1e-9)


def test_duplicate_coverage_counts_once():
    model = ToyModel(SPEC)
    once = base_segments(model) + [region(0, 1, model)]
    twice = once + [region(0, 1, model)]
    assert entropy(model.evaluate(once)["probs"]) == pytest.approx(
        entropy(model.evaluate(twice)["probs"]), abs=1e-12
    )


def test_rows_are_stochastic_and_sized():
    model = ToyModel(SPEC)
    segments = base_segments(model) + [region(3, 0, model)]
    result = model.evaluate(segments)
    length = len(model.encode("question")) + 16 + 3
    assert len(result["attention"]) == 3
    for row in result["attention"]:
        assert len(row) == length
        assert sum(row) == pytest.approx(1.0, abs=1e-9)
    assert len(result["visual_indices"]) == 16 + 3


def test_embed_requires_exact_region_bbox():
    model = ToyModel(SPEC)
    assert model.embed_bbox([16, 0, 32, 16]) == [model.voken_base + 1]
    with pytest.raises(ToyModelError):
        model.embed_bbox([0, 0, 64, 64])  # covers 16 cells, regions hold 1
    with pytest.raises(ToyModelError):
        model.embed_bbox([-4, 0, 4, 4])


def test_two_level_endpoints():
    uniform = two_level_distribution(math.log2(8), 8, 0)
    assert uniform == [1.0 / 8] * 8
    onehot = two_level_distribution(0.0, 8, 5)
    assert onehot[5] == 1.0 and sum(onehot) == 1.0
    mid = two_level_distribution(1.5, 4, 3)
    assert entropy(mid) == pytest.approx(1.5, abs=1e-9)


def test_vocab_floor_rejected():
    with pytest.raises(ToyModelError):
        ToyModel(
            ToySpec.from_dict(
                {
                    "grid": {"s_g": 4, "s_r": 1, "image_w": 64, "image_h": 64},
                    "evidence_cells": [],
                    "vocab_size": 50,
                }
            )
        )
