"""Augmentation pipelines: structure, determinism, budgets, fire rates."""

import numpy as np
import pytest

from pastekit import augment
from pastekit.augment import (
    AugConfig,
    AugPipeline,
    AugStep,
    apply,
    bl_pipeline,
    build_pipeline,
    coarse_dropout,
    do_pipeline,
)
from pastekit.composer import derive_rotscale
from pastekit.corekit.dataset import AnnotatedObject
from pastekit.corekit.geometry import BoundingBox
from pastekit.seeds import make_rng


def photo(h=60, w=80, seed=1) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 255, (h, w, 3)).astype(np.uint8)


def boxes() -> list[AnnotatedObject]:
    return [
        AnnotatedObject(1, BoundingBox(10, 10, 20, 15), visible_fraction=0.9),
        AnnotatedObject(2, BoundingBox(40, 30, 12, 12)),
    ]


# --- pipeline structure ---------------------------------------------------------

def test_bl_pipeline_structure():
    p = bl_pipeline()
    assert p.name == "BL_0.01"
    assert [s.name for s in p.steps] == ["blur", "median_blur", "to_gray", "clahe"]
    assert all(s.p == 0.01 for s in p.steps)
    assert bl_pipeline(0.5).name == "BL_0.5"


def test_do_pipeline_structure():
    p = do_pipeline()
    assert p.name == "DO_0.04"
    assert [s.name for s in p.steps] == [
        "coarse_dropout", "pixel_dropout", "scale", "rotate",
        "blur", "median_blur", "to_gray", "clahe",
    ]
    assert all(s.p == 0.04 for s in p.steps[:4])
    assert all(s.p == 0.005 for s in p.steps[4:])
    assert p.steps[0].params["area_max"] == 0.10
    assert p.steps[1].params["drop_p"] == 0.01
    assert p.steps[2].params["range"] == (0.8, 1.2)
    assert p.steps[3].params["range"] == (-15.0, 15.0)


def test_build_pipeline_from_config():
    assert build_pipeline(AugConfig()) == bl_pipeline(0.01)
    assert build_pipeline(AugConfig(p=0.2)) == bl_pipeline(0.2)
    do = build_pipeline(AugConfig(
        preset="do", p=0.05, coarse_dropout_area_max=0.08,
        scale_range=(0.9, 1.1), fill_value=77,
    ))
    assert do.name == "DO_0.05"
    assert do.steps[0].params["area_max"] == 0.08
    assert do.steps[2].params == {"range": (0.9, 1.1), "fill": 77}


def test_config_and_step_validation():
    with pytest.raises(ValueError):
        AugConfig(preset="xx")
    with pytest.raises(ValueError):
        AugConfig(coarse_dropout_area_max=0.11)
    with pytest.raises(ValueError):
        AugConfig(coarse_dropout_area_max=0.0)
    with pytest.raises(ValueError):
        AugStep("sharpen", 0.5)
    with pytest.raises(ValueError):
        AugStep("blur", 1.5)


# --- apply ---------------------------------------------------------------------

def test_apply_nothing_fires_returns_copy():
    img = photo()
    objs = boxes()
    out, new_objs = apply(bl_pipeline(0.0), img, objs, seed=3)
    assert out is not img
    assert np.array_equal(out, img)
    assert new_objs == objs


def test_apply_deterministic_in_seed():
    img = photo()
    pipe = do_pipeline(p=1.0)
    a_img, a_objs = apply(pipe, img, boxes(), seed=10)
    b_img, b_objs = apply(pipe, img, boxes(), seed=10)
    c_img, _ = apply(pipe, img, boxes(), seed=11)
    assert np.array_equal(a_img, b_img)
    assert a_objs == b_objs
    assert not np.array_equal(a_img, c_img)


def test_apply_one_draw_per_step_even_when_skipped():
    # A never-firing leading step still consumes its probability draw,
    # shifting the parameter draws of later steps in a defined way.
    img = photo()
    objs = boxes()
    pipe = AugPipeline("probe", (
        AugStep("to_gray", 0.0),
        AugStep("scale", 1.0, {"range": (0.8, 1.2), "fill": 114}),
    ))
    seed = 21
    got_img, got_objs = apply(pipe, img, objs, seed)
    rng = make_rng(seed)
    rng.random()  # to_gray gate (skipped)
    rng.random()  # scale gate (fires)
    s = float(rng.uniform(0.8, 1.2))
    want_img, want_objs = derive_rotscale(img, objs, rotation=0.0, scale=s, fill=114)
    assert np.array_equal(got_img, want_img)
    assert got_objs == want_objs


def test_pixel_steps_leave_annotations_alone():
    img = photo()
    objs = boxes()
    pipe = AugPipeline("pixels", (
        AugStep("coarse_dropout", 1.0, {"area_max": 0.10}),
        AugStep("pixel_dropout", 1.0, {"drop_p": 0.02}),
        AugStep("blur", 1.0),
        AugStep("median_blur", 1.0),
        AugStep("to_gray", 1.0),
        AugStep("clahe", 1.0),
    ))
    out, new_objs = apply(pipe, img, objs, seed=4)
    assert new_objs == objs
    assert out.shape == img.shape
    assert not np.array_equal(out, img)


def test_spatial_steps_match_offline_derivation():
    img = photo()
    objs = boxes()
    rot = AugPipeline("r", (AugStep("rotate", 1.0, {"range": (30.0, 30.0), "fill": 50}),))
    got_img, got_objs = apply(rot, img, objs, seed=0)
    want_img, want_objs = derive_rotscale(img, objs, rotation=30.0, scale=1.0, fill=50)
    assert np.array_equal(got_img, want_img)
    assert got_objs == want_objs

    shrink = AugPipeline("s", (AugStep("scale", 1.0, {"range": (0.7, 0.7), "fill": 114}),))
    got_img, got_objs = apply(shrink, img, objs, seed=0)
    want_img, want_objs = derive_rotscale(img, objs, rotation=0.0, scale=0.7, fill=114)
    assert np.array_equal(got_img, want_img)
    assert got_objs == want_objs


def test_to_gray_keeps_three_channels():
    pipe = AugPipeline("g", (AugStep("to_gray", 1.0),))
    out, _ = apply(pipe, photo(), [], seed=0)
    assert out.shape[2] == 3
    assert np.array_equal(out[..., 0], out[..., 1])
    assert np.array_equal(out[..., 1], out[..., 2])


def test_pixel_dropout_extremes():
    img = photo()
    everything = AugPipeline("pd", (
        AugStep("pixel_dropout", 1.0, {"drop_p": 1.0}),
    ))
    out, _ = apply(everything, img, [], seed=0)
    assert np.all(out == 0)
    nothing = AugPipeline("pd0", (
        AugStep("pixel_dropout", 1.0, {"drop_p": 0.0}),
    ))
    out2, _ = apply(nothing, img, [], seed=0)
    assert np.array_equal(out2, img)


# --- fire-rate statistics --------------------------------------------------------

def test_step_fire_counts_binomial(monkeypatch):
    # Instrument the real apply() path and count how often each baseline
    # step fires over 100k seeded runs at p=0.01. Expected 1000 each;
    # 3 sigma of Binomial(100000, 0.01) is ~94.4, so [906, 1094] with
    # deterministic seeds (no flake: the sequence is fixed).
    counts = {"blur": 0, "median_blur": 0, "to_gray": 0, "clahe": 0}

    def count_blur(image, rng):
        counts["blur"] += 1
        return image

    def count_median(image, rng):
        counts["median_blur"] += 1
        return image

    def count_gray(image):
        counts["to_gray"] += 1
        return image

    def count_clahe(image):
        counts["clahe"] += 1
        return image

    monkeypatch.setattr(augment, "_blur", count_blur)
    monkeypatch.setattr(augment, "_median_blur", count_median)
    monkeypatch.setattr(augment, "_to_gray", count_gray)
    monkeypatch.setattr(augment, "apply_clahe", count_clahe)

    pipe = bl_pipeline(0.01)
    img = np.zeros((2, 2, 3), dtype=np.uint8)
    for seed in range(100_000):
        apply(pipe, img, [], seed)
    for name, n in counts.items():
        assert 906 <= n <= 1094, f"{name} fired {n} times in 100k runs"


def test_coarse_dropout_budget_never_exceeded():
    img = np.full((100, 120, 3), 255, dtype=np.uint8)
    budget = int(0.10 * 100 * 120)
    saw_holes = 0
    for seed in range(1000):
        out = coarse_dropout(img, area_max=0.10, seed=seed)
        holes = int(np.all(out == 0, axis=2).sum())
        assert holes <= budget, f"seed {seed}: {holes} > {budget}"
        if holes:
            saw_holes += 1
    assert saw_holes > 900  # dropout actually does something
    assert np.all(img == 255)  # input untouched


def test_coarse_dropout_small_image_skips_oversized_holes():
    img = np.full((10, 10, 3), 255, dtype=np.uint8)
    # Minimum hole side 8 on a 10x10 image: area 64 > 10-pixel budget,
    # so every hole is skipped and the image passes through unchanged.
    out = coarse_dropout(img, area_max=0.10, seed=1)
    assert np.array_equal(out, img)


def test_coarse_dropout_validation_and_degenerate_holes():
    img = photo(20, 20)
    with pytest.raises(ValueError):
        coarse_dropout(img, area_max=1.5)
    out = coarse_dropout(img, holes=(0, 0))
    assert np.array_equal(out, img)
    assert out is not img
