"""The finite-difference verification harness itself."""

import numpy as np

from nlcdet import gradcheck as gc


def test_all_checks_under_thresholds():
    results = gc.run_all(trials=5, seed=0)
    assert set(results) == set(gc.THRESHOLDS)
    for name, err in results.items():
        assert err < gc.THRESHOLDS[name], f"{name}: {err}"


def test_perturbed_backward_detected():
    # negative control: a corrupted result must trip its threshold
    results = gc.run_all(trials=2, seed=0, perturb=True)
    assert results["point_to_pixel"] > gc.THRESHOLDS["point_to_pixel"]


def test_individual_checks_reproducible():
    a = gc.check_point_to_pixel(np.random.default_rng(7))
    b = gc.check_point_to_pixel(np.random.default_rng(7))
    assert a == b


def test_full_model_check_is_tight():
    err = gc.check_full_model(np.random.default_rng(3))
    assert err < 1e-5
