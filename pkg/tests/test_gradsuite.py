"""Suite-level gradient verification: the aggregated check passes inside its
time budget, and a deliberately broken backward is caught and named."""

import time

import geoaware.numerics.nnops as nnops
from geoaware.gradsuite import SUITE_TOLERANCE, run_gradcheck_suite, suite_passed

EXPECTED_COMPONENTS = {
    "add_sub_mul", "matmul", "reshape_transpose_slice_concat", "relu",
    "softmax", "layer_norm", "conv1d", "conv2d", "adaptive_avg_pool1d",
    "embedding_lookup", "mse_loss", "cross_entropy", "project_vision",
    "pixel_features", "trunk", "mlp_head", "vqbet_head", "end_to_end",
}


def test_suite_passes_within_budget():
    start = time.time()
    records = run_gradcheck_suite()
    elapsed = time.time() - start
    assert suite_passed(records)
    assert elapsed <= 60.0
    assert {r["component"] for r in records} == EXPECTED_COMPONENTS
    for record in records:
        assert set(record) == {"component", "max_rel_err", "tolerance", "passed"}
        assert record["tolerance"] == SUITE_TOLERANCE
        assert record["max_rel_err"] <= SUITE_TOLERANCE


def test_broken_conv1d_backward_is_named(monkeypatch):
    original = nnops._conv1d_input_grad

    def skewed(gcols, in_shape, k, stride, padding):
        return original(gcols, in_shape, k, stride, padding) * 1.01

    monkeypatch.setattr(nnops, "_conv1d_input_grad", skewed)
    records = run_gradcheck_suite()
    assert not suite_passed(records)
    failed = {r["component"] for r in records if not r["passed"]}
    assert "conv1d" in failed
