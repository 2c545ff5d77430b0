import itertools
import math

import numpy as np
import pytest

from alignscan.alignment import (
    KernelConfig,
    TransportPlan,
    align_loss,
    apply_plan,
    cosine_cost,
    gaussian_kernel_matrix,
    median_bandwidth,
    mmd_sq,
    plan_cost,
    relaxed_ot_plan,
)
from alignscan.errors import DegenerateInputError, DimensionError, ParameterError
from alignscan.numcore import Var, grad_check, make_rng


def mmd_oracle(x, y, sigma):
    """Plain-python double-loop V-statistic, independent of the library path."""
    k = lambda a, b: math.exp(-float(np.sum((a - b) ** 2)) / (2.0 * sigma**2))
    n, m = len(x), len(y)
    t1 = sum(k(x[i], x[j]) for i in range(n) for j in range(n)) / n**2
    t2 = sum(k(y[i], y[j]) for i in range(m) for j in range(m)) / m**2
    t3 = sum(k(x[i], y[j]) for i in range(n) for j in range(m)) / (n * m)
    return t1 + t2 - 2.0 * t3


# -- cosine cost -------------------------------------------------------


def test_cosine_identical_direction_zero():
    c = cosine_cost(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]))
    assert abs(c[0, 0]) < 1e-12


def test_cosine_orthogonal_is_one():
    c = cosine_cost(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    assert abs(c[0, 0] - 1.0) < 1e-12


def test_cosine_hand_value():
    c = cosine_cost(np.array([[1.0, 1.0]]), np.array([[1.0, 0.0]]))
    assert abs(c[0, 0] - (1.0 - 1.0 / math.sqrt(2.0))) < 1e-12


def test_cosine_zero_row_names_index():
    with pytest.raises(DegenerateInputError, match="row 1"):
        cosine_cost(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[1.0, 0.0]]))


def test_cosine_range_and_rescale_invariance():
    rng = make_rng(5)
    x = rng.normal(size=(6, 4))
    y = rng.normal(size=(5, 4))
    c = cosine_cost(x, y)
    assert np.all(c >= -1e-12) and np.all(c <= 2.0 + 1e-12)
    scaled = x * rng.uniform(0.1, 10.0, size=(6, 1))
    assert np.max(np.abs(cosine_cost(scaled, y) - c)) <= 1e-12


# -- relaxed transport plan --------------------------------------------


def test_plan_hand_example():
    c = np.array([[0.2, 0.5], [0.9, 0.1], [0.4, 0.6]])
    plan = relaxed_ot_plan(c)
    np.testing.assert_array_equal(plan.anchor_index, [0, 1, 0])
    expected = np.array([[1 / 3, 0.0], [0.0, 1 / 3], [1 / 3, 0.0]])
    np.testing.assert_allclose(plan.dense(), expected)


def test_plan_tie_breaks_to_smallest_column():
    plan = relaxed_ot_plan(np.array([[0.5, 0.5]]))
    assert plan.anchor_index[0] == 0


def test_plan_row_sums_and_total_mass():
    rng = make_rng(11)
    c = rng.random((7, 4))
    plan = relaxed_ot_plan(c)
    dense = plan.dense()
    np.testing.assert_allclose(dense.sum(axis=1), np.full(7, 1 / 7))
    assert abs(plan.column_mass().sum() - 1.0) < 1e-12


def test_plan_rejects_empty_matrix():
    with pytest.raises(DimensionError):
        relaxed_ot_plan(np.zeros((0, 3)))


def test_plan_beats_every_row_assignment_small_exhaustive():
    rng = make_rng(21)
    for _ in range(25):
        n_src, n_anc = rng.integers(1, 5, size=2)
        c = rng.random((n_src, n_anc))
        plan = relaxed_ot_plan(c)
        best = plan_cost(plan, c)
        for assign in itertools.product(range(n_anc), repeat=n_src):
            cost = sum(c[i, j] for i, j in enumerate(assign)) / n_src
            assert best <= cost + 1e-12
        # exact index equality against the brute per-row argmin
        np.testing.assert_array_equal(plan.anchor_index, np.argmin(c, axis=1))


def test_plan_cost_below_all_permutations():
    rng = make_rng(31)
    for _ in range(10):
        t = int(rng.integers(2, 6))
        c = rng.random((t, t))
        relaxed = plan_cost(relaxed_ot_plan(c), c)
        for perm in itertools.permutations(range(t)):
            perm_cost = sum(c[i, j] for i, j in enumerate(perm)) / t
            assert relaxed <= perm_cost + 1e-12


# -- plan application --------------------------------------------------


def worked_plan():
    return TransportPlan(anchor_index=np.array([0, 1, 0]), n_src=3, n_anchor=2)


def test_apply_plan_paper_literal_hand_value():
    x = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]])
    out = apply_plan(worked_plan(), x, mode="paper_literal")
    np.testing.assert_allclose(out.data, [[4 / 3, 0.0], [0.0, 2 / 3]])


def test_apply_plan_mass_normalized_hand_value():
    x = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]])
    out = apply_plan(worked_plan(), x, mode="mass_normalized")
    np.testing.assert_allclose(out.data, [[2.0, 0.0], [0.0, 2.0]])


def test_apply_plan_identity_mass_normalized_roundtrip():
    rng = make_rng(3)
    x = rng.normal(size=(5, 3))
    plan = TransportPlan(anchor_index=np.arange(5), n_src=5, n_anchor=5)
    out = apply_plan(plan, x, mode="mass_normalized")
    np.testing.assert_allclose(out.data, x)


def test_apply_plan_matches_naive_loop_oracle():
    rng = make_rng(17)
    for _ in range(20):
        n_src, n_anc, d = rng.integers(2, 7, size=3)
        x = rng.normal(size=(n_src, d))
        plan = relaxed_ot_plan(rng.random((n_src, n_anc)))
        out = apply_plan(plan, x, mode="paper_literal").data
        naive = np.zeros((n_anc, d))
        for j in range(n_anc):
            for i in range(n_src):
                if plan.anchor_index[i] == j:
                    naive[j] += x[i] / n_src
        np.testing.assert_allclose(out, naive, atol=1e-14)


def test_apply_plan_dimension_mismatch():
    with pytest.raises(DimensionError):
        apply_plan(worked_plan(), np.zeros((4, 2)))


def test_apply_plan_unknown_mode():
    with pytest.raises(ParameterError):
        apply_plan(worked_plan(), np.zeros((3, 2)), mode="other")


def test_apply_plan_gradient_both_modes():
    rng = make_rng(23)
    plan = relaxed_ot_plan(rng.random((4, 3)))
    for mode in ("paper_literal", "mass_normalized"):
        x = Var(rng.normal(size=(4, 2)))
        report = grad_check(lambda v: (apply_plan(plan, v, mode=mode) * apply_plan(plan, v, mode=mode)).sum(), [x], tol=1e-6)
        assert report.passed, (mode, report)


# -- Gaussian kernel and MMD -------------------------------------------


def test_kernel_self_is_one():
    rng = make_rng(4)
    x = rng.normal(size=(4, 3))
    k = gaussian_kernel_matrix(x, x, sigma=1.3).data
    np.testing.assert_allclose(np.diag(k), 1.0, atol=1e-12)


def test_kernel_hand_value():
    k = gaussian_kernel_matrix(np.array([[0.0]]), np.array([[2.0]]), sigma=1.0).data
    assert abs(k[0, 0] - math.exp(-2.0)) < 1e-12


def test_kernel_entries_in_unit_interval():
    rng = make_rng(6)
    k = gaussian_kernel_matrix(rng.normal(size=(8, 5)), rng.normal(size=(9, 5)), sigma=0.7).data
    assert np.all(k > 0.0) and np.all(k <= 1.0)


def test_kernel_rejects_bad_sigma():
    with pytest.raises(ParameterError):
        gaussian_kernel_matrix(np.zeros((1, 1)), np.zeros((1, 1)), sigma=0.0)


def test_mmd_identical_sets_zero():
    rng = make_rng(8)
    x = rng.normal(size=(6, 4))
    assert abs(mmd_sq(x, x, KernelConfig(1.0)).item()) <= 1e-9


def test_mmd_two_point_hand_value():
    v = mmd_sq(np.array([[0.0]]), np.array([[2.0]]), KernelConfig(1.0)).item()
    assert abs(v - (2.0 - 2.0 * math.exp(-2.0))) < 1e-9
    assert abs(v - 1.72933) < 1e-5


def test_mmd_symmetry_and_nonnegativity():
    rng = make_rng(9)
    for _ in range(10):
        x = rng.normal(size=(5, 3))
        y = rng.normal(size=(7, 3)) + 0.5
        a = mmd_sq(x, y, KernelConfig(1.0)).item()
        b = mmd_sq(y, x, KernelConfig(1.0)).item()
        assert abs(a - b) <= 1e-12
        assert a >= -1e-9


def test_mmd_matches_double_loop_oracle_unequal_lengths():
    rng = make_rng(10)
    for _ in range(5):
        x = rng.normal(size=(4, 3))
        y = rng.normal(size=(6, 3)) + 1.0
        got = mmd_sq(x, y, KernelConfig(0.8)).item()
        want = mmd_oracle(x, y, 0.8)
        assert abs(got - want) < 1e-12


def test_mmd_positive_for_distinct_distributions_on_average():
    rng = make_rng(12)
    vals = []
    for _ in range(20):
        x = rng.normal(size=(10, 3))
        y = rng.normal(size=(10, 3)) + 1.0
        vals.append(mmd_sq(x, y).item())
    assert np.mean(vals) > 0.05


def test_mmd_errors():
    with pytest.raises(DimensionError):
        mmd_sq(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(ParameterError):
        mmd_sq(np.zeros((0, 3)), np.zeros((2, 3)))


def test_mmd_gradient_matches_finite_differences():
    rng = make_rng(13)
    x = Var(rng.normal(size=(4, 3)))
    y = Var(rng.normal(size=(4, 3)))
    report = grad_check(lambda a, b: mmd_sq(a, b, KernelConfig(1.0)), [x, y], tol=1e-6)
    assert report.passed, report


# -- bandwidth heuristic ------------------------------------------------


def test_median_bandwidth_two_points():
    sigma = median_bandwidth(np.array([[0.0]]), np.array([[2.0]]))
    assert abs(sigma - math.sqrt(2.0)) < 1e-12


def test_median_bandwidth_degenerate_fallback():
    sigma = median_bandwidth(np.ones((3, 2)), np.ones((4, 2)))
    assert sigma == 1.0


def test_median_bandwidth_homogeneity():
    rng = make_rng(14)
    x, y = rng.normal(size=(5, 3)), rng.normal(size=(6, 3))
    base = median_bandwidth(x, y)
    assert abs(median_bandwidth(3.0 * x, 3.0 * y) - 3.0 * base) < 1e-9


def test_median_bandwidth_needs_two_rows():
    with pytest.raises(ParameterError):
        median_bandwidth(np.zeros((1, 2)), np.zeros((0, 2)))


# -- combined alignment loss -------------------------------------------


def test_align_loss_zero_when_identical():
    rng = make_rng(15)
    x = rng.normal(size=(5, 3))
    assert abs(align_loss(x, x, x, KernelConfig(1.0)).item()) <= 1e-9


def test_align_loss_is_sum_of_mmds():
    rng = make_rng(16)
    xa, xv, xl = (rng.normal(size=(5, 3)) for _ in range(3))
    got = align_loss(xa, xv, xl, KernelConfig(1.0)).item()
    want = mmd_sq(xv, xl, KernelConfig(1.0)).item() + mmd_sq(xa, xl, KernelConfig(1.0)).item()
    assert abs(got - want) < 1e-12


def test_align_loss_length_mismatch():
    with pytest.raises(DimensionError):
        align_loss(np.zeros((4, 3)), np.zeros((5, 3)), np.zeros((5, 3)))


def test_align_loss_gradient_wrt_video():
    rng = make_rng(18)
    xa = rng.normal(size=(4, 3))
    xl = rng.normal(size=(4, 3))
    xv = Var(rng.normal(size=(4, 3)))
    report = grad_check(lambda v: align_loss(xa, v, xl, KernelConfig(1.0)), [xv], tol=1e-6)
    assert report.passed, report
