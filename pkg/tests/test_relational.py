import numpy as np
import pytest

from relkd import Tape, finite_difference_check
from relkd.errors import ConfigError, DimensionError, DomainError
from relkd.relational import (angle_potentials, distance_potentials,
                              enumerate_angle_triplets, enumerate_pairs,
                              huber, rkd_angle_loss, rkd_da_loss,
                              rkd_distance_loss)

from oracles import (angle_potentials_ref, angle_triplets_ref,
                     distance_potentials_ref, rkd_angle_ref, rkd_distance_ref,
                     similarity_transform)


def loss_value(fn, teacher, student):
    return float(fn(teacher, Tape().constant(student)).value[0, 0])


# ---------------------------------------------------------------------------
# tuple enumeration


def test_pairs_smallest_case():
    assert enumerate_pairs(2) == [(0, 1)]


def test_pairs_count_choose_two():
    assert len(enumerate_pairs(4)) == 6


def test_pairs_match_naive_double_loop():
    naive = [(i, j) for i in range(8) for j in range(8) if i < j]
    assert enumerate_pairs(8) == naive
    assert len(naive) == 28


def test_pairs_reject_tiny_n():
    with pytest.raises(DomainError):
        enumerate_pairs(1)


def test_angle_triplets_n3():
    trips = enumerate_angle_triplets(3)
    assert len(trips) == 3
    assert sorted(t[1] for t in trips) == [0, 1, 2]  # each point once as vertex


def test_angle_triplets_n4_count():
    assert len(enumerate_angle_triplets(4)) == 12


def test_angle_triplets_match_naive_triple_loop():
    assert sorted(enumerate_angle_triplets(6)) == sorted(angle_triplets_ref(6))
    assert len(enumerate_angle_triplets(6)) == 60


def test_angle_triplets_reject_tiny_n():
    with pytest.raises(DomainError):
        enumerate_angle_triplets(2)


# ---------------------------------------------------------------------------
# potentials


def test_distance_potential_single_pair_normalizes_to_one():
    e = np.array([[0.0, 0.0], [3.0, 4.0]])
    psi = distance_potentials(Tape().constant(e), enumerate_pairs(2)).value
    np.testing.assert_allclose(psi, [[1.0]])


def test_distance_potentials_three_collinear_points():
    e = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
    psi = distance_potentials(Tape().constant(e), enumerate_pairs(3)).value[:, 0]
    # raw distances {1, 2, 3}, mean 2 -> potentials {0.5, 1.0, 1.5};
    # pair order is (0,1), (0,2), (1,2)
    np.testing.assert_allclose(psi, [0.5, 1.5, 1.0])
    np.testing.assert_allclose(sorted(psi), [0.5, 1.0, 1.5])


def test_distance_potentials_identical_points_all_zero():
    e = np.zeros((4, 3))
    tape = Tape()
    x = tape.leaf(e)
    psi = distance_potentials(x, enumerate_pairs(4))
    assert np.all(psi.value == 0.0)
    from relkd import autodiff as ad
    ad.reduce_mean(psi).backward()
    assert np.isfinite(x.grad).all()


def test_angle_right_angle_is_zero():
    e = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    psi = angle_potentials(Tape().constant(e), [(0, 1, 2)]).value
    np.testing.assert_allclose(psi, [[0.0]], atol=1e-15)


def test_angle_collinear_same_and_opposite_sides():
    e = np.array([[1.0, 0.0], [0.0, 0.0], [2.0, 0.0]])
    # vertex at the origin sees both flanks on the same side
    same = angle_potentials(Tape().constant(e), [(0, 1, 2)]).value[0, 0]
    # vertex at (1,0) sits between the flanks
    opposite = angle_potentials(Tape().constant(e), [(1, 0, 2)]).value[0, 0]
    assert same == pytest.approx(1.0, abs=1e-12)
    assert opposite == pytest.approx(-1.0, abs=1e-12)


def test_angle_equilateral_triangle_is_half():
    e = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    for vertex in range(3):
        flanks = [i for i in range(3) if i != vertex]
        psi = angle_potentials(Tape().constant(e),
                               [(flanks[0], vertex, flanks[1])]).value[0, 0]
        assert psi == pytest.approx(0.5, abs=1e-12)


def test_angle_values_stay_in_unit_interval():
    rng = np.random.default_rng(0)
    for _ in range(20):
        e = rng.normal(size=(6, 3)) * rng.uniform(0.1, 100.0)
        psi = angle_potentials(Tape().constant(e),
                               enumerate_angle_triplets(6)).value
        assert np.all(psi >= -1.0) and np.all(psi <= 1.0)


# ---------------------------------------------------------------------------
# huber


def test_huber_zero_at_equal():
    assert huber(3.7, 3.7) == 0.0


def test_huber_linear_branch():
    assert huber(1.5, 0.0) == pytest.approx(1.0)


def test_huber_quadratic_branch():
    assert huber(0.5, 0.0) == pytest.approx(0.125)


def test_huber_continuous_at_transition():
    below = huber(1.0 - 1e-9, 0.0)
    above = huber(1.0 + 1e-9, 0.0)
    assert abs(below - above) < 1e-8
    assert huber(1.0, 0.0) == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# losses: examples


def test_distance_loss_zero_when_student_is_teacher():
    e = np.random.default_rng(0).normal(size=(5, 4))
    assert loss_value(rkd_distance_loss, e, e) == 0.0


def test_distance_loss_invariant_to_similarity_transform():
    rng = np.random.default_rng(1)
    e = rng.normal(size=(6, 3))
    rot90 = np.array([[0.0, -1.0], [1.0, 0.0]])
    e2 = np.random.default_rng(2).normal(size=(4, 2))
    transformed = 3.0 * (e2 @ rot90) + np.array([[5.0, -2.0]])
    assert loss_value(rkd_distance_loss, e2, transformed) <= 1e-10


def test_distance_loss_hand_computed_example():
    teacher = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
    student = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    # teacher psi {0.5,1,1.5}, student psi {0.75,0.75,1.5}
    expected = (0.5 * 0.25**2 + 0.5 * 0.25**2 + 0.0) / 3.0
    assert loss_value(rkd_distance_loss, teacher, student) == pytest.approx(
        expected, abs=1e-15)


def test_angle_loss_zero_when_student_is_teacher():
    e = np.random.default_rng(3).normal(size=(5, 3))
    assert loss_value(rkd_angle_loss, e, e) <= 1e-12


def test_angle_loss_right_triangle_matches_naive():
    teacher = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    student = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    got = loss_value(rkd_angle_loss, teacher, student)
    assert got == pytest.approx(rkd_angle_ref(teacher, student), abs=1e-12)


def test_losses_reject_batch_mismatch_and_tiny_batches():
    t = np.zeros((4, 2))
    with pytest.raises(DimensionError):
        rkd_distance_loss(t, Tape().constant(np.zeros((3, 2))))
    with pytest.raises(DomainError):
        rkd_distance_loss(np.zeros((1, 2)), Tape().constant(np.zeros((1, 2))))
    with pytest.raises(DomainError):
        rkd_angle_loss(np.zeros((2, 2)), Tape().constant(np.zeros((2, 2))))


def test_da_loss_reduces_to_distance_when_angle_weight_zero():
    rng = np.random.default_rng(4)
    t, s = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    tape = Tape()
    combined = rkd_da_loss(t, tape.constant(s), 1.0, 0.0).value[0, 0]
    assert combined == loss_value(rkd_distance_loss, t, s)


def test_da_loss_default_weights_match_metric_preset():
    rng = np.random.default_rng(5)
    t, s = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    got = loss_value(rkd_da_loss, t, s)
    expected = (loss_value(rkd_distance_loss, t, s)
                + 2.0 * loss_value(rkd_angle_loss, t, s))
    assert got == pytest.approx(expected, rel=1e-15)


def test_da_loss_classification_preset_weights():
    rng = np.random.default_rng(6)
    t, s = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    tape = Tape()
    got = rkd_da_loss(t, tape.constant(s), 25.0, 50.0).value[0, 0]
    expected = (25.0 * loss_value(rkd_distance_loss, t, s)
                + 50.0 * loss_value(rkd_angle_loss, t, s))
    assert got == pytest.approx(expected, rel=1e-15)


def test_da_loss_rejects_zero_and_negative_weights():
    t = np.zeros((3, 2))
    with pytest.raises(ConfigError):
        rkd_da_loss(t, Tape().constant(t), 0.0, 0.0)
    with pytest.raises(ConfigError):
        rkd_da_loss(t, Tape().constant(t), -1.0, 1.0)


# ---------------------------------------------------------------------------
# invariants & properties


@pytest.mark.parametrize("seed", range(25))
def test_similarity_invariance_both_losses(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 11))
    d = int(rng.integers(2, 9))
    t = rng.normal(size=(n, d))
    s = rng.normal(size=(n, d))
    base_d = loss_value(rkd_distance_loss, t, s)
    base_a = loss_value(rkd_angle_loss, t, s)
    # transform the student side, then the teacher side
    s2 = similarity_transform(s, rng)
    assert abs(loss_value(rkd_distance_loss, t, s2) - base_d) <= 1e-9
    assert abs(loss_value(rkd_angle_loss, t, s2) - base_a) <= 1e-9
    t2 = similarity_transform(t, rng)
    assert abs(loss_value(rkd_distance_loss, t2, s) - base_d) <= 1e-9
    assert abs(loss_value(rkd_angle_loss, t2, s) - base_a) <= 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_zero_at_structural_match(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(3, 9))
    d = int(rng.integers(2, 6))
    t = rng.normal(size=(n, d))
    s = similarity_transform(t, rng)
    assert loss_value(rkd_distance_loss, t, s) <= 1e-10
    assert loss_value(rkd_angle_loss, t, s) <= 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_mean_distance_potential_is_one(seed):
    rng = np.random.default_rng(200 + seed)
    n = int(rng.integers(2, 12))
    e = rng.normal(size=(n, int(rng.integers(2, 6))))
    psi = distance_potentials(Tape().constant(e), enumerate_pairs(n)).value
    assert abs(psi.mean() - 1.0) <= 1e-9


@pytest.mark.parametrize("seed", range(50))
def test_oracle_equivalence_small_batches(seed):
    rng = np.random.default_rng(300 + seed)
    n = int(rng.integers(3, 9))
    d = int(rng.integers(2, 5))
    t = rng.normal(size=(n, d))
    s = rng.normal(size=(n, d))
    assert abs(loss_value(rkd_distance_loss, t, s)
               - rkd_distance_ref(t, s)) <= 1e-10
    assert abs(loss_value(rkd_angle_loss, t, s)
               - rkd_angle_ref(t, s)) <= 1e-10


def test_potentials_match_naive_reference_values():
    rng = np.random.default_rng(9)
    e = rng.normal(size=(6, 3))
    psi_d = distance_potentials(Tape().constant(e), enumerate_pairs(6)).value[:, 0]
    ref_d, _ = distance_potentials_ref(e)
    np.testing.assert_allclose(psi_d, ref_d, atol=1e-12)
    psi_a = angle_potentials(Tape().constant(e),
                             enumerate_angle_triplets(6)).value[:, 0]
    np.testing.assert_allclose(psi_a, angle_potentials_ref(e), atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_checks_both_losses(seed):
    rng = np.random.default_rng(400 + seed)
    t = rng.normal(size=(6, 3))
    s = rng.normal(size=(6, 3))
    err_d = finite_difference_check(lambda l: rkd_distance_loss(t, l[0]), [s])
    assert err_d < 1e-4
    err_a = finite_difference_check(lambda l: rkd_angle_loss(t, l[0]), [s])
    assert err_a < 1e-4


def test_degenerate_duplicate_points_keep_losses_finite():
    t = np.random.default_rng(10).normal(size=(4, 3))
    s = np.zeros((4, 3))  # all student points identical
    tape = Tape()
    leaf = tape.leaf(s)
    loss = rkd_da_loss(t, leaf)
    assert np.isfinite(loss.value).all()
    tape.backward(loss)
    assert np.isfinite(leaf.grad).all()
