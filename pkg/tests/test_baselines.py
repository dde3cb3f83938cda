import numpy as np
import pytest

from relkd import Tape, finite_difference_check
from relkd.baselines import (ProjectionParams, TripletIndexBatch,
                             cross_entropy_loss, hkd_loss, ikd_l2_loss,
                             triplet_loss)
from relkd.errors import ConfigError, DimensionError, DomainError

from oracles import random_rotation


def value(node):
    return float(node.value[0, 0])


# ---------------------------------------------------------------------------
# triplet loss


def make_trips(*columns):
    a, p, n = columns
    return TripletIndexBatch(np.array(a), np.array(p), np.array(n))


def test_triplet_index_batch_rejects_anchor_equal_positive():
    with pytest.raises(DomainError):
        make_trips([0], [0], [1])


def test_triplet_label_contract_validation():
    trips = make_trips([0], [1], [2])
    trips.validate_labels([0, 0, 1])
    with pytest.raises(DomainError):
        trips.validate_labels([0, 1, 1])


def test_triplet_hinge_inactive():
    # d(a,p)^2 = 0, d(a,n)^2 = 1, margin 0.2 -> no loss
    e = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    loss = triplet_loss(Tape().constant(e), make_trips([0], [1], [2]), 0.2)
    assert value(loss) == 0.0


def test_triplet_hinge_equals_margin_at_tie():
    e = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    loss = triplet_loss(Tape().constant(e), make_trips([0], [1], [2]), 0.2)
    assert value(loss) == pytest.approx(0.2)


def test_triplet_empty_batch_is_domain_error():
    e = np.zeros((3, 2))
    with pytest.raises(DomainError):
        triplet_loss(Tape().constant(e), make_trips([], [], []), 0.2)


def test_triplet_negative_margin_rejected():
    e = np.zeros((3, 2))
    with pytest.raises(ConfigError):
        triplet_loss(Tape().constant(e), make_trips([0], [1], [2]), -0.1)


@pytest.mark.parametrize("seed", range(20))
def test_triplet_gradient_check(seed):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=(6, 3))
    trips = make_trips([0, 1, 4], [1, 0, 5], [2, 3, 0])

    def build(leaves):
        return triplet_loss(leaves[0], trips, 0.2)

    # nudge away from hinge kinks before checking
    tape = Tape()
    node = tape.leaf(e)
    if np.any(np.abs(_hinge_args(e, trips, 0.2)) < 0.05):
        e = e * 1.5
    assert finite_difference_check(build, [e]) < 1e-4


def _hinge_args(e, trips, margin):
    d_ap = ((e[trips.anchors] - e[trips.positives]) ** 2).sum(axis=1)
    d_an = ((e[trips.anchors] - e[trips.negatives]) ** 2).sum(axis=1)
    return d_ap - d_an + margin


def test_triplet_invariant_under_isometry_but_not_scale():
    rng = np.random.default_rng(42)
    e = rng.normal(size=(6, 3))
    trips = make_trips([0, 2], [1, 3], [4, 5])
    base = value(triplet_loss(Tape().constant(e), trips, 0.2))
    moved = e @ random_rotation(3, rng) + rng.normal(size=(1, 3))
    assert abs(value(triplet_loss(Tape().constant(moved), trips, 0.2)) - base) <= 1e-9
    # choose a configuration with an active hinge so scaling must change it
    active = np.array([[0.0, 0.0], [1.0, 0.0], [0.9, 0.0]])
    atrips = make_trips([0], [1], [2])
    before = value(triplet_loss(Tape().constant(active), atrips, 0.2))
    after = value(triplet_loss(Tape().constant(2.0 * active), atrips, 0.2))
    assert before > 0.0
    assert after != pytest.approx(before)


# ---------------------------------------------------------------------------
# softened-softmax KL distillation


def test_hkd_zero_when_logits_equal():
    logits = np.random.default_rng(0).normal(size=(4, 5))
    assert value(hkd_loss(logits, Tape().constant(logits), 4.0)) == 0.0


def test_hkd_hand_computed_two_class_case():
    teacher = np.array([[0.0, 0.0]])
    student = np.array([[0.0, np.log(3.0)]])
    got = value(hkd_loss(teacher, Tape().constant(student), 1.0))
    expected = 0.5 * np.log(2.0) + 0.5 * np.log(2.0 / 3.0)
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(0.14384, abs=1e-5)


def test_hkd_monotone_decreasing_in_temperature():
    teacher = np.array([[2.0, -1.0, 0.5]])
    student = np.array([[-1.0, 1.0, 0.0]])
    losses = [value(hkd_loss(teacher, Tape().constant(student), tau))
              for tau in (1.0, 4.0, 16.0, 100.0)]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-3


def test_hkd_nonnegative_and_shape_checked():
    rng = np.random.default_rng(1)
    for _ in range(20):
        t = rng.normal(size=(3, 4))
        s = rng.normal(size=(3, 4))
        assert value(hkd_loss(t, Tape().constant(s), 4.0)) >= 0.0
    with pytest.raises(DimensionError):
        hkd_loss(np.zeros((2, 3)), Tape().constant(np.zeros((2, 4))), 4.0)
    with pytest.raises(ConfigError):
        hkd_loss(np.zeros((2, 3)), Tape().constant(np.zeros((2, 3))), 0.0)


def test_hkd_tau_squared_rescale_flag():
    t = np.array([[1.0, 0.0]])
    s = np.array([[0.0, 1.0]])
    plain = value(hkd_loss(t, Tape().constant(s), 4.0))
    scaled = value(hkd_loss(t, Tape().constant(s), 4.0, tau_squared_rescale=True))
    assert scaled == pytest.approx(16.0 * plain, rel=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_hkd_gradient_check(seed):
    rng = np.random.default_rng(seed)
    teacher = rng.normal(size=(3, 4))
    student = rng.normal(size=(3, 4))
    err = finite_difference_check(
        lambda l: hkd_loss(teacher, l[0], 4.0), [student])
    assert err < 1e-4


# ---------------------------------------------------------------------------
# projected-L2 matching


def test_ikd_l2_zero_with_identity_projection():
    e = np.random.default_rng(0).normal(size=(4, 3))
    proj = ProjectionParams(np.eye(3), np.zeros((1, 3)))
    assert value(ikd_l2_loss(e, Tape().constant(e), proj)) == 0.0


def test_ikd_l2_unit_distance():
    teacher = np.array([[1.0, 0.0]])
    student = np.array([[0.0, 0.0]])
    proj = ProjectionParams(np.eye(2), np.zeros((1, 2)))
    assert value(ikd_l2_loss(teacher, Tape().constant(student), proj)) == 1.0


def test_ikd_l2_dimension_checks():
    proj = ProjectionParams(np.zeros((3, 2)), np.zeros((1, 3)))
    with pytest.raises(DimensionError):
        ikd_l2_loss(np.zeros((4, 3)), Tape().constant(np.zeros((4, 3))), proj)
    with pytest.raises(DimensionError):
        ikd_l2_loss(np.zeros((4, 2)), Tape().constant(np.zeros((4, 2))), proj)


@pytest.mark.parametrize("seed", range(20))
def test_ikd_l2_gradient_check_student_and_projection(seed):
    rng = np.random.default_rng(seed)
    teacher = rng.normal(size=(4, 3))
    student = rng.normal(size=(4, 2))
    weight = rng.normal(size=(3, 2))
    bias = rng.normal(size=(1, 3))

    def build(leaves):
        s, w, b = leaves
        return ikd_l2_loss(teacher, s, ProjectionParams(w, b))

    assert finite_difference_check(build, [student, weight, bias]) < 1e-4


# ---------------------------------------------------------------------------
# cross-entropy


def test_cross_entropy_peaked_logits():
    logits = np.array([[100.0, 0.0], [0.0, 100.0]])
    loss = cross_entropy_loss(Tape().constant(logits), [0, 1])
    assert value(loss) < 1e-10


def test_cross_entropy_uniform_is_log_c():
    for c in (2, 3, 8, 17):
        logits = np.zeros((5, c))
        loss = cross_entropy_loss(Tape().constant(logits), [0] * 5)
        assert value(loss) == pytest.approx(np.log(c), abs=1e-12)


def test_cross_entropy_label_range_check():
    logits = Tape().constant(np.zeros((2, 3)))
    with pytest.raises(DomainError):
        cross_entropy_loss(logits, [0, 3])


@pytest.mark.parametrize("seed", range(20))
def test_cross_entropy_gradient_check(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(4, 5))
    labels = rng.integers(0, 5, size=4)
    err = finite_difference_check(
        lambda l: cross_entropy_loss(l[0], labels), [logits])
    assert err < 1e-4
