import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapex.errors import CannotExtractError, DegenerateWeightsError, UnsupportedDimensionError
from mapex.pareto import (
    ParetoArchive,
    dominates,
    entries_csv,
    hypervolume_2d,
    non_dominated,
    read_entries_csv,
    reference_point,
    select_gap,
    sparsity,
    target_weights,
)

coords = st.floats(-100, 100, allow_nan=False)
points2 = st.lists(st.tuples(st.integers(-5, 5).map(float), coords), min_size=0, max_size=40)


def pairwise_front(pts):
    return [i for i, p in enumerate(pts) if not any(dominates(q, p) for q in pts)]


def test_dominance_examples():
    assert dominates((2, 3), (1, 3))
    assert not dominates((2, 1), (1, 2)) and not dominates((1, 2), (2, 1))
    assert not dominates((1, 1), (1, 1))


@given(st.tuples(coords, coords), st.tuples(coords, coords))
def test_dominance_irreflexive_antisymmetric(v, u):
    assert not dominates(v, v)
    assert not (dominates(v, u) and dominates(u, v))


def test_front_examples():
    assert non_dominated([(1, 3), (3, 1), (2, 2)]) == [0, 1, 2]
    assert non_dominated([(1, 1), (2, 2)]) == [1]
    assert non_dominated([]) == []


@settings(max_examples=200)
@given(points2)
def test_front_matches_pairwise_oracle(pts):
    assert non_dominated(np.array(pts).reshape(-1, 2)) == pairwise_front(pts)


@given(st.lists(st.tuples(*(st.integers(0, 4).map(float),) * 3), max_size=30))
def test_front_matches_oracle_in_three_objectives(pts):
    assert non_dominated(np.array(pts).reshape(-1, 3)) == pairwise_front(pts)


def test_hypervolume_examples():
    assert hypervolume_2d([(3, 1), (1, 3)], (0, 0)) == 5.0
    assert hypervolume_2d([(2, 2)], (0, 0)) == 4.0
    assert hypervolume_2d(np.empty((0, 2)), (0, 0)) == 0.0
    # points not beyond the reference contribute nothing
    assert hypervolume_2d([(2, 2), (-1, 9)], (0, 0)) == 4.0


def test_hypervolume_rejects_other_dimensions():
    with pytest.raises(UnsupportedDimensionError):
        hypervolume_2d([(1, 1, 1)], (0, 0, 0))


def grid_area(front, ref, n=400):
    """Midpoint-grid area oracle."""
    front = np.asarray(front)
    hi = front.max(axis=0)
    xs = ref[0] + (np.arange(n) + 0.5) * (hi[0] - ref[0]) / n
    ys = ref[1] + (np.arange(n) + 0.5) * (hi[1] - ref[1]) / n
    gx, gy = np.meshgrid(xs, ys)
    cov = np.zeros_like(gx, dtype=bool)
    for p in front:
        cov |= (gx <= p[0]) & (gy <= p[1])
    return cov.mean() * np.prod(hi - ref)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(0.5, 10), st.floats(0.5, 10)), min_size=1, max_size=15))
def test_hypervolume_matches_sampling_oracle(pts):
    ref = np.zeros(2)
    hv = hypervolume_2d(pts, ref)
    rng = np.random.default_rng(0)
    pts = np.array(pts)
    hi = pts.max(axis=0)
    u = rng.uniform(ref, hi, size=(100_000, 2))
    mc = np.any(np.all(u[:, None, :] <= pts[None, :, :], axis=2), axis=1).mean() * np.prod(hi)
    assert hv == pytest.approx(mc, rel=0.02)
    assert hv == pytest.approx(grid_area(pts, ref), rel=0.02)


@given(
    st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=20),
    st.tuples(st.floats(0, 12), st.floats(0, 12)),
)
def test_hypervolume_is_monotone(pts, extra):
    ref = (0.0, 0.0)
    hv = hypervolume_2d(pts, ref)
    grown = hypervolume_2d(pts + [extra], ref)
    if any(p[0] >= extra[0] and p[1] >= extra[1] for p in pts):
        assert grown == hv
    else:
        assert grown >= hv


def test_sparsity_examples():
    assert sparsity([(0, 0), (3, 4)]) == 5.0
    assert sparsity([(2, 0), (0, 0), (1, 0)]) == 1.0
    assert sparsity([(1, 1)]) == 0.0


def test_reference_point():
    np.testing.assert_allclose(reference_point([(0, 10), (10, -10)]), [-1.0, -12.0])


def test_symmetric_gap():
    archive = ParetoArchive(np.zeros(2))
    archive.add("a", (0, 10))
    archive.add("b", (10, 0))
    parents, w = select_gap(archive, np.random.default_rng(0))
    assert set(parents) == {"a", "b"}
    np.testing.assert_allclose(w, [2**-0.5, 2**-0.5])


def test_gap_roulette_probabilities():
    # collinear staircase with edges of length 3 and 1
    step = np.array([1.0, -1.0]) / np.sqrt(2)
    a = np.array([0.0, 4.0])
    archive = ParetoArchive(np.array([-1.0, -1.0]))
    for pid, p in (("a", a), ("b", a + 3 * step), ("c", a + 4 * step)):
        archive.add(pid, p)
    rng = np.random.default_rng(5)
    n = 100_000
    first = sum(select_gap(archive, rng)[0] == ("a", "b") for _ in range(n))
    sigma = np.sqrt(n * 0.75 * 0.25)
    assert abs(first - 0.75 * n) <= 3 * sigma


def test_clamped_weights():
    np.testing.assert_allclose(target_weights((-2, 4)), [0.0, 1.0])
    with pytest.raises(DegenerateWeightsError):
        target_weights((-1, 0))


def test_gap_relative_to_origin():
    archive = ParetoArchive(np.array([-5.0, -5.0]))
    archive.add("a", (-1, -4))
    archive.add("b", (-4, -1))
    with pytest.raises(DegenerateWeightsError):
        select_gap(archive, np.random.default_rng(0))
    _, w = select_gap(archive, np.random.default_rng(0), origin=archive.reference)
    np.testing.assert_allclose(w, [2**-0.5, 2**-0.5])


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=2, max_size=20), st.integers(0, 100))
def test_gap_endpoints_are_adjacent_and_weights_unit(pts, seed):
    archive = ParetoArchive(np.array([-1.0, -1.0]))
    for i, p in enumerate(pts):
        archive.add(f"p{i}", p)
    front = [e.policy_id for e in archive.front()]
    try:
        (a, b), w = select_gap(archive, np.random.default_rng(seed))
    except CannotExtractError:
        assert len(archive.front_points()) < 2 or np.ptp(archive.front_points(), axis=0).sum() == 0
        return
    assert front.index(b) == front.index(a) + 1
    assert np.linalg.norm(w) == pytest.approx(1.0)


def test_gap_needs_two_points_and_two_objectives():
    archive = ParetoArchive(np.zeros(2))
    archive.add("a", (1, 1))
    archive.add("b", (0, 0))
    with pytest.raises(CannotExtractError):
        select_gap(archive, np.random.default_rng(0))
    three = ParetoArchive(np.zeros(3))
    three.add("a", (1, 0, 0))
    three.add("b", (0, 1, 0))
    with pytest.raises(UnsupportedDimensionError):
        select_gap(three, np.random.default_rng(0))


def test_archive_and_csv_round_trip():
    archive = ParetoArchive(np.zeros(2))
    archive.add("x", (1.0, 0.1))
    archive.add("y", (0.2, 3.0))
    archive.add("z", (0.1, 0.05))
    with pytest.raises(ValueError):
        archive.add("x", (5.0, 5.0))
    text = archive.front_csv()
    assert text.splitlines()[0] == "policy_id,J1,J2"
    assert [e.policy_id for e in read_entries_csv(text)] == ["y", "x"]
    back = read_entries_csv(entries_csv(archive.entries, 2))
    assert all(np.array_equal(a.returns, b.returns) for a, b in zip(back, archive.entries))
