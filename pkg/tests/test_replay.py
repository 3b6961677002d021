import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapex.config import RunConfig
from mapex.errors import EmptyBufferError, FormatError, UnsupportedVersionError
from mapex.replay import ReplayBuffer, Transition, allocate_counts, build_hybrid


def transition(i: float, source: int = 0) -> Transition:
    return Transition(np.full(2, i), np.full(1, -i), np.array([i, 2 * i]), np.full(2, i + 1), False, source)


def filled(n: int, capacity: int | None = None, source: int = 0) -> ReplayBuffer:
    buf = ReplayBuffer(2, 1, 2, capacity or n)
    for i in range(n):
        buf.push(transition(float(i), source))
    return buf


def test_fifo_eviction():
    buf = ReplayBuffer(2, 1, 2, capacity=2)
    for i in (1.0, 2.0, 3.0):
        buf.push(transition(i))
    assert buf.transitions() == [transition(2.0), transition(3.0)]


def test_pushed_transition_is_retrievable():
    buf = ReplayBuffer(2, 1, 2, capacity=5)
    buf.push(transition(4.0))
    assert transition(4.0) in buf.transitions()


def test_default_capacity():
    assert ReplayBuffer(1, 1, 2).capacity == 1_000_000


def test_singleton_sampling():
    buf = filled(1)
    assert buf.sample(4, np.random.default_rng(0)) == [transition(0.0)] * 4


def test_seeded_sampling_is_reproducible():
    buf = filled(20)
    a = buf.sample_batch(8, np.random.default_rng(3))
    b = buf.sample_batch(8, np.random.default_rng(3))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.rewards, b.rewards)


def test_empty_buffer_cannot_be_sampled():
    with pytest.raises(EmptyBufferError):
        ReplayBuffer(2, 1, 2, 4).sample_batch(1, np.random.default_rng(0))


def test_sampling_is_uniform():
    buf = filled(10)
    n = 100_000
    counts = np.zeros(10)
    rng = np.random.default_rng(8)
    for _ in range(10):
        batch = buf.sample_batch(n // 10, rng)
        counts += np.bincount(batch.states[:, 0].astype(int), minlength=10)
    sigma = np.sqrt(n * 0.1 * 0.9)
    assert np.all(np.abs(counts - n * 0.1) <= 3 * sigma)


def test_hybrid_pure_weights():
    bufs = [filled(50, source=0), filled(50, source=0)]
    hyb = build_hybrid(bufs, [1.0, 0.0], 30, np.random.default_rng(0))
    assert len(hyb) == 30 and np.all(hyb.sources[:30] == 0)


@pytest.mark.parametrize("w, expected", [((2**-0.5, 2**-0.5), (50, 50)), ((0.6, 0.8), (43, 57))])
def test_hybrid_split(w, expected):
    assert tuple(allocate_counts(w, 100)) == expected
    bufs = [filled(200), filled(200)]
    hyb = build_hybrid(bufs, w, 100, np.random.default_rng(1))
    assert tuple(np.bincount(hyb.sources[:100], minlength=2)) == expected


def test_default_hybrid_size():
    from mapex.extraction import ExtractionConfig

    assert ExtractionConfig().hybrid_size == 200_000
    assert RunConfig().extraction.hybrid_size <= 200_000


@settings(max_examples=200)
@given(
    w=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6).filter(lambda v: sum(v) > 1e-6),
    h=st.integers(6, 10**6),
)
def test_allocation_sums_and_proportionality(w, h):
    counts = allocate_counts(w, h)
    w = np.asarray(w)
    assert counts.sum() == h
    assert np.all(np.abs(counts - h * w / w.sum()) <= 1.0)


@settings(max_examples=30, deadline=None)
@given(
    sizes=st.lists(st.integers(1, 40), min_size=2, max_size=3),
    seed=st.integers(0, 1000),
    h=st.integers(3, 120),
)
def test_hybrid_rows_come_from_their_source(sizes, seed, h):
    rng = np.random.default_rng(seed)
    bufs = []
    for k, n in enumerate(sizes):
        buf = ReplayBuffer(2, 1, 2, n)
        for i in range(n):
            # encode the buffer index in the state so provenance can be checked
            buf.add([k, i], [0.0], [0.0, 0.0], [k, i + 1], False, source=0)
        bufs.append(buf)
    w = rng.uniform(0.1, 1.0, len(sizes))
    hyb = build_hybrid(bufs, w, h, rng)
    data = hyb.all()
    assert len(data) == h
    assert np.array_equal(data.states[:, 0].astype(int), data.sources)
    assert np.array_equal(np.bincount(data.sources, minlength=len(sizes)), allocate_counts(w, h))


def test_hybrid_without_replacement_when_possible():
    hyb = build_hybrid([filled(100), filled(100)], [1.0, 1.0], 100, np.random.default_rng(2))
    for k in range(2):
        rows = hyb.states[:100][hyb.sources[:100] == k, 0]
        assert len(np.unique(rows)) == len(rows)


def test_hybrid_needs_data():
    with pytest.raises(EmptyBufferError):
        build_hybrid([filled(5), ReplayBuffer(2, 1, 2, 5)], [0.5, 0.5], 10, np.random.default_rng(0))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(0, 30), capacity=st.integers(1, 20), seed=st.integers(0, 1000))
def test_serialization_round_trip(n, capacity, seed, tmp_path_factory):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(3, 2, 2, capacity)
    for _ in range(n):
        buf.add(rng.normal(size=3), rng.normal(size=2), rng.normal(size=2), rng.normal(size=3),
                bool(rng.integers(2)), int(rng.integers(3)))
    path = tmp_path_factory.mktemp("buf") / "b.bin"
    buf.save(path)
    back = ReplayBuffer.load(path)
    assert back.capacity == buf.capacity and back.inserted == buf.inserted
    assert back.transitions() == buf.transitions()


def test_truncated_file():
    data = filled(4).to_bytes()
    with pytest.raises(FormatError):
        ReplayBuffer.from_bytes(data[:-8])
    with pytest.raises(FormatError):
        ReplayBuffer.from_bytes(data[:10])


def test_version_mismatch():
    data = bytearray(filled(4).to_bytes())
    data[4:8] = (2).to_bytes(4, "little")
    with pytest.raises(UnsupportedVersionError):
        ReplayBuffer.from_bytes(bytes(data))
