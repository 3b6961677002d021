"""Vector-reward replay buffers, hybrid-buffer assembly and the buffer file format.

Buffer file layout (all little-endian)::

    offset  size  field
    0       4     magic b"MPXR"
    4       4     uint32 format version (1)
    8       8     uint64 capacity
    16      8     uint64 size (stored transitions)
    24      8     uint64 insertion counter
    32      4     uint32 state_dim
    36      4     uint32 action_dim
    40      4     uint32 n_objectives
    44      ...   float64 arrays, each ``size`` rows, in storage order:
                  states, actions, rewards, next_states, terminals, sources

Sources are the 0-based index of the specialist buffer a transition came from.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, EmptyBufferError, FormatError, UnsupportedVersionError

DEFAULT_CAPACITY = 1_000_000

_MAGIC = b"MPXR"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQQIII")


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    terminal: bool
    source: int = 0

    def __eq__(self, other):
        if not isinstance(other, Transition):
            return NotImplemented
        return (
            np.array_equal(self.state, other.state)
            and np.array_equal(self.action, other.action)
            and np.array_equal(self.reward, other.reward)
            and np.array_equal(self.next_state, other.next_state)
            and bool(self.terminal) == bool(other.terminal)
            and int(self.source) == int(other.source)
        )


@dataclass
class Batch:
    """Column-wise minibatch; row ``i`` of every array is one transition."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    sources: np.ndarray

    def __len__(self) -> int:
        return len(self.states)

    def transitions(self) -> list[Transition]:
        return [
            Transition(
                self.states[i],
                self.actions[i],
                self.rewards[i],
                self.next_states[i],
                bool(self.terminals[i]),
                int(self.sources[i]),
            )
            for i in range(len(self))
        ]


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions."""

    def __init__(self, state_dim: int, action_dim: int, n_objectives: int, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.n_objectives = int(n_objectives)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros((capacity, n_objectives))
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity)
        self.sources = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self.inserted = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state, action, reward, next_state, terminal: bool, source: int = 0) -> None:
        state = np.asarray(state, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        reward = np.asarray(reward, dtype=np.float64)
        next_state = np.asarray(next_state, dtype=np.float64)
        if (
            state.shape != (self.state_dim,)
            or next_state.shape != (self.state_dim,)
            or action.shape != (self.action_dim,)
            or reward.shape != (self.n_objectives,)
        ):
            raise DimensionError(
                "transition dimensions do not match buffer "
                f"(state {self.state_dim}, action {self.action_dim}, objectives {self.n_objectives})"
            )
        i = self.inserted % self.capacity
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminals[i] = float(terminal)
        self.sources[i] = source
        self.inserted += 1
        self.size = min(self.size + 1, self.capacity)

    def push(self, t: Transition) -> None:
        self.add(t.state, t.action, t.reward, t.next_state, t.terminal, t.source)

    def _ordered_indices(self) -> np.ndarray:
        """Storage indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        start = self.inserted % self.capacity
        return (np.arange(self.size) + start) % self.capacity

    def gather(self, idx) -> Batch:
        idx = np.asarray(idx, dtype=np.int64)
        return Batch(
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.terminals[idx],
            self.sources[idx],
        )

    def all(self) -> Batch:
        return self.gather(self._ordered_indices())

    def transitions(self) -> list[Transition]:
        return self.all().transitions()

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform sample with replacement."""
        if self.size == 0:
            raise EmptyBufferError("cannot sample from an empty buffer")
        if batch_size < 1:
            raise ValueError("batch size must be positive")
        return self.gather(rng.integers(0, self.size, size=batch_size))

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        return self.sample_batch(batch_size, rng).transitions()

    # serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            _MAGIC,
            _VERSION,
            self.capacity,
            self.size,
            self.inserted,
            self.state_dim,
            self.action_dim,
            self.n_objectives,
        )
        n = self.size
        parts = [
            self.states[:n],
            self.actions[:n],
            self.rewards[:n],
            self.next_states[:n],
            self.terminals[:n],
            self.sources[:n].astype(np.float64),
        ]
        return header + b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ReplayBuffer":
        if len(data) < _HEADER.size:
            raise FormatError("truncated buffer header")
        magic, version, capacity, size, inserted, sd, ad, no = _HEADER.unpack_from(data, 0)
        if magic != _MAGIC:
            raise FormatError("not a replay buffer file")
        if version != _VERSION:
            raise UnsupportedVersionError(f"unsupported buffer file version {version}")
        if size > capacity:
            raise FormatError("buffer header reports size larger than capacity")
        row = 2 * sd + ad + no + 2
        expected = _HEADER.size + 8 * size * row
        if len(data) != expected:
            raise FormatError(f"buffer file has {len(data)} bytes, expected {expected}")
        buf = cls(sd, ad, no, capacity)
        flat = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
        pos = 0
        for name, width in (
            ("states", sd),
            ("actions", ad),
            ("rewards", no),
            ("next_states", sd),
        ):
            getattr(buf, name)[:size] = flat[pos : pos + size * width].reshape(size, width)
            pos += size * width
        buf.terminals[:size] = flat[pos : pos + size]
        pos += size
        buf.sources[:size] = flat[pos : pos + size].astype(np.int64)
        buf.size = size
        buf.inserted = inserted
        return buf

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        return cls.from_bytes(Path(path).read_bytes())


def allocate_counts(weights, total: int) -> np.ndarray:
    """Integer counts proportional to ``weights`` summing to ``total`` (largest remainder)."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ValueError(f"weights must be finite, non-negative and not all zero, got {w}")
    exact = total * w / w.sum()
    counts = np.floor(exact).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort keeps ties in buffer order
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def build_hybrid(
    buffers: Sequence[ReplayBuffer],
    weights,
    size: int,
    rng: np.random.Generator,
) -> ReplayBuffer:
    """Fixed dataset drawn from each buffer in proportion to ``weights``.

    Within a source buffer, sampling is without replacement when the buffer
    holds enough transitions, with replacement otherwise. Transitions keep
    the index of the buffer they came from.
    """
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != len(buffers):
        raise DimensionError(f"{len(buffers)} buffers but {len(w)} weights")
    if size < len(buffers):
        raise ValueError("hybrid size must be at least the number of buffers")
    counts = allocate_counts(w, size)
    first = buffers[0]
    hybrid = ReplayBuffer(first.state_dim, first.action_dim, first.n_objectives, capacity=size)
    pos = 0
    for k, (buf, count) in enumerate(zip(buffers, counts)):
        if count == 0:
            continue
        if len(buf) == 0:
            raise EmptyBufferError(f"buffer {k} is empty but {count} transitions are required from it")
        if count <= len(buf):
            idx = rng.choice(len(buf), size=count, replace=False)
        else:
            idx = rng.integers(0, len(buf), size=count)
        batch = buf.gather(idx)
        sl = slice(pos, pos + count)
        hybrid.states[sl] = batch.states
        hybrid.actions[sl] = batch.actions
        hybrid.rewards[sl] = batch.rewards
        hybrid.next_states[sl] = batch.next_states
        hybrid.terminals[sl] = batch.terminals
        hybrid.sources[sl] = k
        pos += count
    hybrid.size = hybrid.inserted = size
    return hybrid
