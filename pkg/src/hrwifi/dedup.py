"""Sequence numbering and duplicate elimination.

Receive-side elimination keeps a sliding history of the last ``H`` sequence
numbers as a bitmap anchored at the newest number seen. Bit ``i`` set means
``latest - i`` was already passed. Comparison uses 16-bit serial arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

SEQ_MOD = 1 << 16
HALF = 1 << 15
DEFAULT_WINDOW = 64
DEFAULT_STALE_TIMEOUT = 2_000_000_000  # 2 s in ns


class Direction(Enum):
    UPLINK = "up"
    DOWNLINK = "down"


class Verdict(Enum):
    PASS = "pass"
    DISCARD = "discard"


@dataclass(frozen=True)
class StreamKey:
    origin: str
    direction: Direction


def seq_distance(a: int, b: int) -> int:
    """Forward distance from ``b`` to ``a`` modulo 2^16."""
    return (a - b) % SEQ_MOD


def is_newer(a: int, b: int) -> bool:
    return 0 < seq_distance(a, b) < HALF


class SeqCounter:
    """Per-origin transmit sequence counters starting at 0."""

    def __init__(self) -> None:
        self._next: dict[str, int] = {}

    def next_seq(self, origin: str) -> int:
        value = self._next.get(origin, 0)
        self._next[origin] = (value + 1) % SEQ_MOD
        return value

    def peek(self, origin: str) -> int:
        return self._next.get(origin, 0)

    def set(self, origin: str, value: int) -> None:
        self._next[origin] = value % SEQ_MOD


@dataclass
class DedupState:
    window: int = DEFAULT_WINDOW
    latest: int = 0
    valid: bool = False
    history: int = 0
    last_activity: int = 0
    passed: int = 0
    discarded: int = 0
    out_of_window: int = 0
    resets: int = 0
    _mask: int = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("history window must hold at least one sequence number")
        self._mask = (1 << self.window) - 1

    @property
    def total(self) -> int:
        return self.passed + self.discarded + self.out_of_window

    def seen(self) -> set[int]:
        """Sequence numbers currently remembered by the window."""
        if not self.valid:
            return set()
        return {(self.latest - i) % SEQ_MOD for i in range(self.window) if self.history >> i & 1}

    def accept(self, seq: int, now: int) -> Verdict:
        seq %= SEQ_MOD
        self.last_activity = now
        if not self.valid:
            self.valid = True
            self.latest = seq
            self.history = 1
            self.passed += 1
            return Verdict.PASS
        ahead = (seq - self.latest) % SEQ_MOD
        if ahead == 0:
            self.discarded += 1
            return Verdict.DISCARD
        if ahead < HALF:
            self.history = ((self.history << ahead) | 1) & self._mask if ahead < self.window else 1
            self.latest = seq
            self.passed += 1
            return Verdict.PASS
        behind = SEQ_MOD - ahead
        if behind >= self.window:
            # Too old to tell a late copy from a replay: drop, like a rogue frame.
            self.out_of_window += 1
            return Verdict.DISCARD
        bit = 1 << behind
        if self.history & bit:
            self.discarded += 1
            return Verdict.DISCARD
        self.history |= bit
        self.passed += 1
        return Verdict.PASS

    def merge(self, other: "DedupState") -> None:
        """Absorb what ``other`` has seen, e.g. the window of a previous eliminator.

        The result remembers the union of both windows, anchored at the newer
        of the two ``latest`` values and truncated to this window's size.
        """
        if not other.valid:
            return
        self.last_activity = max(self.last_activity, other.last_activity)
        if not self.valid:
            self.valid = True
            self.latest = other.latest
            self.history = other.history & self._mask
            return
        ahead = (other.latest - self.latest) % SEQ_MOD
        if ahead < HALF:
            mine = (self.history << ahead) & self._mask if ahead < self.window else 0
            self.history = mine | (other.history & self._mask)
            self.latest = other.latest
        else:
            behind = SEQ_MOD - ahead
            if behind < self.window:
                self.history |= (other.history << behind) & self._mask

    def reset_if_stale(self, now: int, timeout: int = DEFAULT_STALE_TIMEOUT) -> bool:
        if not self.valid or now - self.last_activity <= timeout:
            return False
        self.valid = False
        self.history = 0
        self.latest = 0
        self.resets += 1
        return True

    def counters(self) -> dict[str, int]:
        return {"passed": self.passed, "discarded": self.discarded,
                "out_of_window": self.out_of_window, "resets": self.resets}


def accept(state: DedupState, seq: int, now: int) -> Verdict:
    return state.accept(seq, now)


def reset_if_stale(state: DedupState, now: int, timeout: int = DEFAULT_STALE_TIMEOUT) -> bool:
    return state.reset_if_stale(now, timeout)


class Eliminator:
    """The elimination states one node owns, one per stream key."""

    def __init__(self, window: int = DEFAULT_WINDOW, stale_timeout: int = DEFAULT_STALE_TIMEOUT):
        self.window = window
        self.stale_timeout = stale_timeout
        self.states: dict[StreamKey, DedupState] = {}

    def state(self, key: StreamKey) -> DedupState:
        st = self.states.get(key)
        if st is None:
            st = self.states[key] = DedupState(self.window)
        return st

    def accept(self, key: StreamKey, seq: int, now: int) -> Verdict:
        st = self.state(key)
        st.reset_if_stale(now, self.stale_timeout)
        return st.accept(seq, now)

    def counters(self) -> dict[str, dict[str, int]]:
        return {f"{k.origin}/{k.direction.value}": st.counters()
                for k, st in sorted(self.states.items(), key=lambda kv: (kv[0].origin, kv[0].direction.value))}
