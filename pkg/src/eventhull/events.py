"""Event stream containers, file I/O, and the event-volume encoding."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParseError
from .geometry import CameraIntrinsics

# Label encoding used in memory and in both file formats.
LABEL_UNKNOWN = -1
LABEL_NON_ACE = 0
LABEL_ACE = 1

_BIN_MAGIC = b"EVAC3D-EVT-v1\x00\x00\x00"
_BIN_RECORD = struct.Struct("<HHqbb")


@dataclass(frozen=True)
class Event:
    """One asynchronous camera event."""

    x: int
    y: int
    t: float  # seconds
    p: int  # polarity, -1 or +1
    label: int = LABEL_UNKNOWN

    def __post_init__(self):
        if self.p not in (-1, 1):
            raise DomainError(f"polarity must be -1 or +1, got {self.p}")
        if self.label not in (LABEL_UNKNOWN, LABEL_NON_ACE, LABEL_ACE):
            raise DomainError(f"bad label {self.label}")


class EventStream:
    """Time-sorted event sequence backed by flat arrays.

    Columns: x, y (int32 pixels), t (float64 seconds), p (int8 polarity),
    label (int8). Immutable after construction.
    """

    def __init__(self, x, y, t, p, label=None, sensor: CameraIntrinsics | None = None):
        self.x = np.asarray(x, dtype=np.int32)
        self.y = np.asarray(y, dtype=np.int32)
        self.t = np.asarray(t, dtype=np.float64)
        self.p = np.asarray(p, dtype=np.int8)
        if label is None:
            label = np.full(self.x.shape, LABEL_UNKNOWN, dtype=np.int8)
        self.label = np.asarray(label, dtype=np.int8)
        n = len(self.x)
        if not (len(self.y) == len(self.t) == len(self.p) == len(self.label) == n):
            raise DomainError("event columns must have equal length")
        if n and np.any(np.diff(self.t) < 0):
            raise DomainError("event timestamps must be non-decreasing")
        if not np.all(np.isin(self.p, (-1, 1))):
            raise DomainError("polarities must be -1 or +1")
        self.sensor = sensor
        if sensor is not None and n:
            if (
                self.x.min() < 0
                or self.x.max() >= sensor.width
                or self.y.min() < 0
                or self.y.max() >= sensor.height
            ):
                raise DomainError("event pixel outside sensor bounds")
        for a in (self.x, self.y, self.t, self.p, self.label):
            a.flags.writeable = False

    @classmethod
    def from_events(cls, events, sensor=None) -> "EventStream":
        events = list(events)
        return cls(
            [e.x for e in events],
            [e.y for e in events],
            [e.t for e in events],
            [e.p for e in events],
            [e.label for e in events],
            sensor=sensor,
        )

    def __len__(self):
        return len(self.x)

    def __getitem__(self, i) -> Event:
        return Event(
            int(self.x[i]), int(self.y[i]), float(self.t[i]),
            int(self.p[i]), int(self.label[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def select(self, mask) -> "EventStream":
        return EventStream(
            self.x[mask], self.y[mask], self.t[mask], self.p[mask],
            self.label[mask], sensor=self.sensor,
        )

    def with_labels(self, labels) -> "EventStream":
        return EventStream(self.x, self.y, self.t, self.p, labels, sensor=self.sensor)

    def t_us(self) -> np.ndarray:
        return np.round(self.t * 1e6).astype(np.int64)


def _validate_against_sensor(stream: EventStream):
    return stream


def write_events(stream: EventStream, path, format: str = "csv"):
    """Write a stream as CSV ('x,y,t_us,p,label') or packed binary."""
    if format == "csv":
        with open(path, "w") as f:
            f.write("x,y,t_us,p,label\n")
            for x, y, tu, p, lb in zip(
                stream.x, stream.y, stream.t_us(), stream.p, stream.label
            ):
                f.write(f"{x},{y},{tu},{p},{lb}\n")
    elif format == "binary":
        with open(path, "wb") as f:
            f.write(_BIN_MAGIC)
            cols = np.zeros(
                len(stream),
                dtype=[("x", "<u2"), ("y", "<u2"), ("t", "<i8"),
                       ("p", "i1"), ("l", "i1")],
            )
            cols["x"] = stream.x
            cols["y"] = stream.y
            cols["t"] = stream.t_us()
            cols["p"] = stream.p
            cols["l"] = stream.label
            f.write(cols.tobytes())
    else:
        raise DomainError(f"unknown event format {format!r}")


def read_events(path, format: str = "csv", sensor: CameraIntrinsics | None = None) -> EventStream:
    """Read an event file; see write_events for the formats."""
    if format == "csv":
        return _read_csv(path, sensor)
    if format == "binary":
        return _read_binary(path, sensor)
    raise DomainError(f"unknown event format {format!r}")


def _read_csv(path, sensor) -> EventStream:
    xs, ys, ts, ps, lbs = [], [], [], [], []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if parts[0] == "x":  # header
                continue
            if len(parts) not in (4, 5):
                raise ParseError(f"expected 4 or 5 fields, got {len(parts)}", lineno)
            try:
                x, y, tu, p = int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3])
                lb = int(parts[4]) if len(parts) == 5 else LABEL_UNKNOWN
            except ValueError:
                raise ParseError(f"non-integer field in {line!r}", lineno) from None
            if p not in (-1, 1):
                raise ParseError(f"bad polarity {p}", lineno)
            xs.append(x)
            ys.append(y)
            ts.append(tu * 1e-6)
            ps.append(p)
            lbs.append(lb)
    return EventStream(xs, ys, ts, ps, lbs, sensor=sensor)


def _read_binary(path, sensor) -> EventStream:
    with open(path, "rb") as f:
        magic = f.read(len(_BIN_MAGIC))
        if magic != _BIN_MAGIC:
            raise ParseError("bad magic header for binary event file")
        raw = f.read()
    cols = np.frombuffer(
        raw,
        dtype=[("x", "<u2"), ("y", "<u2"), ("t", "<i8"), ("p", "i1"), ("l", "i1")],
    )
    return EventStream(
        cols["x"].astype(np.int32),
        cols["y"].astype(np.int32),
        cols["t"] * 1e-6,
        cols["p"],
        cols["l"],
        sensor=sensor,
    )


@dataclass(frozen=True)
class EventVolume:
    """Dense (B_t, H, W) firing-rate histogram over a time window."""

    bins: np.ndarray
    t0: float
    t1: float


def build_event_volume(
    stream: EventStream,
    window: tuple[float, float],
    n_bins: int,
    height: int | None = None,
    width: int | None = None,
) -> EventVolume:
    """Deposit polarities into a (n_bins, H, W) volume.

    Each event spreads its polarity over the two temporal bins bracketing
    its normalized time with triangular weights max(0, 1 - |a|); integer
    pixel coordinates deposit entirely into their own (y, x) cell. Events
    at t1 are included.
    """
    t0, t1 = float(window[0]), float(window[1])
    if t1 <= t0:
        raise DomainError("window must satisfy t1 > t0")
    if n_bins < 1:
        raise DomainError("need at least one temporal bin")
    if height is None or width is None:
        if stream.sensor is None:
            raise DomainError("volume shape unknown: pass height/width or a sensor")
        height, width = stream.sensor.height, stream.sensor.width

    vol = np.zeros((n_bins, height, width), dtype=np.float64)
    inside = (stream.t >= t0) & (stream.t <= t1)
    if not np.any(inside):
        return EventVolume(vol, t0, t1)

    xs = stream.x[inside]
    ys = stream.y[inside]
    ps = stream.p[inside].astype(np.float64)
    tstar = (n_bins - 1) * (stream.t[inside] - t0) / (t1 - t0)

    lo = np.floor(tstar).astype(np.int64)
    for b, w in ((lo, 1.0 - (tstar - lo)), (lo + 1, tstar - lo)):
        ok = (w > 0) & (b >= 0) & (b < n_bins)
        np.add.at(vol, (b[ok], ys[ok], xs[ok]), ps[ok] * w[ok])
    return EventVolume(vol, t0, t1)
