"""Event-stream I/O and event-to-frame binning.

The native "EVS1" binary layout (little-endian throughout):

    magic   4 bytes  b"EVS1"
    version u16
    width   u16
    height  u16
    label   i32      (-1 when absent)
    count   u64
    records count x (t u32, x u16, y u16, p u8, pad u8)

A CSV alternative (header ``t,x,y,p``) is accepted by read_events based on
the file extension.
"""

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError

EVS_MAGIC = b"EVS1"
EVS_VERSION = 1
_HEADER = struct.Struct("<4sHHHiQ")
EVENT_DTYPE = np.dtype([("t", "<u4"), ("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("pad", "u1")])


@dataclass
class EventStream:
    width: int
    height: int
    events: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=EVENT_DTYPE))
    label: int | None = None

    def __post_init__(self):
        if self.events.dtype != EVENT_DTYPE:
            ev = np.zeros(len(self.events), dtype=EVENT_DTYPE)
            arr = np.asarray(self.events)
            ev["t"], ev["x"], ev["y"], ev["p"] = (
                arr[:, 0],
                arr[:, 1],
                arr[:, 2],
                arr[:, 3],
            )
            self.events = ev
        self.validate()

    def validate(self):
        ev = self.events
        if len(ev) == 0:
            return
        if np.any(np.diff(ev["t"].astype(np.int64)) < 0):
            raise FormatError("timestamps are not non-decreasing")
        if ev["x"].max(initial=0) >= self.width or ev["y"].max(initial=0) >= self.height:
            raise FormatError(
                f"event coordinates exceed sensor geometry {self.width}x{self.height}"
            )

    def __len__(self):
        return len(self.events)


def write_events(path, stream):
    ev = stream.events
    label = -1 if stream.label is None else int(stream.label)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EVS_MAGIC, EVS_VERSION, stream.width, stream.height, label, len(ev)))
        fh.write(ev.tobytes())


def _read_evs(buf):
    if len(buf) < _HEADER.size:
        raise FormatError("file shorter than the EVS1 header", len(buf))
    magic, version, width, height, label, count = _HEADER.unpack_from(buf, 0)
    if magic != EVS_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != EVS_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    body = buf[_HEADER.size :]
    need = count * EVENT_DTYPE.itemsize
    if len(body) < need:
        raise FormatError(
            f"truncated records: expected {count} events", _HEADER.size + len(body)
        )
    events = np.frombuffer(body[:need], dtype=EVENT_DTYPE).copy()
    stream = EventStream.__new__(EventStream)
    stream.width = width
    stream.height = height
    stream.events = events
    stream.label = None if label < 0 else label
    _validate_read(stream, buf)
    return stream


def _validate_read(stream, buf):
    ev = stream.events
    if len(ev):
        bad_x = np.nonzero(ev["x"] >= stream.width)[0]
        bad_y = np.nonzero(ev["y"] >= stream.height)[0]
        bad = min(bad_x[0] if len(bad_x) else len(ev), bad_y[0] if len(bad_y) else len(ev))
        if bad < len(ev):
            raise FormatError(
                "event coordinate out of range",
                _HEADER.size + bad * EVENT_DTYPE.itemsize,
            )
        dec = np.nonzero(np.diff(ev["t"].astype(np.int64)) < 0)[0]
        if len(dec):
            raise FormatError(
                "timestamps decrease",
                _HEADER.size + int(dec[0] + 1) * EVENT_DTYPE.itemsize,
            )


def _read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "t,x,y,p":
            raise FormatError(f"CSV header must be 't,x,y,p', got {header!r}", 0)
        try:
            rows = np.loadtxt(fh, delimiter=",", dtype=np.int64, ndmin=2)
        except ValueError as e:
            raise FormatError(f"malformed CSV events: {e}") from None
    if rows.size == 0:
        rows = np.empty((0, 4), dtype=np.int64)
    width = int(rows[:, 1].max()) + 1 if len(rows) else 1
    height = int(rows[:, 2].max()) + 1 if len(rows) else 1
    return EventStream(width=width, height=height, events=rows)


def read_events(path):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _read_csv(path)
    return _read_evs(path.read_bytes())


def bin_to_frames(stream, num_steps, height, width, accumulate="count"):
    """Bin events into a (T, 2, H, W) frame tensor.

    The observed time window is split into T equal bins with the final bin
    right-closed; spatial downscale maps coordinates by the integer factor
    (block accumulation), which conserves event counts in count mode.
    """
    if num_steps < 1:
        raise ConfigurationError("num_steps must be >= 1")
    if accumulate not in ("count", "binary"):
        raise ConfigurationError(f"unknown accumulate mode {accumulate!r}")
    if stream.width % width or stream.height % height:
        raise ConfigurationError(
            f"target {width}x{height} is not an integer downscale of "
            f"{stream.width}x{stream.height}"
        )
    frames = np.zeros((num_steps, 2, height, width), dtype=np.float32)
    ev = stream.events
    if len(ev) == 0:
        return frames
    t = ev["t"].astype(np.int64)
    span = int(t.max() - t.min())
    if span == 0:
        if num_steps > 1 and len(ev) > 0:
            warnings.warn("fewer than 2 distinct timestamps; all events land in bin 0")
        bins = np.zeros(len(ev), dtype=np.int64)
    else:
        bins = np.minimum(num_steps * (t - t.min()) // span, num_steps - 1)
    xs = ev["x"].astype(np.int64) // (stream.width // width)
    ys = ev["y"].astype(np.int64) // (stream.height // height)
    ps = ev["p"].astype(np.int64)
    np.add.at(frames, (bins, ps, ys, xs), 1.0)
    if accumulate == "binary":
        frames = np.minimum(frames, 1.0)
    return frames


def split(dataset, fractions, seed):
    """Deterministic disjoint split of an indexable dataset."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"fractions must sum to 1, got {fractions}")
    n = len(dataset)
    sizes = [int(round(f * n)) for f in fractions]
    sizes[-1] = n - sum(sizes[:-1])
    if any(s <= 0 for s in sizes):
        raise ConfigurationError(f"split produced an empty part: {sizes}")
    order = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,))).permutation(n)
    parts = []
    start = 0
    for s in sizes:
        idx = order[start : start + s]
        parts.append([dataset[i] for i in idx])
        start += s
    return tuple(parts)
