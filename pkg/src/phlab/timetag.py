"""Time-tag files, window postselection and histograms.

Binary layout: the 8-byte magic ``PHTT0001`` followed by 16-byte
little-endian records

    offset  size  field
    0       4     cycle          uint32
    4       2     sequence       uint16, < 990
    6       1     channel        uint8, < 6
    7       1     reserved       uint8, must be 0
    8       8     timestamp_ns   uint64, < 1000

Files ending in ``.csv`` hold the same fields as text with the header
``cycle,sequence,channel,timestamp_ns``.
"""

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .channels import N_CHANNELS, S_CHANNELS, Channel, parse_channel
from .correlation import CountAggregate

MAGIC = b"PHTT0001"
SLOTS_PER_CYCLE = 990
SLOT_NS = 1000
RECORD_SIZE = 16
RECORD_DTYPE = np.dtype([
    ("cycle", "<u4"),
    ("sequence", "<u2"),
    ("channel", "u1"),
    ("reserved", "u1"),
    ("timestamp_ns", "<u8"),
])
assert RECORD_DTYPE.itemsize == RECORD_SIZE

CSV_FIELDS = ["cycle", "sequence", "channel", "timestamp_ns"]


class TimeTagError(ValueError):
    pass


class BadMagic(TimeTagError):
    pass


class TruncatedRecord(TimeTagError):
    def __init__(self, offset, message=None):
        self.offset = offset
        super().__init__(message or f"truncated record at byte offset {offset}")


class InvariantViolation(TimeTagError):
    def __init__(self, index, message):
        self.index = index
        super().__init__(f"record {index}: {message}")


class UnsortedStream(TimeTagError):
    pass


class BadBinWidth(ValueError):
    pass


class TimeTagRecord(NamedTuple):
    cycle: int
    sequence: int
    channel: Channel
    timestamp_ns: int


def records_to_array(records):
    arr = np.zeros(len(records), dtype=RECORD_DTYPE)
    for i, r in enumerate(records):
        if not (0 <= r[0] < 2 ** 32 and 0 <= r[1] < 2 ** 16 and 0 <= int(r[2]) < 256
                and 0 <= r[3] < 2 ** 64):
            raise InvariantViolation(i, f"field out of storage range: {tuple(r)}")
        arr[i] = (r[0], r[1], int(r[2]), 0, r[3])
    return arr


def array_to_records(arr):
    return [TimeTagRecord(int(c), int(s), Channel(int(ch)), int(t))
            for c, s, ch, t in zip(arr["cycle"], arr["sequence"], arr["channel"], arr["timestamp_ns"])]


def validate(arr, start_index=0):
    """Raise InvariantViolation naming the first bad record."""
    bad = ((arr["sequence"] >= SLOTS_PER_CYCLE) | (arr["channel"] >= N_CHANNELS)
           | (arr["reserved"] != 0) | (arr["timestamp_ns"] >= SLOT_NS))
    if bad.any():
        i = int(np.argmax(bad))
        r = arr[i]
        raise InvariantViolation(
            start_index + i,
            f"cycle={r['cycle']} sequence={r['sequence']} channel={r['channel']} "
            f"reserved={r['reserved']} timestamp_ns={r['timestamp_ns']}")


def _as_array(records):
    if isinstance(records, np.ndarray) and records.dtype == RECORD_DTYPE:
        return records
    return records_to_array(list(records))


def encode_stream(records):
    arr = _as_array(records)
    validate(arr)
    return MAGIC + arr.tobytes()


def write_stream(path, chunks):
    """Write an iterable of record arrays to ``path`` (binary or CSV by extension)."""
    path = Path(path)
    index = 0
    if path.suffix.lower() == ".csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_FIELDS)
            for chunk in chunks:
                validate(chunk, index)
                index += len(chunk)
                for c, s, ch, t in zip(chunk["cycle"], chunk["sequence"], chunk["channel"],
                                       chunk["timestamp_ns"]):
                    w.writerow([int(c), int(s), int(ch), int(t)])
        return
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for chunk in chunks:
            validate(chunk, index)
            index += len(chunk)
            fh.write(np.ascontiguousarray(chunk).tobytes())


def _read_exact(fh, n):
    buf = bytearray()
    while len(buf) < n:
        part = fh.read(n - len(buf))
        if not part:
            break
        buf += part
    return bytes(buf)


def iter_chunks(fh, chunk_records=1 << 16):
    """Stream validated record arrays from a binary file object.

    Memory is bounded by ``chunk_records``.  Every complete record before a
    defect is yielded; the defect then raises.
    """
    head = _read_exact(fh, len(MAGIC))
    if head != MAGIC:
        if len(head) < len(MAGIC) and MAGIC.startswith(head):
            raise TruncatedRecord(0, "file ends inside the magic header")
        raise BadMagic(f"expected magic {MAGIC!r}, found {head!r}")
    offset = len(MAGIC)
    index = 0
    while True:
        data = _read_exact(fh, chunk_records * RECORD_SIZE)
        if not data:
            return
        whole = len(data) // RECORD_SIZE * RECORD_SIZE
        if whole:
            arr = np.frombuffer(data[:whole], dtype=RECORD_DTYPE)
            validate(arr, index)
            yield arr
            index += len(arr)
        if whole != len(data):
            raise TruncatedRecord(offset + whole)
        offset += whole


def iter_records(fh, chunk_records=1 << 16):
    for arr in iter_chunks(fh, chunk_records):
        yield from array_to_records(arr)


def parse_stream(data):
    return [r for r in iter_records(io.BytesIO(data))]


def iter_csv_chunks(fh, chunk_records=1 << 16):
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != CSV_FIELDS:
        raise BadMagic(f"CSV time-tag file must start with header {','.join(CSV_FIELDS)}")
    rows = []
    index = 0
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise TruncatedRecord(lineno, f"line {lineno}: expected 4 fields, got {len(row)}")
        try:
            rows.append((int(row[0]), int(row[1]), parse_channel(row[2]), int(row[3])))
        except ValueError as exc:
            raise InvariantViolation(index + len(rows), f"line {lineno}: {exc}") from None
        if len(rows) == chunk_records:
            arr = records_to_array(rows)
            validate(arr, index)
            yield arr
            index += len(rows)
            rows = []
    if rows:
        arr = records_to_array(rows)
        validate(arr, index)
        yield arr


def open_chunks(path, chunk_records=1 << 16):
    """Iterate record arrays from a binary or CSV file, chosen by extension."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, newline="") as fh:
            yield from iter_csv_chunks(fh, chunk_records)
    else:
        with open(path, "rb") as fh:
            yield from iter_chunks(fh, chunk_records)


@dataclass(frozen=True)
class WindowConfig:
    """Half-open acceptance windows [offset, offset + width) in ns.

    The S window applies to Ds1/Ds2, the AS window to Dv1/Dv2/Dt1/Dt2.
    """

    s_window: tuple = (500, 250)
    as_window: tuple = (300, 100)
    histogram_bin_ns: int = 10

    def __post_init__(self):
        for name in ("s_window", "as_window"):
            off, width = getattr(self, name)
            if width <= 0:
                raise ValueError(f"{name} width must be positive")
            if off < 0 or off + width > SLOT_NS:
                raise ValueError(f"{name} must lie within [0, {SLOT_NS}) ns")
            object.__setattr__(self, name, (int(off), int(width)))

    def window_for(self, channel):
        return self.s_window if Channel(channel) in S_CHANNELS else self.as_window

    def bounds_per_channel(self):
        lo = np.empty(N_CHANNELS, dtype=np.int64)
        hi = np.empty(N_CHANNELS, dtype=np.int64)
        for ch in Channel:
            off, width = self.window_for(ch)
            lo[ch], hi[ch] = off, off + width
        return lo, hi

    def contains(self, channel, t):
        off, width = self.window_for(channel)
        return off <= t < off + width


def slot_index(arr):
    return arr["cycle"].astype(np.int64) * SLOTS_PER_CYCLE + arr["sequence"].astype(np.int64)


def window_select(records, cfg):
    """Per-slot detection flags from in-window records.

    Returns ``(slots, flags)``: the sorted global slot indices holding at
    least one in-window record and a (len(slots), 6) boolean array.
    Out-of-window records are dropped.
    """
    arr = _as_array(records)
    lo, hi = cfg.bounds_per_channel()
    ch = arr["channel"].astype(np.int64)
    t = arr["timestamp_ns"].astype(np.int64)
    keep = (t >= lo[ch]) & (t < hi[ch])
    codes = np.unique(slot_index(arr)[keep] * N_CHANNELS + ch[keep])
    slots, inverse = np.unique(codes // N_CHANNELS, return_inverse=True)
    flags = np.zeros((len(slots), N_CHANNELS), dtype=bool)
    flags[inverse, codes % N_CHANNELS] = True
    return slots, flags


def accumulate(flags, trials):
    """CountAggregate of the standard coincidence events."""
    return CountAggregate.from_flags(flags, trials)


class SlotFlagger:
    """Streaming window selection over slot-ordered record chunks.

    A slot can straddle a chunk boundary, so the last slot of each chunk is
    held back until a later slot appears.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self._held_slot = None
        self._held_flags = None
        self._last_slot = -1
        self.max_cycle = -1

    def feed(self, arr):
        if len(arr) == 0:
            return np.zeros((0, N_CHANNELS), dtype=bool)
        self.max_cycle = max(self.max_cycle, int(arr["cycle"].max()))
        si = slot_index(arr)
        if si.min() < self._last_slot:
            raise UnsortedStream("records are not ordered by (cycle, sequence)")
        last = int(si.max())
        self._last_slot = last
        slots, flags = window_select(arr, self.cfg)
        if self._held_slot is not None:
            if len(slots) and slots[0] == self._held_slot:
                flags[0] |= self._held_flags
            else:
                slots = np.concatenate([[self._held_slot], slots])
                flags = np.vstack([self._held_flags[None, :], flags])
        self._held_slot = None
        if len(slots) and slots[-1] == last:
            self._held_slot, self._held_flags = int(slots[-1]), flags[-1].copy()
            slots, flags = slots[:-1], flags[:-1]
        return flags

    def finish(self):
        if self._held_slot is None:
            return np.zeros((0, N_CHANNELS), dtype=bool)
        out = self._held_flags[None, :]
        self._held_slot = None
        return out


@dataclass
class Histogram:
    """Occupancy per channel over the 1 us slot."""

    bin_ns: int = 10
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.bin_ns <= 0 or SLOT_NS % self.bin_ns:
            raise BadBinWidth(f"bin width {self.bin_ns} ns does not divide {SLOT_NS} ns")
        if self.counts is None:
            self.counts = np.zeros((N_CHANNELS, SLOT_NS // self.bin_ns), dtype=np.int64)

    @property
    def bin_starts(self):
        return np.arange(0, SLOT_NS, self.bin_ns)

    def add(self, arr):
        ch = arr["channel"].astype(np.int64)
        b = arr["timestamp_ns"].astype(np.int64) // self.bin_ns
        nb = self.counts.shape[1]
        self.counts += np.bincount(ch * nb + b, minlength=N_CHANNELS * nb).reshape(N_CHANNELS, nb)
        return self

    def __add__(self, other):
        if self.bin_ns != other.bin_ns:
            raise BadBinWidth("cannot merge histograms with different bin widths")
        return Histogram(self.bin_ns, self.counts + other.counts)

    def to_csv(self, header_comment=None):
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_start_ns", "channel", "count"])
        for ch in Channel:
            for start, n in zip(self.bin_starts, self.counts[ch]):
                w.writerow([int(start), ch.name, int(n)])
        return buf.getvalue()


def histogram(records, cfg):
    return Histogram(cfg.histogram_bin_ns).add(_as_array(records))


def analyze_files(paths, cfg, trials=None, chunk_records=1 << 16):
    """Stream time-tag files into a CountAggregate and a Histogram.

    Each file is analyzed independently and the results merged.  Without
    ``trials`` each file contributes whole cycles up to its highest cycle
    index.  A parse error gets the offending path as ``exc.path``.
    """
    hist = Histogram(cfg.histogram_bin_ns)
    aggs = []
    for path in paths:
        flagger = SlotFlagger(cfg)
        total_flags = []
        try:
            for arr in open_chunks(path, chunk_records):
                hist.add(arr)
                total_flags.append(flagger.feed(arr))
        except TimeTagError as exc:
            exc.path = str(path)
            raise
        total_flags.append(flagger.finish())
        flags = np.vstack(total_flags)
        file_trials = max((flagger.max_cycle + 1) * SLOTS_PER_CYCLE, len(flags))
        aggs.append(CountAggregate.from_flags(flags, file_trials))
    merged = CountAggregate.merge(*aggs)
    if not merged.counts:
        merged = CountAggregate.from_flags(np.zeros((0, N_CHANNELS), bool), 0)
    if trials is not None:
        merged = CountAggregate(trials, merged.counts)
    return merged, hist
