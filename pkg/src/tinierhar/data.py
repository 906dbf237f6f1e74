"""Sensor ingestion, sliding windows, normalisation, splits and synthetic data."""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
import warnings
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, DataError, IntegrityError, ParseError, SchemaError, VersionError

logger = logging.getLogger(__name__)

WINDOW_SECONDS = 4.0
OVERLAP_SECONDS = 2.0
STD_FLOOR = 1e-8


# catalog ----------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetInfo:
    name: str
    sensors: str
    subjects: int
    classes: int
    channels: int
    frequency: float

    @property
    def window(self) -> int:
        return window_length(self.frequency)

    @property
    def input_shape(self) -> Tuple[int, int]:
        return self.channels, self.window


CATALOG: Dict[str, DatasetInfo] = {
    d.name: d
    for d in (
        DatasetInfo("DG", "3xAcc", 10, 9, 9, 64),
        DatasetInfo("USCHAD", "1xAcc/Gyro", 7, 12, 6, 100),
        DatasetInfo("SKODAR", "10xAcc", 1, 10, 30, 33),
        DatasetInfo("PAMAP2", "2xAcc/Gyro/Mag", 9, 12, 18, 33),
        DatasetInfo("DSADS", "5xAcc/Gyro/Mag", 8, 19, 45, 25),
        DatasetInfo("HAPT", "2xAcc/Gyro", 10, 12, 6, 50),
        DatasetInfo("RW", "7xAcc", 15, 8, 21, 50),
        DatasetInfo("WISDM", "1xACC", 36, 6, 3, 20),
        DatasetInfo("OPPO", "7xAcc/Gyro/Mag, 2xMag, 2xQuanternion", 4, 18, 77, 30),
        DatasetInfo("RECGYM", "1xAcc/Gyro, 1xCapative", 10, 7, 12, 20),
        DatasetInfo("MOTIONSENSE", "1xAcc/Gyro", 24, 12, 6, 50),
        DatasetInfo("MHEALTH", "2xAcc/Gyro/Mag, 1xACC, 2xECG", 10, 12, 23, 50),
        DatasetInfo("SHO", "5xAcc/Gyro/Mag, 5xLACC", 10, 7, 60, 50),
        DatasetInfo("UCI", "1xAcc/Gyro/LACC", 30, 6, 9, 50),
    )
}


def lookup_dataset(name: str) -> DatasetInfo:
    key = name.upper().replace("-", "").replace("_", "")
    if key not in CATALOG:
        raise ConfigurationError(f"unknown dataset {name!r}; catalog: {', '.join(CATALOG)}")
    return CATALOG[key]


def window_length(frequency: float, seconds: float = WINDOW_SECONDS) -> int:
    """Samples per window, rounding half up (33 Hz x 4 s -> 132)."""
    return int(math.floor(frequency * seconds + 0.5))


# raw series ---------------------------------------------------------------------

@dataclass
class SensorSeries:
    subject_id: str
    session_id: str
    frequency: float
    channels: np.ndarray  # [C, T_total]
    labels: np.ndarray  # [T_total]

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.frequency <= 0:
            raise DataError(f"sampling frequency must be positive, got {self.frequency}")
        if self.channels.ndim != 2 or self.labels.shape != (self.channels.shape[1],):
            raise DataError(
                f"labels length {self.labels.shape} does not match series length {self.channels.shape}"
            )

    @property
    def length(self) -> int:
        return self.channels.shape[1]


@dataclass
class DatasetConfig:
    """Sidecar JSON describing a CSV recording."""

    name: str
    frequency: float
    channel_names: List[str] = field(default_factory=list)
    class_names: List[str] = field(default_factory=list)

    @classmethod
    def load(cls, path) -> "DatasetConfig":
        with open(path) as fh:
            raw = json.load(fh)
        try:
            return cls(
                name=raw.get("name", Path(path).stem),
                frequency=float(raw["frequency"]),
                channel_names=list(raw.get("channel_names", [])),
                class_names=list(raw.get("class_names", [])),
            )
        except KeyError as exc:
            raise SchemaError(f"{path}: sidecar config is missing {exc.args[0]!r}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=2))


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def load_csv(path, config: Optional[DatasetConfig] = None) -> List[SensorSeries]:
    """Read ``subject,session,label,<channels...>`` rows into series.

    Each contiguous run of rows with the same (subject, session) becomes one
    series. Labels are class indices, or class names when the sidecar lists
    them. Errors cite the 1-based file row (the header is row 1).
    """
    path = Path(path)
    if config is None:
        config = DatasetConfig.load(sidecar_path(path))
    class_index = {name: i for i, name in enumerate(config.class_names)}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        for col in ("subject", "session", "label"):
            if col not in header[:3] or header.index(col) != ("subject", "session", "label").index(col):
                raise SchemaError(f"{path}: missing column {col!r}; header must start subject,session,label")
        n_channels = len(header) - 3
        if n_channels < 1:
            raise SchemaError(f"{path}: no channel columns after subject,session,label")
        if config.channel_names and len(config.channel_names) != n_channels:
            raise SchemaError(
                f"{path}: sidecar names {len(config.channel_names)} channels, file has {n_channels}"
            )

        runs: List[Tuple[str, str, List[List[float]], List[int]]] = []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
            subject, session, label = row[0].strip(), row[1].strip(), row[2].strip()
            try:
                values = [float(v) for v in row[3:]]
            except ValueError:
                raise ParseError(f"{path}: row {row_no} has a non-numeric channel value") from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError(f"{path}: row {row_no} has a non-finite channel value")
            if label in class_index:
                y = class_index[label]
            else:
                try:
                    y = int(label)
                except ValueError:
                    raise ParseError(f"{path}: row {row_no} has unknown label {label!r}") from None
            if not runs or runs[-1][0] != subject or runs[-1][1] != session:
                runs.append((subject, session, [], []))
            runs[-1][2].append(values)
            runs[-1][3].append(y)
    return [
        SensorSeries(subj, sess, config.frequency, np.array(vals).T.reshape(n_channels, -1), np.array(labels))
        for subj, sess, vals, labels in runs
    ]


# windowing ----------------------------------------------------------------------

@dataclass
class Window:
    start: int
    data: np.ndarray  # [C, W]
    label: int


def majority_label(labels: Sequence[int]) -> int:
    """Most frequent label; ties go to the label seen first."""
    counts: Dict[int, int] = {}
    for y in labels:
        counts[int(y)] = counts.get(int(y), 0) + 1
    best = max(counts.values())
    return next(y for y in counts if counts[y] == best)


def segment_windows(
    series: SensorSeries,
    seconds: float = WINDOW_SECONDS,
    overlap_seconds: float = OVERLAP_SECONDS,
) -> List[Window]:
    """Cut a series into fixed windows; an empty list (plus a warning) if too short."""
    w = window_length(series.frequency, seconds)
    stride = w - window_length(series.frequency, overlap_seconds)
    if stride < 1:
        raise ConfigurationError(f"overlap {overlap_seconds}s leaves no stride for {seconds}s windows")
    if series.length < w:
        msg = f"series {series.subject_id}/{series.session_id} has {series.length} samples < window {w}; skipped"
        warnings.warn(msg, stacklevel=2)
        logger.warning(msg)
        return []
    count = (series.length - w) // stride + 1
    return [
        Window(s, series.channels[:, s : s + w], majority_label(series.labels[s : s + w]))
        for s in (i * stride for i in range(count))
    ]


@dataclass
class NormStats:
    mean: np.ndarray  # [C]
    std: np.ndarray  # [C]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class WindowedDataset:
    windows: np.ndarray  # [Nw, C, W]
    labels: np.ndarray  # [Nw]
    subject_ids: np.ndarray  # [Nw] str
    session_ids: np.ndarray  # [Nw] str
    num_classes: int
    frequency: float = 0.0
    name: str = ""
    stats: Optional[NormStats] = None
    skipped: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.windows = np.asarray(self.windows)
        if self.windows.dtype not in (np.float32, np.float64):
            self.windows = self.windows.astype(np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.subject_ids = np.asarray(self.subject_ids, dtype=str)
        self.session_ids = np.asarray(self.session_ids, dtype=str)
        n = len(self.windows)
        if self.windows.ndim != 3:
            raise DataError(f"windows must be [Nw, C, W], got {self.windows.shape}")
        if not (len(self.labels) == len(self.subject_ids) == len(self.session_ids) == n):
            raise DataError("windows, labels and id arrays must have equal length")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def channels(self) -> int:
        return self.windows.shape[1]

    @property
    def window(self) -> int:
        return self.windows.shape[2]

    def subjects(self) -> List[str]:
        return sorted(set(self.subject_ids.tolist()))

    def sessions(self) -> List[str]:
        return sorted(set(self.session_ids.tolist()))

    def subset(self, index) -> "WindowedDataset":
        index = np.asarray(index)
        return replace(
            self,
            windows=self.windows[index],
            labels=self.labels[index],
            subject_ids=self.subject_ids[index],
            session_ids=self.session_ids[index],
            skipped=list(self.skipped),
        )


def build_dataset(
    series: Iterable[SensorSeries],
    num_classes: Optional[int] = None,
    seconds: float = WINDOW_SECONDS,
    overlap_seconds: float = OVERLAP_SECONDS,
    drop_labels: Optional[Iterable[int]] = None,
    name: str = "",
) -> WindowedDataset:
    """Window every series and stack the results.

    ``drop_labels`` removes windows whose majority label is listed (e.g. a
    null class); by default every label is kept.
    """
    series = list(series)
    if not series:
        raise DataError("no series to window")
    freqs = {s.frequency for s in series}
    if len(freqs) != 1:
        raise DataError(f"series disagree on sampling frequency: {sorted(freqs)}")
    drop = set(drop_labels or ())
    windows, labels, subjects, sessions, skipped = [], [], [], [], []
    for s in series:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cut = segment_windows(s, seconds, overlap_seconds)
        if not cut:
            skipped.extend(str(w.message) for w in caught)
        for win in cut:
            if win.label in drop:
                continue
            windows.append(win.data)
            labels.append(win.label)
            subjects.append(s.subject_id)
            sessions.append(s.session_id)
    if not windows:
        raise DataError("no windows produced; every series was too short or filtered")
    labels_arr = np.array(labels)
    if num_classes is None:
        num_classes = int(max(int(s.labels.max()) for s in series)) + 1
    return WindowedDataset(
        np.stack(windows), labels_arr, subjects, sessions, num_classes, freqs.pop(), name, skipped=skipped
    )


# normalisation ----------------------------------------------------------------

def compute_stats(ds: WindowedDataset) -> NormStats:
    x = ds.windows.astype(np.float64)
    mean = x.mean(axis=(0, 2))
    std = np.maximum(x.std(axis=(0, 2)), STD_FLOOR)
    return NormStats(mean, std)


def apply_stats(ds: WindowedDataset, stats: NormStats) -> WindowedDataset:
    x = (ds.windows.astype(np.float64) - stats.mean[None, :, None]) / stats.std[None, :, None]
    return replace(ds, windows=x.astype(ds.windows.dtype), stats=stats)


def standardize(train: WindowedDataset, *others: WindowedDataset):
    """Z-score every dataset with per-channel statistics of ``train`` only.

    Returns ``(train, *others, stats)``.
    """
    if len(train) == 0:
        raise DataError("cannot standardise with an empty training partition")
    stats = compute_stats(train)
    return (apply_stats(train, stats), *(apply_stats(o, stats) for o in others), stats)


# splits -----------------------------------------------------------------------

def _split_by(ds: WindowedDataset, ids: np.ndarray, held_out: str, kind: str):
    if held_out not in set(ids.tolist()):
        raise ConfigurationError(f"unknown {kind} {held_out!r}; available: {sorted(set(ids.tolist()))}")
    test = ids == held_out
    return ds.subset(np.flatnonzero(~test)), ds.subset(np.flatnonzero(test))


def split_louo(ds: WindowedDataset, held_out_subject: str):
    """Leave one user out: ``(train, test)``."""
    return _split_by(ds, ds.subject_ids, str(held_out_subject), "subject")


def split_loso(ds: WindowedDataset, held_out_session: str):
    """Leave one session out: ``(train, test)``."""
    return _split_by(ds, ds.session_ids, str(held_out_session), "session")


def group_subjects(ds: WindowedDataset, grouping: Mapping[str, str]) -> WindowedDataset:
    """Relabel subjects by ``grouping`` (subject -> group) so groups are held out together."""
    missing = sorted(set(ds.subject_ids.tolist()) - set(grouping))
    if missing:
        raise ConfigurationError(f"grouping map does not cover subjects {missing}")
    return replace(ds, subject_ids=np.array([grouping[s] for s in ds.subject_ids.tolist()]))


# synthetic data -----------------------------------------------------------------

SEPARABLE = "separable"
ORDER_SENSITIVE = "order_sensitive"
SHAPE_FUZZ = "shape_fuzz"
_KIND_CODES = {SEPARABLE: 1, ORDER_SENSITIVE: 2, SHAPE_FUZZ: 3}


def _window_rng(seed: int, kind: str, index: int) -> np.random.Generator:
    # counter-based: window i depends only on (seed, kind, i)
    return np.random.default_rng(np.random.SeedSequence([int(seed), _KIND_CODES[kind], int(index)]))


def _ids(n: int, n_subjects: int, n_sessions: int, labels: np.ndarray):
    # round robin within each class keeps every subject class-balanced
    rank = np.zeros(n, dtype=np.int64)
    for y in np.unique(labels):
        idx = np.flatnonzero(labels == y)
        rank[idx] = np.arange(len(idx))
    subjects = np.array([f"S{r % n_subjects}" for r in rank])
    sessions = np.array([f"R{(r // n_subjects) % n_sessions}" for r in rank])
    return subjects, sessions


def _separable(seed, channels, classes, frequency, per_class, noise, subjects, sessions, random_phase):
    w = window_length(frequency)
    t = np.arange(w) / frequency
    template_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    phases = template_rng.uniform(0, 2 * np.pi, size=(classes, channels))
    gains = template_rng.uniform(0.5, 1.5, size=(classes, channels))
    # distinct tones, well below Nyquist
    tones = np.linspace(1.0, min(frequency / 4.0, 1.0 + 1.5 * (classes - 1)), classes)
    labels = np.repeat(np.arange(classes), per_class)
    x = np.empty((len(labels), channels, w))
    for i, y in enumerate(labels):
        rng = _window_rng(seed, SEPARABLE, i)
        amp = rng.uniform(0.8, 1.2)
        phase = phases[y][:, None] + (rng.uniform(0, 2 * np.pi) if random_phase else 0.0)
        x[i] = amp * gains[y][:, None] * np.sin(2 * np.pi * tones[y] * t[None, :] + phase)
        x[i] += noise * rng.standard_normal((channels, w))
    return x, labels, w


def _bump(width: int) -> np.ndarray:
    return np.sin(np.pi * (np.arange(width) + 0.5) / width) ** 2


def _order_sensitive(seed, channels, frequency, per_class, noise, amplitude, event_width, margin):
    w = window_length(frequency)
    width = event_width
    slack = w - 3 * margin - 2 * width
    if slack < 0:
        raise ConfigurationError(
            f"window of {w} samples cannot hold two {width}-sample events with {margin}-sample margins"
        )
    bump = amplitude * _bump(width)
    labels = np.repeat(np.arange(2), per_class)
    x = np.empty((len(labels), channels, w))
    for i, y in enumerate(labels):
        rng = _window_rng(seed, ORDER_SENSITIVE, i)
        first = margin + int(rng.integers(0, slack // 2 + 1))
        second = first + width + margin + int(rng.integers(0, slack - (first - margin) + 1))
        x[i] = noise * rng.standard_normal((channels, w))
        # class 0: event on channel 0 precedes the event on channel 1; class 1: reversed
        a, b = (0, 1) if y == 0 else (1, 0)
        x[i, a, first : first + width] += bump
        x[i, b, second : second + width] += bump
    return x, labels, w


def synth_dataset(
    kind: str,
    seed: int = 0,
    *,
    channels: int = 6,
    classes: int = 4,
    frequency: Optional[float] = None,
    per_class: int = 40,
    noise: float = 0.5,
    subjects: int = 4,
    sessions: int = 1,
    random_phase: bool = False,
    amplitude: float = 3.0,
    event_width: int = 16,
    margin: int = 80,
    dataset: Optional[str] = None,
) -> WindowedDataset:
    """Deterministic synthetic windows for desk-scale experiments.

    ``separable``: each class is a sinusoid of its own frequency (fixed
    per-class phase unless ``random_phase``) plus Gaussian noise.
    ``order_sensitive``: two classes with the same two events (a bump on
    channel 0 and one on channel 1) that differ only in which comes first.
    Events sit at least ``margin`` samples from the edges and from each other;
    the default matches the receptive field of the default TinierHAR conv
    stack, so no single conv feature sees both events or an edge and an event.
    ``shape_fuzz``: Gaussian noise at a catalog dataset's shape and class count.
    The default frequency is 50 Hz for ``separable`` and 100 Hz for
    ``order_sensitive``.
    """
    kind = kind.lower().replace("-", "_")
    if frequency is None:
        frequency = 100.0 if kind == ORDER_SENSITIVE else 50.0
    if kind == SEPARABLE:
        x, labels, _ = _separable(seed, channels, classes, frequency, per_class, noise, subjects, sessions, random_phase)
        n_classes = classes
    elif kind == ORDER_SENSITIVE:
        if channels < 2:
            raise ConfigurationError("order_sensitive data needs at least 2 channels")
        x, labels, _ = _order_sensitive(seed, channels, frequency, per_class, noise, amplitude, event_width, margin)
        n_classes = 2
    elif kind == SHAPE_FUZZ:
        info = lookup_dataset(dataset or "WISDM")
        channels, frequency, n_classes = info.channels, info.frequency, info.classes
        labels = np.arange(per_class * n_classes) % n_classes
        x = np.stack([_window_rng(seed, SHAPE_FUZZ, i).standard_normal((channels, info.window)) for i in range(len(labels))])
    else:
        raise ConfigurationError(f"unknown synthetic kind {kind!r}; expected {', '.join(_KIND_CODES)}")
    subj, sess = _ids(len(labels), subjects, sessions, labels)
    return WindowedDataset(x, labels, subj, sess, n_classes, frequency, name=f"synth-{kind}")


def marginal_ks_pvalues(ds: WindowedDataset) -> List[float]:
    """Per-channel two-sample KS p-values between class 0 and class 1 sample values."""
    from scipy.stats import ks_2samp

    a = ds.windows[ds.labels == 0]
    b = ds.windows[ds.labels == 1]
    return [float(ks_2samp(a[:, c].ravel(), b[:, c].ravel()).pvalue) for c in range(ds.channels)]


# binary cache ---------------------------------------------------------------------

CACHE_MAGIC = b"HARW"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sHBxIIIHd")
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def _pack_strings(values: np.ndarray) -> bytes:
    table = sorted(set(values.tolist()))
    index = {s: i for i, s in enumerate(table)}
    out = [struct.pack("<I", len(table))]
    for s in table:
        raw = s.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
    out.append(np.array([index[s] for s in values.tolist()], dtype="<u4").tobytes())
    return b"".join(out)


def _unpack_strings(buf: memoryview, pos: int, n: int) -> Tuple[np.ndarray, int]:
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    table = []
    for _ in range(count):
        (length,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        table.append(bytes(buf[pos : pos + length]).decode("utf-8"))
        pos += length
    idx = np.frombuffer(buf, dtype="<u4", count=n, offset=pos)
    pos += 4 * n
    return np.array([table[i] for i in idx], dtype=str) if n else np.array([], dtype=str), pos


def save_cache(ds: WindowedDataset, path) -> None:
    """Write a little-endian cache: header, windows, u16 labels, id tables, metadata, CRC32.

    Windows are stored as f32 when the dataset is f32 and as f64 otherwise,
    so the round trip is always exact.
    """
    if ds.num_classes > 0xFFFF:
        raise DataError("class count does not fit in u16 labels")
    code = 4 if ds.windows.dtype == np.float32 else 8
    nw, c, w = ds.windows.shape
    meta = {"name": ds.name, "stats": ds.stats.to_dict() if ds.stats else None, "skipped": ds.skipped}
    meta_raw = json.dumps(meta).encode("utf-8")
    body = b"".join(
        [
            _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, code, nw, c, w, ds.num_classes, float(ds.frequency)),
            np.ascontiguousarray(ds.windows, dtype=_DTYPES[code]).tobytes(),
            ds.labels.astype("<u2").tobytes(),
            _pack_strings(ds.subject_ids),
            _pack_strings(ds.session_ids),
            struct.pack("<I", len(meta_raw)),
            meta_raw,
        ]
    )
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_cache(path) -> WindowedDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _CACHE_HEADER.size + 4:
        raise IntegrityError(f"{path}: file too short for a dataset cache")
    magic, version, code, nw, c, w, num_classes, freq = _CACHE_HEADER.unpack_from(raw, 0)
    if magic != CACHE_MAGIC:
        raise IntegrityError(f"{path}: not a dataset cache (bad magic)")
    if version != CACHE_VERSION:
        raise VersionError(f"{path}: unsupported cache version {version} (expected {CACHE_VERSION})")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise IntegrityError(f"{path}: checksum mismatch (truncated or corrupt)")
    if code not in _DTYPES:
        raise IntegrityError(f"{path}: unknown window dtype code {code}")
    buf = memoryview(body)
    pos = _CACHE_HEADER.size
    dtype = _DTYPES[code]
    windows = np.frombuffer(buf, dtype=dtype, count=nw * c * w, offset=pos).reshape(nw, c, w)
    pos += windows.nbytes
    labels = np.frombuffer(buf, dtype="<u2", count=nw, offset=pos).astype(np.int64)
    pos += 2 * nw
    subjects, pos = _unpack_strings(buf, pos, nw)
    sessions, pos = _unpack_strings(buf, pos, nw)
    (meta_len,) = struct.unpack_from("<I", buf, pos)
    meta = json.loads(bytes(buf[pos + 4 : pos + 4 + meta_len]).decode("utf-8"))
    return WindowedDataset(
        windows.astype(dtype.newbyteorder("=")),
        labels,
        subjects,
        sessions,
        num_classes,
        freq,
        meta.get("name", ""),
        NormStats.from_dict(meta["stats"]) if meta.get("stats") else None,
        list(meta.get("skipped", [])),
    )
