"""MNIST IDX ingestion and JSON run reports."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import shutil
import struct
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import UsageError

IDX_LABELS = 0x00000801
IDX_IMAGES = 0x00000803
MNIST_ENV = "DONNSIM_MNIST_DIR"
DEFAULT_MNIST_DIR = Path("/root/data/mnist")
MNIST_FILES = {
    ("train", "images"): "train-images-idx3-ubyte",
    ("train", "labels"): "train-labels-idx1-ubyte",
    ("test", "images"): "t10k-images-idx3-ubyte",
    ("test", "labels"): "t10k-labels-idx1-ubyte",
}
MNIST_SHA256 = {
    "t10k-images-idx3-ubyte": "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    "t10k-labels-idx1-ubyte": "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
    "train-images-idx3-ubyte": "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    "train-labels-idx1-ubyte": "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
}
REPORT_SCHEMA_VERSION = 1


class IdxParseError(UsageError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


# --- IDX ----------------------------------------------------------------------

def parse_idx(raw: bytes, max_items: int | None = None, source="<bytes>") -> np.ndarray:
    """Parse an unsigned-byte IDX container (labels: 1-D, images: 3-D)."""
    if len(raw) < 4:
        raise IdxParseError(source, 0, f"expected a 4-byte magic number, file has {len(raw)} bytes")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_LABELS, IDX_IMAGES):
        raise IdxParseError(source, 0, f"bad magic 0x{magic:08x} (expected 0x{IDX_LABELS:08x} or 0x{IDX_IMAGES:08x})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxParseError(source, 4, f"expected {header} header bytes, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = dims[0]
    if max_items is not None:
        if max_items < 0:
            raise UsageError(f"max_items must be >= 0, got {max_items}")
        count = min(count, max_items)
    item = int(np.prod(dims[1:], dtype=np.int64))
    expected = header + dims[0] * item
    if len(raw) < header + count * item or (max_items is None and len(raw) != expected):
        raise IdxParseError(source, min(len(raw), expected),
                            f"expected {expected} bytes for dims {dims}, got {len(raw)}")
    data = np.frombuffer(raw, dtype=np.uint8, count=count * item, offset=header)
    return data.reshape((count, *dims[1:])).copy()


def load_idx(path, max_items: int | None = None) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read IDX file {path}: {exc.strerror}") from exc
    return parse_idx(raw, max_items, source=path)


def encode_idx(array) -> bytes:
    a = np.asarray(array)
    if a.dtype != np.uint8 or a.ndim not in (1, 3):
        raise UsageError("IDX writer supports uint8 arrays with 1 (labels) or 3 (images) dimensions")
    magic = IDX_LABELS if a.ndim == 1 else IDX_IMAGES
    return struct.pack(f">I{a.ndim}I", magic, *a.shape) + np.ascontiguousarray(a).tobytes()


def write_idx(array, path) -> None:
    Path(path).write_bytes(encode_idx(array))


@dataclass
class MnistSet:
    images: np.ndarray
    labels: np.ndarray
    split: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise UsageError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and self.labels.max() > 9:
            raise UsageError("labels must lie in [0, 9]")
        if self.split not in ("train", "test"):
            raise UsageError(f"split must be 'train' or 'test', got {self.split!r}")

    def __len__(self):
        return len(self.labels)


def mnist_dir(path=None) -> Path:
    if path is not None:
        return Path(path)
    return Path(os.environ.get(MNIST_ENV, DEFAULT_MNIST_DIR))


def load_mnist(split: str = "test", directory=None, max_items: int | None = None) -> MnistSet:
    d = mnist_dir(directory)
    files = {}
    for kind in ("images", "labels"):
        name = MNIST_FILES.get((split, kind))
        if name is None:
            raise UsageError(f"split must be 'train' or 'test', got {split!r}")
        p = d / name
        if not p.exists() and (d / (name + ".gz")).exists():
            raise UsageError(f"{d / (name + '.gz')} is compressed; gunzip it first")
        if not p.exists():
            raise UsageError(f"MNIST file not found: {p} (set {MNIST_ENV} to the directory holding the IDX files)")
        files[kind] = load_idx(p, max_items)
    return MnistSet(files["images"], files["labels"], split)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fetch_mnist(base_url: str, directory=None) -> Path:
    """Optional network helper: download the four IDX files and verify sha256.

    Not used by the simulator or the tests, which only read local files.
    ``base_url`` must serve the uncompressed files by name.
    """
    d = mnist_dir(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, digest in MNIST_SHA256.items():
        target = d / name
        if target.exists() and sha256_file(target) == digest:
            continue
        tmp = target.with_suffix(".part")
        with urllib.request.urlopen(f"{base_url.rstrip('/')}/{name}") as resp, open(tmp, "wb") as fh:
            shutil.copyfileobj(resp, fh)
        got = sha256_file(tmp)
        if got != digest:
            tmp.unlink()
            raise UsageError(f"checksum mismatch for {name}: got {got}, expected {digest}")
        tmp.replace(target)
    return d


# --- run reports ----------------------------------------------------------

class ReportVersionError(UsageError):
    pass


# fields that legitimately differ between otherwise identical runs
TIMESTAMP_FIELDS = ("created", "wall_clock_s")


@dataclass
class RunReport:
    command: str
    config: dict
    seed: int
    version: str
    created: str = ""
    wall_clock_s: float = 0.0
    energy: dict | None = None
    ber: dict | None = None
    accuracy: float | None = None
    confusion_matrix: list | None = None
    output_scores: list | None = None
    diag_differences: list | None = None
    results: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"schema_version": REPORT_SCHEMA_VERSION}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is not None:
                d[f.name] = _jsonable(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        ver = d.get("schema_version")
        if ver != REPORT_SCHEMA_VERSION:
            raise ReportVersionError(f"report schema version {ver!r} is not supported (expected {REPORT_SCHEMA_VERSION})")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names - {"schema_version"}
        if unknown:
            raise UsageError(f"unknown report fields: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in names})

    def comparable(self) -> dict:
        """The report without timestamp fields, for determinism checks."""
        return {k: v for k, v in self.to_dict().items() if k not in TIMESTAMP_FIELDS}


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def dumps_report(report: RunReport) -> str:
    # json writes floats with repr, which round-trips bit-exactly
    return json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(report: RunReport, path) -> None:
    path = Path(path)
    try:
        path.write_text(dumps_report(report))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report: {exc.strerror}", str(path)) from exc


def read_report(path) -> RunReport:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read report: {exc.strerror}", str(path)) from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid report JSON at line {exc.lineno}: {exc.msg}") from exc
    return RunReport.from_dict(d)
