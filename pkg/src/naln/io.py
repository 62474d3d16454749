"""Tensor files, JSON manifests, checkpoints and report writers.

Tensor file layout (all integers little-endian)::

    b"NALN" | version u16 | dtype u8 | ndim u8 | dims u64 * ndim | payload

``dtype`` is 1 for binary32 and 2 for binary64; the payload is row-major.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import EncoderConfig, EncoderParams
from .errors import ConfigError, FormatError
from .tensor import Tensor

MAGIC = b"NALN"
VERSION = 1
_HEAD = struct.Struct("<4sHBB")
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


# ----------------------------------------------------------------------
# tensor files
# ----------------------------------------------------------------------
def encode_tensor(array, dtype=None):
    """Bytes of a tensor file; float arrays keep their width unless ``dtype`` overrides it."""
    arr = np.asarray(array.data if isinstance(array, Tensor) else array)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in CODES else np.float64
    dtype = np.dtype(dtype)
    if dtype not in CODES:
        raise FormatError(f"tensor files hold float32 or float64, not {dtype}")
    if arr.ndim > 255:
        raise FormatError("at most 255 dimensions are supported")
    head = _HEAD.pack(MAGIC, VERSION, CODES[dtype], arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=dtype.newbyteorder("<")).tobytes()
    return head + dims + payload


def decode_tensor(buf, promote=True):
    """Parse tensor-file bytes; binary32 payloads are promoted to float64 unless ``promote`` is off."""
    buf = bytes(buf)
    if len(buf) < _HEAD.size:
        raise FormatError(f"truncated header: expected at least {_HEAD.size} bytes, got {len(buf)}")
    magic, version, code, ndim = _HEAD.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dims_end = _HEAD.size + 8 * ndim
    if len(buf) < dims_end:
        raise FormatError(f"truncated header: expected {dims_end} bytes of header, got {len(buf)}")
    dims = struct.unpack_from(f"<{ndim}Q", buf, _HEAD.size)
    dt = DTYPES[code]
    expected = math.prod(dims) * dt.itemsize
    actual = len(buf) - dims_end
    if actual < expected:
        raise FormatError(f"truncated payload: expected {expected} bytes, got {actual}")
    if actual > expected:
        raise FormatError(f"trailing data: expected {expected} payload bytes, got {actual}")
    arr = np.frombuffer(buf, dtype=dt, offset=dims_end, count=math.prod(dims)).reshape(dims)
    return arr.astype(np.float64 if promote else dt.newbyteorder("="))


def write_tensor(path, array, dtype=None):
    Path(path).write_bytes(encode_tensor(array, dtype))


def read_tensor(path, promote=True):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read tensor file {path}: {exc.strerror}") from None
    try:
        return decode_tensor(buf, promote)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def read_ints(path):
    """Integer-valued tensor (labels, ids) as int64."""
    x = read_tensor(path)
    if not np.all(x == np.round(x)):
        raise FormatError(f"{path}: expected integer values")
    return x.astype(np.int64)


# ----------------------------------------------------------------------
# manifests
# ----------------------------------------------------------------------
_SPLIT_KEYS = {"epochs", "labels"}
_TOP_KEYS = {"format", "sample_rate_hz", "channel_names", "train", "test", "images",
             "encoder", "training", "outputs"}
_IMAGE_KEYS = {"ids", "embeddings"}
_ENCODER_KEYS = {"family", "hyper"}
_TRAINING_KEYS = {"learning_rate", "batch_size", "temperature", "max_epochs", "patience", "val_fraction"}
_OUTPUT_KEYS = {"dir"}
MANIFEST_FORMAT = "naln-manifest/1"


def _check_keys(d, allowed, where, required=()):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    missing = sorted(set(required) - set(d))
    if missing:
        raise ConfigError(f"missing keys in {where}: {missing}")


@dataclass
class Manifest:
    """Dataset roles, training settings and output location; paths are relative to ``base_dir``."""

    sample_rate_hz: float
    channel_names: list
    train: dict
    test: dict
    images: dict
    encoder: dict = field(default_factory=lambda: {"family": "nice_conv", "hyper": {}})
    training: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=lambda: {"dir": "out"})
    base_dir: Path = field(default=Path("."), compare=False)

    @classmethod
    def from_dict(cls, d, base_dir=".", check_files=True):
        _check_keys(d, _TOP_KEYS, "manifest", required=_TOP_KEYS - {"encoder", "training", "outputs"})
        if d["format"] != MANIFEST_FORMAT:
            raise ConfigError(f"manifest format must be {MANIFEST_FORMAT!r}")
        for split in ("train", "test"):
            _check_keys(d[split], _SPLIT_KEYS, split, required=_SPLIT_KEYS)
        _check_keys(d["images"], _IMAGE_KEYS, "images", required=_IMAGE_KEYS)
        if not isinstance(d["images"]["embeddings"], dict) or not d["images"]["embeddings"]:
            raise ConfigError("images.embeddings must name at least one embedding file")
        encoder = d.get("encoder", {"family": "nice_conv", "hyper": {}})
        _check_keys(encoder, _ENCODER_KEYS, "encoder", required={"family"})
        training = d.get("training", {})
        _check_keys(training, _TRAINING_KEYS, "training")
        outputs = d.get("outputs", {"dir": "out"})
        _check_keys(outputs, _OUTPUT_KEYS, "outputs", required=_OUTPUT_KEYS)
        m = cls(float(d["sample_rate_hz"]), [str(c) for c in d["channel_names"]],
                dict(d["train"]), dict(d["test"]),
                {"ids": d["images"]["ids"], "embeddings": dict(d["images"]["embeddings"])},
                {"family": encoder["family"], "hyper": dict(encoder.get("hyper", {}))},
                dict(training), dict(outputs), Path(base_dir))
        if check_files:
            missing = [p for p in m.files() if not m.resolve(p).is_file()]
            if missing:
                raise ConfigError(f"manifest references missing files: {missing}")
        return m

    def to_dict(self):
        return {"format": MANIFEST_FORMAT, "sample_rate_hz": self.sample_rate_hz,
                "channel_names": list(self.channel_names), "train": dict(self.train),
                "test": dict(self.test), "images": {"ids": self.images["ids"],
                                                    "embeddings": dict(self.images["embeddings"])},
                "encoder": {"family": self.encoder["family"], "hyper": dict(self.encoder.get("hyper", {}))},
                "training": dict(self.training), "outputs": dict(self.outputs)}

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def files(self):
        return [self.train["epochs"], self.train["labels"], self.test["epochs"], self.test["labels"],
                self.images["ids"], *self.images["embeddings"].values()]

    def resolve(self, rel):
        return self.base_dir / rel

    @property
    def output_dir(self):
        return self.resolve(self.outputs["dir"])


def parse_manifest(text, base_dir=".", check_files=True):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest is not valid JSON: {exc}") from None
    return Manifest.from_dict(d, base_dir, check_files)


def load_manifest(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc.strerror}") from None
    return parse_manifest(text, path.parent)


def save_manifest(manifest, path):
    Path(path).write_text(manifest.dumps(), encoding="utf-8")


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------
ARCHITECTURE = "architecture.json"


def save_checkpoint(directory, params):
    """One tensor file per parameter plus an ``architecture.json`` descriptor."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = params.names()
    for name in names:
        write_tensor(directory / f"{name}.naln", params[name].data)
    desc = {"config": params.config.to_dict(), "parameters": names}
    (directory / ARCHITECTURE).write_text(json.dumps(desc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(directory):
    directory = Path(directory)
    try:
        desc = json.loads((directory / ARCHITECTURE).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{directory}: unreadable architecture descriptor ({exc})") from None
    config = EncoderConfig.from_dict(desc["config"])
    params = {n: Tensor(read_tensor(directory / f"{n}.naln"), requires_grad=True) for n in desc["parameters"]}
    return EncoderParams(config, params)


# ----------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------
def fmt(x):
    """Stable number formatting for reports: integers as-is, floats with 6 decimals."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6f}"
    return str(x)


def table_text(header, rows):
    cells = [[str(h) for h in header]] + [[fmt(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines) + "\n"


def table_csv(header, rows):
    out = _io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return out.getvalue()


def write_report(stem, header, rows, title=None):
    """Write ``stem.txt`` and ``stem.csv``; returns the text form."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    text = (f"# {title}\n" if title else "") + table_text(header, rows)
    stem.with_suffix(".txt").write_text(text, encoding="utf-8")
    stem.with_suffix(".csv").write_text(table_csv(header, rows), encoding="utf-8")
    return text


def read_csv_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
