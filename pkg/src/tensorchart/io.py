"""Binary artifact formats. All integers and floats are little-endian.

TNSR  tensor record: magic, u16 version, u8 order, u32 mode sizes,
      u8 scalar kind (0 real, 1 complex), f64 payload in first-mode-fastest
      order (complex values as interleaved real/imaginary pairs).
CCDS  dataset: header with the system config, sample count, hopping
      factor, SNR in dB (NaN when noiseless) and generator seed, then per
      sample the (x, y) position, the hopping offset (0xFFFFFFFF when
      unhopped), observed-subcarrier runs and the channel as a TNSR record.
CCFT  features: per sample the real and imaginary denoised tensors and the
      overall spatial covariance matrix, each a TNSR record.
CCDM  dissimilarity matrix: N, kind flag, strict upper triangle row by row.
CCNN  model: architecture descriptor followed by the flat parameter vector.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .channel import Sample, SystemConfig
from .features import DIRECT, GEODESIC, DissimilarityMatrix
from .network import Architecture, NetworkParams, init_params, parameter_count

VERSION = 1
NO_OFFSET = 0xFFFFFFFF
_ACTIVATION_LEAKY_RELU = 1


class CorruptArtifactError(ValueError):
    def __init__(self, message: str, offset: int | None = None, path=None):
        self.offset = offset
        self.path = path
        where = f" at byte {offset}" if offset is not None else ""
        src = f"{path}: " if path else ""
        super().__init__(f"{src}{message}{where}")


class _Reader:
    def __init__(self, f: BinaryIO, path=None):
        self.f = f
        self.path = path
        self.offset = f.tell() if f.seekable() else 0

    def read(self, n: int) -> bytes:
        data = self.f.read(n)
        if len(data) != n:
            raise CorruptArtifactError(f"truncated: wanted {n} bytes, got {len(data)}", self.offset, self.path)
        self.offset += n
        return data

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))

    def magic(self, expected: bytes):
        at = self.offset
        got = self.read(4)
        if got != expected:
            raise CorruptArtifactError(f"bad magic {got!r}, expected {expected!r}", at, self.path)
        (version,) = self.unpack("H")
        if version != VERSION:
            raise CorruptArtifactError(f"unsupported version {version}", at + 4, self.path)

    def fail(self, message: str):
        raise CorruptArtifactError(message, self.offset, self.path)


def _header(f: BinaryIO, magic: bytes):
    f.write(magic)
    f.write(struct.pack("<H", VERSION))


# tensors

def write_tensor(f: BinaryIO, x: np.ndarray) -> None:
    x = np.asarray(x)
    complex_ = np.iscomplexobj(x)
    _header(f, b"TNSR")
    f.write(struct.pack("<B", x.ndim))
    f.write(struct.pack(f"<{x.ndim}I", *x.shape))
    f.write(struct.pack("<B", 1 if complex_ else 0))
    dtype = "<c16" if complex_ else "<f8"
    f.write(np.asarray(x, dtype=dtype).tobytes(order="F"))


def _read_tensor(r: _Reader) -> np.ndarray:
    r.magic(b"TNSR")
    (order,) = r.unpack("B")
    shape = r.unpack(f"{order}I") if order else ()
    at = r.offset
    (kind,) = r.unpack("B")
    if kind not in (0, 1):
        raise CorruptArtifactError(f"unknown scalar kind {kind}", at, r.path)
    dtype = np.dtype("<c16" if kind else "<f8")
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(r.read(count * dtype.itemsize), dtype=dtype)
    return np.reshape(data, shape, order="F").astype(complex if kind else float)


def read_tensor(f: BinaryIO) -> np.ndarray:
    return _read_tensor(_Reader(f))


def tensor_to_bytes(x: np.ndarray) -> bytes:
    import io as _io

    buf = _io.BytesIO()
    write_tensor(buf, x)
    return buf.getvalue()


def tensor_from_bytes(data: bytes) -> np.ndarray:
    import io as _io

    return read_tensor(_io.BytesIO(data))


# datasets

@dataclass
class DatasetHeader:
    config: SystemConfig
    n_samples: int
    hopping: int
    snr_db: float | None = None
    seed: int = 0


def _mask_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return [(int(s), int(e - s)) for s, e in zip(edges[::2], edges[1::2])]


def write_dataset(
    path, samples, cfg: SystemConfig, n_samples: int, hopping: int = 1, snr_db: float | None = None, seed: int = 0
) -> int:
    """Stream samples to a CCDS file; returns the number written."""
    count = 0
    with open(path, "wb") as f:
        _header(f, b"CCDS")
        f.write(struct.pack("<4I", cfg.n_rx, cfg.n_pol, cfg.n_tx, cfg.n_sub))
        f.write(struct.pack("<3d", cfg.delta_f, cfg.f_c, cfg.c))
        f.write(struct.pack("<3I", cfg.path_count, n_samples, hopping))
        f.write(struct.pack("<dQ", np.nan if snr_db is None else snr_db, seed))
        for s in samples:
            if s.channel.shape != cfg.shape:
                raise ValueError(f"sample channel shape {s.channel.shape} != {cfg.shape}")
            f.write(struct.pack("<2d", *np.asarray(s.position, dtype=float)))
            off = NO_OFFSET if s.hopping_offset is None else int(s.hopping_offset)
            runs = _mask_runs(np.asarray(s.mask, dtype=bool))
            f.write(struct.pack("<2I", off, len(runs)))
            for start, length in runs:
                f.write(struct.pack("<2I", start, length))
            write_tensor(f, s.channel)
            count += 1
    if count != n_samples:
        raise ValueError(f"wrote {count} samples but the header declares {n_samples}")
    return count


def _read_dataset_header(r: _Reader) -> DatasetHeader:
    r.magic(b"CCDS")
    n_rx, n_pol, n_tx, n_sub = r.unpack("4I")
    delta_f, f_c, c = r.unpack("3d")
    path_count, n_samples, hopping = r.unpack("3I")
    snr_db, seed = r.unpack("dQ")
    try:
        cfg = SystemConfig(n_rx, n_pol, n_tx, n_sub, delta_f, f_c, c, path_count)
    except ValueError as exc:
        r.fail(f"invalid system config: {exc}")
    return DatasetHeader(cfg, n_samples, hopping, None if np.isnan(snr_db) else snr_db, seed)


def read_dataset_header(path) -> DatasetHeader:
    with open(path, "rb") as f:
        return _read_dataset_header(_Reader(f, path))


def iter_dataset_file(path) -> Iterator[Sample]:
    with open(path, "rb") as f:
        r = _Reader(f, path)
        head = _read_dataset_header(r)
        n_sub = head.config.n_sub
        for _ in range(head.n_samples):
            position = np.array(r.unpack("2d"))
            off, n_runs = r.unpack("2I")
            mask = np.zeros(n_sub, dtype=bool)
            for _ in range(n_runs):
                start, length = r.unpack("2I")
                if start + length > n_sub:
                    r.fail(f"observed run {start}+{length} exceeds {n_sub} subcarriers")
                mask[start : start + length] = True
            channel = _read_tensor(r)
            if channel.shape != head.config.shape:
                r.fail(f"channel shape {channel.shape} does not match header {head.config.shape}")
            yield Sample(position, channel, mask, None if off == NO_OFFSET else int(off))
        if f.read(1):
            r.fail("trailing bytes after last sample")


def read_dataset(path) -> tuple[DatasetHeader, list[Sample]]:
    return read_dataset_header(path), list(iter_dataset_file(path))


def read_positions(path) -> np.ndarray:
    return np.array([s.position for s in iter_dataset_file(path)])


# features

@dataclass
class FeatureSet:
    re: np.ndarray  # (N, I1, I2, I3)
    im: np.ndarray
    scm: np.ndarray  # (N, n_rx, n_rx) complex
    h_p: int = 17
    ranks: tuple[int, int, int] = (8, 8, 8)

    def __len__(self) -> int:
        return len(self.re)


def write_features(path, fs: FeatureSet) -> None:
    with open(path, "wb") as f:
        _header(f, b"CCFT")
        f.write(struct.pack("<5I", len(fs), fs.h_p, *fs.ranks))
        for re, im, scm in zip(fs.re, fs.im, fs.scm):
            write_tensor(f, re)
            write_tensor(f, im)
            write_tensor(f, scm)


def read_features(path) -> FeatureSet:
    with open(path, "rb") as f:
        r = _Reader(f, path)
        r.magic(b"CCFT")
        n, h_p, *ranks = r.unpack("5I")
        res, ims, scms = [], [], []
        for _ in range(n):
            res.append(_read_tensor(r))
            ims.append(_read_tensor(r))
            scms.append(_read_tensor(r))
            if res[-1].shape != res[0].shape or ims[-1].shape != res[0].shape:
                r.fail("inconsistent feature shapes")
        if f.read(1):
            r.fail("trailing bytes after last sample")
    shape = res[0].shape if res else (0, 0, 0)
    return FeatureSet(
        np.array(res).reshape((n,) + shape),
        np.array(ims).reshape((n,) + shape),
        np.array(scms),
        h_p,
        tuple(ranks),
    )


# dissimilarities

def write_dissimilarity(path, d: DissimilarityMatrix) -> None:
    n = len(d)
    with open(path, "wb") as f:
        _header(f, b"CCDM")
        f.write(struct.pack("<IB", n, 1 if d.kind == GEODESIC else 0))
        f.write(np.asarray(d.values[np.triu_indices(n, 1)], dtype="<f8").tobytes())


def read_dissimilarity(path) -> DissimilarityMatrix:
    with open(path, "rb") as f:
        r = _Reader(f, path)
        r.magic(b"CCDM")
        at = r.offset
        n, kind = r.unpack("IB")
        if kind not in (0, 1):
            raise CorruptArtifactError(f"unknown dissimilarity kind {kind}", at + 4, path)
        m = n * (n - 1) // 2
        upper = np.frombuffer(r.read(8 * m), dtype="<f8")
        if f.read(1):
            r.fail("trailing bytes after payload")
    values = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    values[iu] = upper
    values[(iu[1], iu[0])] = upper
    return DissimilarityMatrix(values, GEODESIC if kind else DIRECT)


# models

def model_to_bytes(params: NetworkParams) -> bytes:
    arch = params.architecture
    out = [b"CCNN", struct.pack("<H", VERSION)]
    out.append(struct.pack("<B", len(arch.tcl_shapes)))
    for shape in arch.tcl_shapes:
        out.append(struct.pack("<3I", *shape))
    widths = arch.fcn_widths
    out.append(struct.pack("<B", len(widths)))
    out.append(struct.pack(f"<{len(widths)}I", *widths))
    out.append(struct.pack("<Bd", _ACTIVATION_LEAKY_RELU, arch.slope))
    theta = params.flat()
    out.append(struct.pack("<Q", theta.size))
    out.append(np.asarray(theta, dtype="<f8").tobytes())
    return b"".join(out)


def write_model(path, params: NetworkParams) -> None:
    Path(path).write_bytes(model_to_bytes(params))


def read_model(path) -> NetworkParams:
    with open(path, "rb") as f:
        r = _Reader(f, path)
        r.magic(b"CCNN")
        (n_stages,) = r.unpack("B")
        shapes = tuple(tuple(r.unpack("3I")) for _ in range(n_stages))
        (n_widths,) = r.unpack("B")
        widths = r.unpack(f"{n_widths}I")
        at = r.offset
        act, slope = r.unpack("Bd")
        if act != _ACTIVATION_LEAKY_RELU:
            raise CorruptArtifactError(f"unknown activation id {act}", at, path)
        try:
            arch = Architecture(shapes, tuple(widths[1:-1]), widths[-1], slope)
        except ValueError as exc:
            r.fail(f"invalid architecture: {exc}")
        if n_widths < 2 or arch.fcn_widths != tuple(widths):
            r.fail(f"FCN widths {widths} inconsistent with TCL output {shapes[-1]}")
        template = init_params(arch, 0)
        at = r.offset
        (count,) = r.unpack("Q")
        if count != parameter_count(template):
            raise CorruptArtifactError(
                f"payload holds {count} parameters, architecture needs {parameter_count(template)}", at, path
            )
        theta = np.frombuffer(r.read(8 * count), dtype="<f8")
        if f.read(1):
            r.fail("trailing bytes after payload")
    return template.with_flat(theta)
