"""Quantized on-disk store of document representations with exact space accounting.

File layout (little-endian), magic "TGIX":
  header   magic(4) version:u32 dim:u16 scheme:u8 granularity:u8 count:u64
           fingerprint(32)
  record   id_len:u16 id(utf-8) n:u16 topic_ids:u16*n (0xFFFF = none)
           [u8 scheme only: n * (scale:f32 offset:f32)] payload n*dim*bytes_per_dim
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .encoder import Encoder, Granularity, Representation
from .errors import FormatError, IncompatibleArtifacts, NumericalError
from .corpus import TextKind

_TGIX_MAGIC = b"TGIX"
_TGIX_VERSION = 1
_HEADER = "<IHBBQ"
NONE_TOPIC_CODE = 0xFFFF

_GRANULARITY_CODES = {Granularity.TOPIC: 0, Granularity.WORD: 1, Granularity.GLOBAL: 2}
_GRANULARITY_FROM_CODE = {v: k for k, v in _GRANULARITY_CODES.items()}


class QuantScheme(Enum):
    F32 = "f32"
    F16 = "f16"
    U8 = "u8"

    @property
    def bytes_per_dim(self) -> int:
        return {"f32": 4, "f16": 2, "u8": 1}[self.value]

    @property
    def code(self) -> int:
        return {"f32": 0, "f16": 1, "u8": 2}[self.value]

    @classmethod
    def from_code(cls, code: int) -> "QuantScheme":
        try:
            return {0: cls.F32, 1: cls.F16, 2: cls.U8}[code]
        except KeyError:
            raise FormatError(f"unknown quantization scheme code {code}")


def quantize(v: np.ndarray, scheme: QuantScheme) -> bytes:
    """One vector to bytes. U8 strings are prefixed with their f32 scale/offset.

    U8 is a per-vector affine code: offset = min(v), scale = (max-min)/255
    (1 when the vector is constant), code = round-half-away-from-zero of
    (x-offset)/scale.
    """
    v = np.asarray(v)
    if not np.all(np.isfinite(v)):
        raise NumericalError("quantize input")
    if scheme is QuantScheme.F32:
        return v.astype("<f4").tobytes()
    if scheme is QuantScheme.F16:
        return v.astype("<f2").tobytes()
    lo = float(v.min())
    hi = float(v.max())
    scale = (hi - lo) / 255.0 if hi > lo else 1.0
    # floor(y + 0.5) is round-half-away-from-zero for the nonnegative y here.
    codes = np.floor((v.astype(np.float64) - lo) / scale + 0.5)
    codes = np.clip(codes, 0, 255).astype(np.uint8)
    return struct.pack("<ff", np.float32(scale), np.float32(lo)) + codes.tobytes()


def dequantize(blob: bytes, scheme: QuantScheme) -> np.ndarray:
    """Inverse of quantize, always producing float32."""
    if scheme is QuantScheme.F32:
        return np.frombuffer(blob, dtype="<f4").astype(np.float32)
    if scheme is QuantScheme.F16:
        return np.frombuffer(blob, dtype="<f2").astype(np.float32)
    scale, offset = struct.unpack("<ff", blob[:8])
    codes = np.frombuffer(blob[8:], dtype=np.uint8)
    return (codes.astype(np.float32) * np.float32(scale) + np.float32(offset)).astype(
        np.float32
    )


@dataclass
class SpaceStats:
    payload_bytes: int
    metadata_bytes: int
    embeddings_stored: int
    docs: int

    @property
    def total_bytes(self) -> int:
        return self.payload_bytes + self.metadata_bytes

    @property
    def mean_entries(self) -> float:
        return self.embeddings_stored / self.docs if self.docs else 0.0

    @property
    def total_gib(self) -> float:
        return self.total_bytes / 2**30


@dataclass
class IndexRecord:
    doc_id: str
    topic_ids: tuple[int | None, ...]
    payload: list[bytes]  # one quantized string per entry

    @property
    def count(self) -> int:
        return len(self.payload)


class RepresentationIndex:
    """Immutable store of quantized document representations.

    Records keep their quantized byte strings; vectors are dequantized once
    at load/build time for scoring. Safe for concurrent readers.
    """

    def __init__(self, dim, scheme, granularity, fingerprint, records):
        self.dim = dim
        self.scheme = scheme
        self.granularity = granularity
        self.fingerprint = fingerprint
        self.records: list[IndexRecord] = records
        self.doc_ids = [r.doc_id for r in records]
        self.vectors = [
            np.vstack([dequantize(b, scheme) for b in r.payload])
            if r.payload
            else np.empty((0, dim), np.float32)
            for r in records
        ]
        self._vectors64: list[np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.records)

    def vectors64(self) -> list[np.ndarray]:
        """Per-document float64 entry matrices, cached for scoring."""
        if self._vectors64 is None:
            self._vectors64 = [v.astype(np.float64) for v in self.vectors]
        return self._vectors64

    def space_stats(self) -> SpaceStats:
        payload = 0
        metadata = struct.calcsize(_HEADER) + 4 + 32
        entries = 0
        for r in self.records:
            payload += sum(len(b) for b in r.payload)
            metadata += 2 + len(r.doc_id.encode("utf-8")) + 2 + 2 * r.count
            entries += r.count
        return SpaceStats(payload, metadata, entries, len(self.records))

    def write(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_TGIX_MAGIC)
            fh.write(struct.pack(
                _HEADER, _TGIX_VERSION, self.dim, self.scheme.code,
                _GRANULARITY_CODES[self.granularity], len(self.records),
            ))
            fh.write(self.fingerprint)
            for r in self.records:
                doc_id = r.doc_id.encode("utf-8")
                fh.write(struct.pack("<H", len(doc_id)))
                fh.write(doc_id)
                fh.write(struct.pack("<H", r.count))
                for t in r.topic_ids:
                    fh.write(struct.pack("<H", NONE_TOPIC_CODE if t is None else t))
                if self.scheme is QuantScheme.U8:
                    for b in r.payload:
                        fh.write(b[:8])
                    for b in r.payload:
                        fh.write(b[8:])
                else:
                    for b in r.payload:
                        fh.write(b)

    @classmethod
    def load(cls, path) -> "RepresentationIndex":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != _TGIX_MAGIC:
            raise FormatError(f"{path}: bad magic {blob[:4]!r}")
        header_size = struct.calcsize(_HEADER)
        version, dim, scheme_code, gran_code, count = struct.unpack(
            _HEADER, blob[4 : 4 + header_size]
        )
        if version != _TGIX_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        scheme = QuantScheme.from_code(scheme_code)
        if gran_code not in _GRANULARITY_FROM_CODE:
            raise FormatError(f"{path}: unknown granularity code {gran_code}")
        granularity = _GRANULARITY_FROM_CODE[gran_code]
        offset = 4 + header_size
        fingerprint = blob[offset : offset + 32]
        offset += 32
        records = []
        per_vec = dim * scheme.bytes_per_dim
        try:
            for _ in range(count):
                (id_len,) = struct.unpack_from("<H", blob, offset)
                offset += 2
                doc_id = blob[offset : offset + id_len].decode("utf-8")
                offset += id_len
                (n,) = struct.unpack_from("<H", blob, offset)
                offset += 2
                raw_topics = struct.unpack_from(f"<{n}H", blob, offset)
                offset += 2 * n
                topics = tuple(None if t == NONE_TOPIC_CODE else t for t in raw_topics)
                payload: list[bytes] = []
                if scheme is QuantScheme.U8:
                    pairs = [blob[offset + 8 * i : offset + 8 * (i + 1)] for i in range(n)]
                    offset += 8 * n
                    for i in range(n):
                        payload.append(pairs[i] + blob[offset : offset + per_vec])
                        offset += per_vec
                else:
                    for _ in range(n):
                        payload.append(blob[offset : offset + per_vec])
                        offset += per_vec
                records.append(IndexRecord(doc_id, topics, payload))
        except struct.error:
            raise FormatError(f"{path}: truncated file")
        if offset > len(blob):
            raise FormatError(f"{path}: truncated file")
        if offset < len(blob):
            raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
        return cls(dim, scheme, granularity, fingerprint, records)


def build_index(
    collection: dict[str, str],
    enc: Encoder,
    scheme: QuantScheme,
    granularity: Granularity,
    out_path=None,
    fingerprint: bytes = bytes(32),
    expected_fingerprint: bytes | None = None,
    threads: int = 1,
    kind: TextKind = TextKind.DOCUMENT,
) -> RepresentationIndex:
    """Encode and quantize every document, in collection order.

    Encoding is pure, so worker threads only change wall time, never bytes.
    """
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise IncompatibleArtifacts(
            "checkpoint fingerprint does not match the configured fingerprint"
        )
    doc_ids = list(collection)

    def encode_one(doc_id: str) -> Representation:
        return enc.encode_text(doc_id, collection[doc_id], kind, granularity)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(encode_one, doc_ids))
    else:
        reps = [encode_one(d) for d in doc_ids]

    records = []
    for rep in reps:
        payload = [quantize(rep.vectors[i], scheme) for i in range(rep.count)]
        records.append(IndexRecord(rep.text_id, rep.topic_ids, payload))
    index = RepresentationIndex(
        enc.params.dim, scheme, granularity, fingerprint, records
    )
    if out_path is not None:
        index.write(out_path)
    return index


def space_report(index: RepresentationIndex) -> SpaceStats:
    """Exact byte accounting recomputed by scanning the records."""
    return index.space_stats()
