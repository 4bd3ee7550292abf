"""Wire encodings for bus payloads (little endian)."""
from __future__ import annotations

import struct

import numpy as np

from scouttask.belief import DetectionBatch
from scouttask.posegraph.g2o import read_g2o, write_g2o
from scouttask.posegraph.graph import PoseGraph
from scouttask.posegraph.scan import CompressedScan, make_scan

DETECTION_RECORD = np.dtype([
    ("seq", "<u8"), ("x", "<u2"), ("y", "<u2"), ("positive", "u1"),
    ("p_detect", "<f4"), ("p_false", "<f4"),
])


class CodecError(ValueError):
    pass


def _put_str(s: str) -> bytes:
    b = s.encode()
    return struct.pack("<H", len(b)) + b


def _get_str(data: bytes, off: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("<H", data, off)
    off += 2
    return data[off:off + n].decode(), off + n


def _expect(data: bytes, magic: bytes) -> None:
    if data[:4] != magic:
        raise CodecError(f"expected {magic!r} payload")


def encode_detections(batch: DetectionBatch) -> bytes:
    rec = np.empty(len(batch), dtype=DETECTION_RECORD)
    rec["seq"] = batch.seq
    rec["x"] = batch.xs
    rec["y"] = batch.ys
    rec["positive"] = batch.positive
    rec["p_detect"] = batch.p_detect
    rec["p_false"] = batch.p_false
    head = b"DET1" + _put_str(batch.origin_robot) + _put_str(batch.sensor_kind)
    return head + struct.pack("<II", batch.tick, len(batch)) + rec.tobytes()


def decode_detections(data: bytes) -> DetectionBatch:
    _expect(data, b"DET1")
    origin, off = _get_str(data, 4)
    kind, off = _get_str(data, off)
    tick, n = struct.unpack_from("<II", data, off)
    off += 8
    rec = np.frombuffer(data, dtype=DETECTION_RECORD, count=n, offset=off)
    return DetectionBatch(
        origin_robot=origin,
        seq=rec["seq"].astype(np.int64),
        xs=rec["x"].astype(np.int64),
        ys=rec["y"].astype(np.int64),
        positive=rec["positive"].astype(bool),
        p_detect=rec["p_detect"].astype(np.float64),
        p_false=rec["p_false"].astype(np.float64),
        sensor_kind=kind,
        tick=tick,
    )


def encode_scan(scan: CompressedScan) -> bytes:
    """Landmarks travel as float32; the signature is rebuilt by the receiver."""
    pts = np.asarray(scan.landmarks, dtype="<f4")
    head = b"SCN1" + _put_str(scan.origin_robot)
    head += struct.pack("<qIIfHH", scan.node_id, scan.scan_id, scan.tick,
                        scan.signature_range, scan.signature.shape[0], pts.shape[0])
    return head + pts.tobytes()


def decode_scan(data: bytes) -> CompressedScan:
    _expect(data, b"SCN1")
    origin, off = _get_str(data, 4)
    node_id, scan_id, tick, srange, bins, n = struct.unpack_from("<qIIfHH", data, off)
    off += struct.calcsize("<qIIfHH")
    pts = np.frombuffer(data, dtype="<f4", count=2 * n, offset=off).reshape(n, 2)
    return make_scan(origin, node_id, pts.astype(np.float64), bins=bins,
                     signature_range=float(srange), scan_id=scan_id, tick=tick)


def encode_pose_graph(graph: PoseGraph) -> bytes:
    return b"PGR1" + write_g2o(graph).encode()


def decode_pose_graph(data: bytes) -> PoseGraph:
    _expect(data, b"PGR1")
    return read_g2o(data[4:].decode())


def encode_confirmations(origin: str, tick: int, confirmed: list[tuple[str, tuple[int, int]]]) -> bytes:
    out = [b"CNF1", _put_str(origin), struct.pack("<IH", tick, len(confirmed))]
    for tid, (x, y) in confirmed:
        out.append(_put_str(tid) + struct.pack("<HH", x, y))
    return b"".join(out)


def decode_confirmations(data: bytes) -> tuple[str, int, list[tuple[str, tuple[int, int]]]]:
    _expect(data, b"CNF1")
    origin, off = _get_str(data, 4)
    tick, n = struct.unpack_from("<IH", data, off)
    off += 6
    items = []
    for _ in range(n):
        tid, off = _get_str(data, off)
        x, y = struct.unpack_from("<HH", data, off)
        off += 4
        items.append((tid, (x, y)))
    return origin, tick, items
