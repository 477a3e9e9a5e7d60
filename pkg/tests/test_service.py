import socket
import struct
import threading
import time

import numpy as np
import pytest

from staa import service
from staa.attribution import EnhancementParams, explain
from staa.errors import ProtocolError
from staa.service import (
    BatchPayload, ExplanationPayload, ExplanationServer, WireMessage,
    decode_batch, decode_error, decode_explanation, decode_message,
    encode_batch, encode_error, encode_explanation, encode_message,
    send_shutdown, stream_client,
)
from staa.videoio import ClipSpec, VideoClip, generate_clip


def test_message_round_trip_all_types():
    rng = np.random.default_rng(0)
    for msg_type in (service.MSG_BATCH, service.MSG_EXPLANATION,
                     service.MSG_ERROR, service.MSG_SHUTDOWN):
        for _ in range(50):
            payload = rng.bytes(int(rng.integers(0, 200)))
            msg = WireMessage(msg_type, payload)
            decoded, consumed = decode_message(encode_message(msg))
            assert decoded == msg
            assert consumed == 10 + len(payload)


def test_bad_magic_rejected():
    data = b"XXXX" + encode_message(WireMessage(service.MSG_BATCH, b""))[4:]
    with pytest.raises(ProtocolError) as err:
        decode_message(data)
    assert err.value.code == service.ERR_BAD_MAGIC


def test_bad_version_rejected():
    good = bytearray(encode_message(WireMessage(service.MSG_BATCH, b"")))
    good[4] = 9
    with pytest.raises(ProtocolError) as err:
        decode_message(bytes(good))
    assert err.value.code == service.ERR_BAD_VERSION


def test_unknown_type_rejected():
    good = bytearray(encode_message(WireMessage(service.MSG_BATCH, b"")))
    good[5] = 77
    with pytest.raises(ProtocolError) as err:
        decode_message(bytes(good))
    assert err.value.code == service.ERR_UNKNOWN_TYPE


def test_truncated_payload_rejected():
    data = encode_message(WireMessage(service.MSG_BATCH, b"abcdef"))[:-2]
    with pytest.raises(ProtocolError) as err:
        decode_message(data)
    assert err.value.code == service.ERR_TRUNCATED


def test_batch_payload_round_trip(clip):
    batch = BatchPayload(batch_id=7, frames=clip.frames, send_timestamp_us=123456)
    back = decode_batch(encode_batch(batch))
    assert back.batch_id == 7
    assert back.send_timestamp_us == 123456
    assert np.array_equal(back.frames, clip.frames)


def test_batch_payload_pixel_mismatch(clip):
    payload = encode_batch(BatchPayload(1, clip.frames, 0))[:-10]
    with pytest.raises(ProtocolError) as err:
        decode_batch(payload)
    assert err.value.code == service.ERR_MALFORMED_PAYLOAD


def test_explanation_payload_round_trip():
    rng = np.random.default_rng(1)
    expl = ExplanationPayload(
        batch_id=9, predicted_class=3, probability=0.75,
        temporal=rng.random(8), spatial=rng.random((4, 8)),
        server_process_us=2222)
    back = decode_explanation(encode_explanation(expl))
    assert back.batch_id == 9 and back.predicted_class == 3
    assert back.probability == 0.75
    assert np.array_equal(back.temporal, expl.temporal)
    assert np.array_equal(back.spatial, expl.spatial)


def test_error_payload_round_trip():
    code, text = decode_error(encode_error(service.ERR_BAD_MAGIC, "nope"))
    assert code == service.ERR_BAD_MAGIC and text == "nope"


@pytest.fixture
def server(model):
    srv = ExplanationServer(model, EnhancementParams(), queue_capacity=16)
    srv.start()
    yield srv
    srv.stop()


def test_loopback_round_trip_matches_offline(model, server, clip):
    log = stream_client(server.address, clip, batch_size=8, repeats=5)
    assert len(log.records) == 5
    assert log.drop_count == 0
    offline = explain(model, VideoClip(frames=clip.frames, clip_id="x"),
                      EnhancementParams())
    for record in log.records:
        expl = record.explanation
        assert record.latency_ms >= 0.0
        assert np.array_equal(expl.spatial, np.asarray(offline.spatial))
        assert np.array_equal(expl.temporal, np.asarray(offline.temporal))
        assert expl.predicted_class == offline.predicted_class


def test_batch_ids_unique(model, server, clip):
    log = stream_client(server.address, clip, batch_size=8, repeats=10)
    ids = [r.explanation.batch_id for r in log.records if not r.dropped]
    assert sorted(ids) == list(range(10))


def test_server_reports_bad_magic(server):
    sock = socket.create_connection(server.address, timeout=5)
    sock.sendall(b"YYYY" + struct.pack(">BBI", 1, 0, 0))
    head = _read_exact(sock, 10)
    magic, version, msg_type, length = struct.unpack(">4sBBI", head)
    assert msg_type == service.MSG_ERROR
    code, _ = decode_error(_read_exact(sock, length))
    assert code == service.ERR_BAD_MAGIC
    sock.close()


def test_server_reports_malformed_batch_and_keeps_connection(server, clip):
    sock = socket.create_connection(server.address, timeout=5)
    # truncated pixel data
    bad = encode_batch(BatchPayload(1, clip.frames, 0))[:-4]
    sock.sendall(encode_message(WireMessage(service.MSG_BATCH, bad)))
    head = _read_exact(sock, 10)
    _, _, msg_type, length = struct.unpack(">4sBBI", head)
    assert msg_type == service.MSG_ERROR
    code, _ = decode_error(_read_exact(sock, length))
    assert code == service.ERR_MALFORMED_PAYLOAD
    # connection still serves good batches
    good = BatchPayload(2, clip.frames, 0)
    sock.sendall(encode_message(WireMessage(service.MSG_BATCH, encode_batch(good))))
    head = _read_exact(sock, 10)
    _, _, msg_type, length = struct.unpack(">4sBBI", head)
    assert msg_type == service.MSG_EXPLANATION
    expl = decode_explanation(_read_exact(sock, length))
    assert expl.batch_id == 2
    sock.close()


def test_shutdown_message_stops_server(model):
    srv = ExplanationServer(model, queue_capacity=4)
    srv.start()
    send_shutdown(srv.address)
    deadline = time.monotonic() + 5
    while not srv._shutdown.is_set() and time.monotonic() < deadline:
        time.sleep(0.01)
    assert srv._shutdown.is_set()


def test_queue_drops_oldest():
    q = service._DropOldestQueue(2)
    q.put(1)
    q.put(2)
    q.put(3)
    assert q.dropped == 1
    assert q.get() == 2
    assert q.get() == 3


def test_bench_latency(model, tmp_path):
    cdf = tmp_path / "cdf.csv"
    log, summary = service.bench_latency(model, 20, cdf_path=cdf)
    assert log.drop_count == 0
    assert "p50" in summary
    rows = cdf.read_text().strip().splitlines()[1:]
    assert len(rows) == 20


def test_bench_latency_zero_batches(model):
    with pytest.raises(ProtocolError):
        service.bench_latency(model, 0)


def _read_exact(sock, count):
    data = b""
    while len(data) < count:
        chunk = sock.recv(count - len(data))
        assert chunk, "connection closed early"
        data += chunk
    return data
