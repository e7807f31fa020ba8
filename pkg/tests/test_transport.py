import struct
import threading
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ppadmm import transport as tp


def test_envelope_layout():
    frame = tp.Envelope(tp.Tag.XCipher, 7, 3, b"ab").encode()
    # 4-byte length, 1-byte tag, 2-byte session, 4-byte iteration, payload
    assert frame == struct.pack("!IBHI", 9, 5, 7, 3) + b"ab"


@given(st.sampled_from(list(tp.Tag)), st.integers(0, 2 ** 16 - 1), st.integers(0, 2 ** 32 - 1),
       st.binary(max_size=64))
def test_envelope_round_trip(tag, session, it, payload):
    env = tp.Envelope(tag, session, it, payload)
    assert tp.Envelope.decode(env.encode()) == env


def test_envelope_errors():
    good = tp.Envelope(tp.Tag.Done, 1, 1, b"x").encode()
    with pytest.raises(tp.FrameError):
        tp.Envelope.decode(good[:5])
    with pytest.raises(tp.FrameError):
        tp.Envelope.decode(good + b"y")
    with pytest.raises(tp.FrameError):
        tp.Envelope.decode(good[:4] + b"\x63" + good[5:])
    with pytest.raises(tp.FrameError):
        tp.Envelope.decode(good, cap=4)
    with pytest.raises(tp.FrameError):
        tp.Envelope(tp.Tag.Done, 1 << 16, 0).encode()


@given(st.lists(st.integers(min_value=0, max_value=1 << 4200), max_size=8))
def test_ints_round_trip(values):
    buf = tp.encode_ints(values)
    assert tp.decode_ints(buf) == (values, len(buf))


def test_vectors_and_trailing_bytes():
    buf = tp.encode_vectors([1, 2], [3])
    assert tp.decode_vectors(buf, 2) == [[1, 2], [3]]
    with pytest.raises(tp.FrameError):
        tp.decode_vectors(buf + b"\x00", 2)
    with pytest.raises(tp.FrameError):
        tp.decode_ints(b"\x00\x00\x00\x05")


def test_matrix_round_trip_and_nan():
    m = np.arange(6, dtype=float).reshape(2, 3) / 7
    out, off = tp.decode_matrix(tp.encode_matrix(m))
    assert np.array_equal(out, m) and off == 8 + 48
    with pytest.raises(tp.FrameError):
        tp.encode_matrix([[float("nan")]])
    with pytest.raises(tp.FrameError):
        tp.decode_matrix(tp.encode_matrix(m)[:-1])


def test_text_round_trip():
    buf = tp.encode_text("K=3\n")
    assert tp.decode_text(buf) == ("K=3\n", len(buf))


def _exchange(net):
    m, e = net.master_ends[0], net.edge_ends[0]
    for i in range(3):
        m.send(tp.Envelope(tp.Tag.ZVCipher, 1, i, tp.encode_ints([i, i + 1])))
    got = [e.recv(5).envelope for _ in range(3)]
    e.send(tp.Envelope(tp.Tag.XCipher, 1, 9, b""))
    back = m.recv(5)
    return got, back


@pytest.mark.parametrize("kind", ["sim", "tcp"])
def test_carriers_deliver_in_order(kind):
    net = tp.make_network(kind, 2)
    try:
        got, back = _exchange(net)
        assert [g.iteration for g in got] == [0, 1, 2]
        assert tp.decode_ints(got[2].payload)[0] == [2, 3]
        assert back.envelope.tag == tp.Tag.XCipher
        assert len(net.transcript.envelopes(src="master")) == 3
    finally:
        net.close()


def test_sim_latency_injected():
    net = tp.SimulatedNetwork(1, tp.LatencyModel(20.0))
    try:
        start = time.monotonic()
        net.master_ends[0].send(tp.Envelope(tp.Tag.Done, 1, 0))
        d = net.edge_ends[0].recv(5)
        assert time.monotonic() - start >= 0.019
        assert d.delivered_at - d.sent_at == pytest.approx(0.020, abs=1e-6)
    finally:
        net.close()


def test_sim_jitter_keeps_order():
    net = tp.SimulatedNetwork(1, tp.LatencyModel(1.0, 5.0), seed=3)
    try:
        for i in range(20):
            net.master_ends[0].send(tp.Envelope(tp.Tag.Done, 1, i))
        assert [net.edge_ends[0].recv(5).envelope.iteration for _ in range(20)] == list(range(20))
    finally:
        net.close()


def test_timeout_and_close():
    net = tp.SimulatedNetwork(1)
    with pytest.raises(tp.TransportTimeout):
        net.edge_ends[0].recv(0.05)
    net.master_ends[0].close()
    with pytest.raises(tp.ConnectionClosed):
        net.edge_ends[0].recv(1)


def test_frame_cap_enforced():
    net = tp.SimulatedNetwork(1, frame_cap=16)
    with pytest.raises(tp.FrameError):
        net.master_ends[0].send(tp.Envelope(tp.Tag.Done, 1, 0, b"x" * 64))


def test_tcp_edges_identified_by_index():
    net = tp.TcpNetwork(3)
    try:
        for k in range(3):
            net.edge_ends[k].send(tp.Envelope(tp.Tag.BMatrix, 1, k))
        assert [net.master_ends[k].recv(5).envelope.iteration for k in range(3)] == [0, 1, 2]
    finally:
        net.close()


def test_tcp_peer_close_detected():
    net = tp.TcpNetwork(1)
    try:
        net.edge_ends[0].close()
        with pytest.raises((tp.ConnectionClosed, ConnectionError)):
            net.master_ends[0].recv(2)
    finally:
        net.close()


def test_unknown_carrier():
    with pytest.raises(ValueError):
        tp.make_network("udp", 1)
