import threading
import time

import pytest

from fedchain.stream import EventStream, MessageKind, QuorumTimeout, StreamError, StreamMessage, UnknownSender

TOPIC = "local-updates"


def local(sender, round=1):
    return StreamMessage(round, MessageKind.LocalUpdate, sender, bytes([sender]) * 32)


@pytest.fixture
def stream():
    s = EventStream(default_timeout=1.0)
    for i in range(10):
        s.register(i)
    return s


def test_publish_offsets_and_read(stream):
    assert stream.publish(TOPIC, local(1)) == 0
    assert stream.publish(TOPIC, local(2)) == 1
    (msg,) = stream.read_from(TOPIC, 1)
    assert msg.sender_id == 2 and msg.offset == 1
    assert stream.read_from(TOPIC, 0) == stream.read_from(TOPIC, 0)
    assert stream.read_from(TOPIC, 2) == []
    with pytest.raises(StreamError):
        stream.read_from(TOPIC, 3)


def test_unknown_sender(stream):
    with pytest.raises(UnknownSender):
        stream.publish(TOPIC, local(42))


def test_global_versions_increase(stream):
    for v in (1, 2, 3):
        stream.publish("global", StreamMessage(v, MessageKind.GlobalUpdate, 0, bytes(32), v))
    with pytest.raises(StreamError):
        stream.publish("global", StreamMessage(4, MessageKind.GlobalUpdate, 0, bytes(32), 3))
    # a straggler catching up sees every retained version in order
    assert [m.version for m in stream.read_from("global", 0)] == [1, 2, 3]


def test_quorum_earliest_distinct(stream):
    for s in (4, 2, 4, 7, 1, 3):
        stream.publish(TOPIC, local(s))
    stream.publish(TOPIC, local(9, round=2))
    picked = stream.await_quorum(TOPIC, 1, 3)
    assert [m.sender_id for m in picked] == [4, 2, 7]
    assert [m.offset for m in picked] == [0, 1, 3]
    assert stream.await_quorum(TOPIC, 1, 3) == picked


def test_quorum_timeout_reports_missing(stream):
    for s in range(4):
        stream.publish(TOPIC, local(s))
    t0 = time.monotonic()
    with pytest.raises(QuorumTimeout) as err:
        stream.await_quorum(TOPIC, 1, 5, timeout=0.2)
    assert time.monotonic() - t0 >= 0.2
    assert err.value.missing == 1 and "1" in str(err.value)


def test_quorum_waits_for_late_publisher(stream):
    for s in range(2):
        stream.publish(TOPIC, local(s))
    threading.Timer(0.1, lambda: stream.publish(TOPIC, local(5))).start()
    picked = stream.await_quorum(TOPIC, 1, 3, timeout=5)
    assert [m.sender_id for m in picked] == [0, 1, 5]


def test_concurrent_publishers_dense_offsets(stream):
    def worker(i):
        for j in range(100):
            stream.publish(TOPIC, StreamMessage(j, MessageKind.LocalUpdate, i, bytes(32)))

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    log = stream.read_from(TOPIC, 0)
    assert [m.offset for m in log] == list(range(800))
    assert sorted((m.sender_id, m.round) for m in log) == sorted((i, j) for i in range(8) for j in range(100))
