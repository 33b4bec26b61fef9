import json
import socket
import threading

import pytest

from lsalign.core import Vocabulary
from lsalign.scorer import (
    Direction,
    IncompatibleScorer,
    ProtocolError,
    ScorerRequest,
    ScriptedScorer,
    UnknownSegment,
    expand_sparse_row,
)
from lsalign.simulator import OracleScorer, SimConfig, generate_corpus
from lsalign.wire import PROTOCOL_VERSION, RemoteScorer, ScorerServer, row_to_wire, vocab_digest


@pytest.fixture()
def oracle_setup():
    corpus = generate_corpus(SimConfig(n_recordings=1, vocab_size=6, seed=2))
    return corpus, OracleScorer(corpus)


def test_roundtrip_matches_in_process(oracle_setup):
    corpus, oracle = oracle_setup
    rec = corpus.recordings[0]
    with ScorerServer(oracle, corpus.vocab) as server:
        with RemoteScorer(server.host, server.port, Direction.FORWARD, corpus.vocab) as remote:
            for k in range(0, 4):
                req = ScorerRequest(rec.segments[0].segment_id, Direction.FORWARD, rec.transcript.ids[:k] if k else ())
                assert remote.next_posterior(req) == oracle.next_posterior(req)


def test_digest_mismatch_raises_incompatible(oracle_setup):
    corpus, oracle = oracle_setup
    other_vocab = Vocabulary(("completely", "different"))
    with ScorerServer(oracle, corpus.vocab) as server:
        with pytest.raises(IncompatibleScorer):
            RemoteScorer(server.host, server.port, Direction.FORWARD, other_vocab)


def test_unknown_segment_over_wire(oracle_setup):
    corpus, oracle = oracle_setup
    with ScorerServer(oracle, corpus.vocab) as server:
        remote = RemoteScorer(server.host, server.port, Direction.FORWARD, corpus.vocab)
        with pytest.raises(UnknownSegment):
            remote.next_posterior(ScorerRequest("ghost", Direction.FORWARD, ()))
        remote.close()


def test_direction_binding_enforced(oracle_setup):
    corpus, oracle = oracle_setup
    with ScorerServer(oracle, corpus.vocab) as server:
        with RemoteScorer(server.host, server.port, Direction.FORWARD, corpus.vocab) as remote:
            with pytest.raises(ProtocolError):
                remote.next_posterior(ScorerRequest("x", Direction.BACKWARD, ()))


def test_serial_mode_advertised(oracle_setup):
    corpus, oracle = oracle_setup
    with ScorerServer(oracle, corpus.vocab, serial=True) as server:
        with RemoteScorer(server.host, server.port, Direction.FORWARD, corpus.vocab) as remote:
            assert remote.serial


def _raw_session(host, port, lines):
    """Send raw lines, return reply lines (one per request)."""
    replies = []
    with socket.create_connection((host, port), timeout=10) as sock:
        fp = sock.makefile("rwb")
        for line in lines:
            fp.write(line)
            fp.flush()
            replies.append(fp.readline())
    return replies


def test_replay_yields_byte_identical_response(oracle_setup):
    corpus, oracle = oracle_setup
    rec = corpus.recordings[0]
    sid = rec.segments[0].segment_id
    hello = (
        json.dumps(
            {
                "op": "hello",
                "version": PROTOCOL_VERSION,
                "vocab_sha256": vocab_digest(corpus.vocab),
                "direction": "forward",
            }
        )
        + "\n"
    ).encode()
    post = (json.dumps({"op": "post", "segment": sid, "prefix": [rec.transcript.ids[0]]}) + "\n").encode()
    with ScorerServer(oracle, corpus.vocab) as server:
        replies = _raw_session(server.host, server.port, [hello, post, post])
    assert json.loads(replies[0])["op"] == "ready"
    assert replies[1] == replies[2]
    assert json.loads(replies[1])["op"] == "row"


def test_version_mismatch_rejected(oracle_setup):
    corpus, oracle = oracle_setup
    bad_hello = (
        json.dumps(
            {
                "op": "hello",
                "version": 99,
                "vocab_sha256": vocab_digest(corpus.vocab),
                "direction": "forward",
            }
        )
        + "\n"
    ).encode()
    with ScorerServer(oracle, corpus.vocab) as server:
        replies = _raw_session(server.host, server.port, [bad_hello])
    err = json.loads(replies[0])
    assert err["op"] == "error" and err["code"] == "incompatible"


def test_malformed_response_raises_protocol_error():
    """A server that omits the eos entry violates the row contract."""

    def bad_server(sock):
        conn, _ = sock.accept()
        fp = conn.makefile("rwb")
        fp.readline()  # hello
        fp.write(b'{"op":"ready","serial":false}\n')
        fp.flush()
        fp.readline()  # post
        fp.write(b'{"op":"row","probs":{"0":0.9},"other_mass":0.1}\n')
        fp.flush()
        conn.close()

    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    sock.listen(1)
    thread = threading.Thread(target=bad_server, args=(sock,), daemon=True)
    thread.start()
    vocab = Vocabulary(("a", "b"))
    remote = RemoteScorer(*sock.getsockname(), Direction.FORWARD, vocab)
    with pytest.raises(ProtocolError, match="eos"):
        remote.next_posterior(ScorerRequest("s", Direction.FORWARD, ()))
    remote.close()
    sock.close()
    thread.join(timeout=5)


def test_server_survives_hostile_client(oracle_setup):
    """Garbage from one client errors that connection only; fresh
    connections keep working."""
    corpus, oracle = oracle_setup
    rec = corpus.recordings[0]
    with ScorerServer(oracle, corpus.vocab) as server:
        for garbage in (b"not json at all\n", b'{"op":"post"}\n', b'{"no_op":1}\n'):
            with socket.create_connection((server.host, server.port), timeout=10) as sock:
                fp = sock.makefile("rwb")
                fp.write(garbage)
                fp.flush()
                reply = fp.readline()
                assert not reply or json.loads(reply)["op"] == "error"
        with RemoteScorer(server.host, server.port, Direction.FORWARD, corpus.vocab) as remote:
            req = ScorerRequest(rec.segments[0].segment_id, Direction.FORWARD, rec.transcript.ids[:1])
            assert remote.next_posterior(req) == oracle.next_posterior(req)


def test_timeout_is_configurable():
    """A server that accepts but never answers trips the client timeout."""

    def silent_server(sock):
        conn, _ = sock.accept()
        conn.recv(4096)  # swallow the hello, never reply
        import time

        time.sleep(3.0)
        conn.close()

    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    sock.listen(1)
    thread = threading.Thread(target=silent_server, args=(sock,), daemon=True)
    thread.start()
    vocab = Vocabulary(("a", "b"))
    with pytest.raises(ProtocolError):
        RemoteScorer(*sock.getsockname(), Direction.FORWARD, vocab, timeout_sec=0.4)
    sock.close()


def test_row_wire_encoding_roundtrip():
    row = expand_sparse_row({"0": 0.25, "1": 0.5, "eos": 0.25}, 0.0, 2)
    wire = row_to_wire(row)
    rebuilt = expand_sparse_row(wire["probs"], wire["other_mass"], 2)
    assert rebuilt == row


def test_concurrent_connections(oracle_setup):
    corpus, oracle = oracle_setup
    rec = corpus.recordings[0]
    sid = rec.segments[0].segment_id
    with ScorerServer(oracle, corpus.vocab) as server:
        results = {}

        def worker(direction):
            with RemoteScorer(server.host, server.port, direction, corpus.vocab) as remote:
                req = ScorerRequest(sid, direction, ())
                if direction is Direction.FORWARD:
                    req = ScorerRequest(sid, direction, rec.transcript.ids[:1])
                results[direction] = remote.next_posterior(req)

        threads = [threading.Thread(target=worker, args=(d,)) for d in Direction]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=10)
        for direction, row in results.items():
            req = ScorerRequest(sid, direction, rec.transcript.ids[:1] if direction is Direction.FORWARD else ())
            assert row == oracle.next_posterior(req)


def test_scripted_scorer_over_wire(tmp_path):
    vocab = Vocabulary(("a", "b", "c"))
    rows = {
        ("s", Direction.BACKWARD, ()): expand_sparse_row({"2": 0.9, "eos": 0.05}, 0.05, 3),
    }
    scorer = ScriptedScorer(rows, vocab.size)
    with ScorerServer(scorer, vocab) as server:
        with RemoteScorer(server.host, server.port, Direction.BACKWARD, vocab) as remote:
            got = remote.next_posterior(ScorerRequest("s", Direction.BACKWARD, ()))
            assert got == rows[("s", Direction.BACKWARD, ())]
