import socket
import threading
import time

from qasm.agent import (
    AgentConfig,
    AgentServer,
    InProcessAgentLink,
    PushListener,
    TrackingAgent,
    UdpAgentLink,
)
from qasm.agent.protocol import ClientUpdate, ConnClose, PushUpdate, Query, Subscribe, decode, encode
from qasm.tracking import Endpoint, FiveTuple, Protocol
from qasm.wire import ConnectionId

SERVER = Endpoint("93.184.216.34", 443)
MBOX = Endpoint("10.255.0.1", 7000)


def update(dcid, o, port, ip="10.0.0.45"):
    return ClientUpdate(ConnectionId(dcid), ConnectionId(o), FiveTuple(Protocol.UDP, Endpoint(ip, port), SERVER))


def recording_agent(**kw):
    sent = []
    agent = TrackingAgent(outbox=lambda dest, data: sent.append((dest, decode(data))), **kw)
    return agent, sent


def test_query_by_dcid_then_by_address():
    agent, _ = recording_agent()
    agent.handle_client_update(update(b"o", b"o", 1))
    agent.handle_client_update(update(b"d1", b"o", 2))
    hit = agent.handle_query(Query(ConnectionId(b"d1"), Endpoint("10.0.0.45", 2), SERVER))
    assert hit.record.o_dcid == b"o" and hit.record.dcids == (b"o", b"d1")
    # unknown dcid, known source address
    hit = agent.handle_query(Query(ConnectionId(b"zz"), Endpoint("10.0.0.45", 1), SERVER))
    assert hit.found and hit.record.o_dcid == b"o"
    miss = agent.handle_query(Query(ConnectionId(b"zz"), Endpoint("10.9.9.9", 1), SERVER))
    assert not miss.found
    assert agent.stats["query_misses"] == 1


def test_subscribe_known_pushes_once():
    agent, sent = recording_agent()
    agent.handle_client_update(update(b"o", b"o", 1))
    assert agent.handle_subscribe(Subscribe(ConnectionId(b"o"), MBOX))
    assert not agent.handle_subscribe(Subscribe(ConnectionId(b"o"), MBOX))
    assert [dest for dest, _ in sent] == [MBOX]
    agent.handle_client_update(update(b"d1", b"o", 2))
    assert len(sent) == 2
    seqs = [msg.seq for _, msg in sent]
    assert seqs == sorted(seqs) and len(set(seqs)) == 2
    assert sent[-1][1].record.dcids == (b"o", b"d1")


def test_parked_subscription_promoted_by_new_dcid():
    agent, sent = recording_agent()
    agent.handle_client_update(update(b"o", b"o", 1))
    # a middlebox sees the new DCID before the client reported it
    agent.handle_subscribe(Subscribe(ConnectionId(b"d1"), MBOX))
    assert sent == []
    agent.handle_client_update(update(b"d1", b"o", 2))
    assert len(sent) == 1 and sent[0][1].record.o_dcid == b"o"


def test_reactive_agent_never_pushes():
    agent, sent = recording_agent(proactive=False)
    agent.handle_client_update(update(b"o", b"o", 1))
    agent.handle_subscribe(Subscribe(ConnectionId(b"o"), MBOX))
    agent.handle_client_update(update(b"d", b"o", 2))
    # the subscribe-time snapshot is the only push; updates are not fanned out
    assert len(sent) == 1 and isinstance(sent[0][1], PushUpdate)
    assert sent[0][1].record.dcids == (b"o",)


def test_collision_and_malformed_are_counted():
    agent, _ = recording_agent()
    agent.handle_client_update(update(b"x", b"A", 1))
    assert agent.handle_client_update(update(b"x", b"B", 2)) is None
    agent.dispatch_client(b"\x01\x05")
    agent.dispatch_client(encode(Query(ConnectionId(b"a"), MBOX, MBOX)))
    assert agent.drops == {"dcid_collision": 1, "malformed": 1, "wrong_api": 1}
    assert agent.dispatch_middlebox(encode(update(b"a", b"a", 1))) is None
    assert agent.drops["wrong_api"] == 2


def test_close_forgets_connection():
    agent, _ = recording_agent()
    agent.dispatch_client(encode(update(b"o", b"o", 1)))
    agent.dispatch_client(encode(ConnClose(ConnectionId(b"o"))))
    assert not agent.handle_query(Query(ConnectionId(b"o"), Endpoint("10.0.0.45", 1), SERVER)).found


def test_in_process_link_goes_through_the_codec():
    agent, _ = recording_agent()
    agent.handle_client_update(update(b"o", b"o", 1))
    link = InProcessAgentLink(agent)
    assert link.query(Query(ConnectionId(b"o"), Endpoint("10.0.0.45", 1), SERVER)).record.o_dcid == b"o"


def test_udp_server_end_to_end():
    pushes = []
    got = threading.Event()

    def on_push(msg):
        pushes.append(msg)
        got.set()

    with AgentServer(AgentConfig()) as server:
        listener = PushListener(on_push).start()
        link = UdpAgentLink(server.middlebox_address, timeout=1.0)
        try:
            with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as client:
                client.sendto(encode(update(b"o", b"o", 1)), server.client_address)
            deadline = time.monotonic() + 2
            resp = None
            while time.monotonic() < deadline:
                resp = link.query(Query(ConnectionId(b"o"), Endpoint("10.0.0.45", 1), SERVER))
                if resp is not None and resp.found:
                    break
                time.sleep(0.01)
            assert resp.record.o_dcid == b"o"
            link.subscribe(Subscribe(ConnectionId(b"o"), listener.endpoint))
            assert got.wait(2)
            assert pushes[0].record.o_dcid == b"o"
        finally:
            link.close()
            listener.stop()


def test_udp_link_times_out_without_agent():
    dead = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    dead.bind(("127.0.0.1", 0))
    link = UdpAgentLink(dead.getsockname(), timeout=0.02)
    try:
        assert link.query(Query(ConnectionId(b"o"), MBOX, MBOX)) is None
        assert link.timeouts == 1
    finally:
        link.close()
        dead.close()
