from __future__ import annotations

import random
import socket

import pytest

from swarmtrace import protocol as wire
from swarmtrace.magnet import InfoHash, MagnetLink, TrackerEndpoint
from swarmtrace.mock_tracker import (
    BindFailure, FaultProfile, MockTracker, SwarmFixture, dump_fixtures, load_fixtures,
)
from swarmtrace.protocol import PeerEndpoint
from swarmtrace.ratelimit import RateLimiter
from swarmtrace.tracker_client import (
    AnnounceParams, HarvestSchedule, RetryPolicy, TokenExpired, TooManyHashes, TrackerClient,
    TrackerError, TrackerTimeout, TransactionMismatch, harvest_swarms,
)

FAST = RetryPolicy(base_timeout=15.0, max_retries=3, scale=0.002)


class FakeClock:
    def __init__(self, t: float = 0.0):
        self.t = t

    def __call__(self) -> float:
        return self.t


def random_fixture(rng: random.Random, n_peers: int | None = None) -> SwarmFixture:
    n = rng.randint(0, 60) if n_peers is None else n_peers
    peers = [PeerEndpoint(socket.inet_ntoa(rng.getrandbits(32).to_bytes(4, "big")),
                          rng.randint(1, 65535)) for _ in range(n)]
    return SwarmFixture(InfoHash(rng.randbytes(20)), peers, seeders=rng.randint(0, 9),
                        leechers=rng.randint(0, 9), completed=rng.randint(0, 9))


@pytest.fixture
def swarm():
    return random_fixture(random.Random(3), 12)


def test_retry_policy_schedule():
    assert RetryPolicy().timeouts() == [15.0, 30.0, 60.0, 120.0]
    assert RetryPolicy(scale=0.01).timeouts() == pytest.approx([0.15, 0.3, 0.6, 1.2])


def test_connect_announce_recovers_peers(swarm):
    with MockTracker([swarm]) as tracker, TrackerClient(FAST) as client:
        token = client.connect(tracker.address)
        result = client.announce(token, swarm.info_hash)
        assert result.peers == swarm.peers
        assert (result.seeders, result.leechers) == (swarm.seeders, swarm.leechers)
        sizes = {(d.action, d.size) for d in tracker.traffic}
        assert sizes == {(wire.ACTION_CONNECT, 16), (wire.ACTION_ANNOUNCE, 98)}


def test_num_want_and_peer_cap(swarm):
    with MockTracker([swarm], FaultProfile(response_peer_cap=3)) as tracker, \
            TrackerClient(FAST) as client:
        token = client.connect(tracker.address)
        assert client.announce(token, swarm.info_hash).peers == swarm.peers[:3]
    with MockTracker([swarm]) as tracker, TrackerClient(FAST) as client:
        token = client.connect(tracker.address)
        got = client.announce(token, swarm.info_hash, AnnounceParams(num_want=5))
        assert got.peers == swarm.peers[:5]


def test_retry_after_drops_matches_schedule(swarm):
    policy = RetryPolicy(scale=0.01)
    with MockTracker([swarm], FaultProfile(drop_first_n=2)) as tracker, \
            TrackerClient(policy) as client:
        client.connect(tracker.address)
        stamps = [d.at for d in tracker.traffic]
        assert [d.dropped for d in tracker.traffic] == [True, True, False]
        assert client.sent[wire.ACTION_CONNECT] == 3
    gaps = [b - a for a, b in zip(stamps, stamps[1:])]
    for gap, expected in zip(gaps, policy.timeouts()):
        assert gap == pytest.approx(expected, rel=0.2)


def test_foreign_transaction_ids_are_ignored(swarm):
    with MockTracker([swarm], FaultProfile(corrupt_transaction_id=True)) as tracker, \
            TrackerClient(FAST) as client:
        with pytest.raises(TransactionMismatch):
            client.connect(tracker.address)
        assert tracker.requests_by_action[wire.ACTION_CONNECT] == 4


def test_silent_tracker_times_out():
    sink = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sink.bind(("127.0.0.1", 0))
    try:
        with TrackerClient(RetryPolicy(max_retries=1, scale=0.002)) as client:
            with pytest.raises(TrackerTimeout) as err:
                client.connect(sink.getsockname())
            assert not isinstance(err.value, TransactionMismatch)
    finally:
        sink.close()


def test_error_reply_surfaces_message(swarm):
    with MockTracker([swarm], FaultProfile(error_message="go away")) as tracker, \
            TrackerClient(FAST) as client:
        with pytest.raises(TrackerError) as err:
            client.connect(tracker.address)
        assert err.value.message == "go away"


def test_unknown_torrent_is_tracker_error(swarm):
    with MockTracker([swarm]) as tracker, TrackerClient(FAST) as client:
        token = client.connect(tracker.address)
        with pytest.raises(TrackerError, match="unknown torrent"):
            client.announce(token, b"\x01" * 20)


def test_token_reuse_and_expiry(swarm):
    clock = FakeClock()
    with MockTracker([swarm]) as tracker, TrackerClient(FAST, clock=clock) as client:
        first = client.token_for(tracker.address)
        clock.t = 54.9
        assert client.token_for(tracker.address) is first
        clock.t = 60.0
        with pytest.raises(TokenExpired):
            client.announce(first, swarm.info_hash)
        fresh = client.token_for(tracker.address)
        assert fresh is not first and fresh.obtained_at == 60.0
        assert client.announce(fresh, swarm.info_hash).peers == swarm.peers


def test_scrape_limits_and_counts():
    rng = random.Random(5)
    swarms = [random_fixture(rng, 0) for _ in range(74)]
    with MockTracker(swarms) as tracker, TrackerClient(FAST) as client:
        token = client.connect(tracker.address)
        entries = client.scrape(token, [s.info_hash for s in swarms])
        assert [(e.seeders, e.completed, e.leechers) for e in entries] == \
            [(s.seeders, s.completed, s.leechers) for s in swarms]
        sent = client.sent[wire.ACTION_SCRAPE]
        with pytest.raises(TooManyHashes):
            client.scrape(token, [s.info_hash for s in swarms] + [b"\x00" * 20])
        with pytest.raises(TooManyHashes):
            client.scrape(token, [])
        assert client.sent[wire.ACTION_SCRAPE] == sent


def test_harvest_reconnects_after_stale_token(swarm):
    clock = FakeClock()
    faults = FaultProfile(stale_token_rejection=True)
    with MockTracker([swarm], faults, clock=clock, token_lifetime=50.0) as tracker, \
            TrackerClient(FAST, clock=clock) as client:
        magnet = MagnetLink(swarm.info_hash, None, (tracker.url,))
        first = harvest_swarms([magnet], client=client)
        clock.t = 52.0
        second = harvest_swarms([magnet], client=client)
        assert len(first.observations) == len(second.observations) == len(swarm.peers)
        assert second.failure_count == 0
        assert tracker.requests_by_action[wire.ACTION_CONNECT] == 2


def test_harvest_tallies_failures_and_skips():
    rng = random.Random(11)
    good = random_fixture(rng, 4)
    with MockTracker([good]) as tracker:
        magnets = [MagnetLink(good.info_hash, None, (tracker.url,)),
                   MagnetLink(InfoHash(rng.randbytes(20)), None, (tracker.url,)),
                   MagnetLink(InfoHash(rng.randbytes(20)), None, ("http://x.example/a",))]
        report = harvest_swarms(magnets, HarvestSchedule(concurrency=4, retry=FAST),
                                wall_clock=lambda: 1000.0)
    assert len(report.observations) == 4
    assert {o.timestamp for o in report.observations} == {1000.0}
    assert report.skipped == [magnets[2].info_hash.hex()]
    tally = report.trackers[str(TrackerEndpoint(*tracker.address))]
    assert tally.announces == 1 and tally.failures["TrackerError"] == 1


def test_harvest_never_opens_tcp(monkeypatch):
    rng = random.Random(2)
    fixtures = [random_fixture(rng, 5) for _ in range(5)]
    opened = []
    real_socket = socket.socket

    class Recording(real_socket):
        def __init__(self, family=socket.AF_INET, type=socket.SOCK_STREAM, *args, **kw):
            opened.append(type)
            super().__init__(family, type, *args, **kw)

    with MockTracker(fixtures) as tracker:
        monkeypatch.setattr(socket, "socket", Recording)
        magnets = [MagnetLink(f.info_hash, None, (tracker.url,)) for f in fixtures]
        report = harvest_swarms(magnets, HarvestSchedule(retry=FAST))
        monkeypatch.undo()
    assert len(report.observations) == 25
    assert opened and set(opened) == {socket.SOCK_DGRAM}


def test_concurrent_callers_share_one_socket():
    rng = random.Random(8)
    fixtures = [random_fixture(rng) for _ in range(30)]
    with MockTracker(fixtures) as tracker:
        magnets = [MagnetLink(f.info_hash, None, (tracker.url,)) for f in fixtures]
        report = harvest_swarms(magnets, HarvestSchedule(concurrency=8, retry=FAST))
    got = {}
    for o in report.observations:
        got.setdefault(bytes(o.info_hash), []).append(PeerEndpoint(o.ip, o.port))
    for f in fixtures:
        assert got.get(bytes(f.info_hash), []) == f.peers[:200]


def test_fixture_file_roundtrip(tmp_path):
    rng = random.Random(1)
    fixtures = [random_fixture(rng, 3) for _ in range(4)]
    path = tmp_path / "swarms.jsonl"
    dump_fixtures(path, fixtures)
    back = load_fixtures(path)
    assert [(f.info_hash, f.peers, f.seeders) for f in back] == \
        [(f.info_hash, f.peers, f.seeders) for f in fixtures]


def test_bind_failure_reported():
    with MockTracker() as first:
        with pytest.raises(BindFailure):
            MockTracker(port=first.address[1])


def test_malformed_datagram_is_dropped():
    tracker = MockTracker()
    assert tracker.handle(b"\x00\x01") is None
    assert tracker.dropped == 1
    reply = tracker.handle(wire.pack_connect_request(5)[:8] + (7).to_bytes(4, "big")
                           + (5).to_bytes(4, "big"))
    assert wire.peek(reply) == (wire.ACTION_ERROR, 5)
    tracker.shutdown()


def test_rate_limiter_spacing():
    clock = FakeClock()
    waits = []

    def sleep(s):
        waits.append(s)
        clock.t += s

    limiter = RateLimiter(4.0, clock=clock, sleep=sleep)
    for _ in range(3):
        limiter.acquire()
    assert waits == [0.25, 0.25]
    assert RateLimiter(None).acquire() == 0.0
