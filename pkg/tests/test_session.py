import json

import numpy as np
import pytest
from websockets.sync.client import connect

from keratome.demos import DemoStore, scripted_expert
from keratome.env import EnvConfig
from keratome.eye import SectorId
from keratome.rendering import ObservationConfig
from keratome.session import (
    PROTOCOL_VERSION,
    ServerThread,
    SessionServer,
    decode_tick_bundle,
    encode_tick_bundle,
)

FAST_OBS = ObservationConfig(width=16, height=16)


@pytest.fixture()
def server(tmp_path):
    cfg = EnvConfig.high_poly(observation=FAST_OBS, max_steps=60)
    store = DemoStore(tmp_path / "demos")
    srv = SessionServer(cfg, store, tick_rate=0.0)  # unpaced for tests
    thread = ServerThread(srv)
    port = thread.start()
    yield srv, store, port
    thread.stop()


@pytest.fixture()
def lockstep_server(tmp_path):
    cfg = EnvConfig.high_poly(observation=FAST_OBS)
    store = DemoStore(tmp_path / "demos-lockstep")
    srv = SessionServer(cfg, store, tick_rate=0.0, lockstep=True)
    thread = ServerThread(srv)
    port = thread.start()
    yield srv, store, port
    thread.stop()


class Client:
    """Minimal scripted protocol client standing in for the browser console."""

    def __init__(self, port, version=PROTOCOL_VERSION):
        self.ws = connect(f"ws://127.0.0.1:{port}", max_size=None)
        self.hello = json.loads(self.ws.recv())
        assert self.hello["type"] == "hello"
        self.ws.send(json.dumps({"type": "hello", "version": version}))

    def control(self, op, **kw):
        self.ws.send(json.dumps({"type": "control", "op": op, **kw}))

    def action(self, tick, delta):
        self.ws.send(json.dumps({"type": "action", "tick": tick, "delta": list(delta)}))

    def recv(self, timeout=30):
        msg = self.ws.recv(timeout=timeout)
        if isinstance(msg, bytes):
            return decode_tick_bundle(msg)
        return json.loads(msg)

    def recv_json(self, timeout=30):
        while True:
            msg = self.recv(timeout)
            if isinstance(msg, dict) and "type" in msg:
                return msg

    def close(self):
        self.ws.close()


class TestCodec:
    def test_bundle_round_trip(self):
        from keratome.env import CataractEnv

        cfg = EnvConfig.high_poly(observation=FAST_OBS)
        env = CataractEnv(cfg)
        obs = env.reset(seed=0)
        raw = encode_tick_bundle(7, obs, 3, 20, 1, -0.5)
        out = decode_tick_bundle(raw)
        assert out["tick"] == 7
        assert out["hit_c"] == 3
        assert out["beta"] == 20
        assert out["event"] == 1
        assert out["reward"] == pytest.approx(-0.5, rel=1e-6)
        assert out["distance"] == pytest.approx(obs.distance, rel=1e-6)
        assert np.allclose(out["tool_state"], obs.tool_state)
        assert len(out["frames"]) == 3
        assert out["frames"][0].shape == (16, 16, 1)
        expected = np.clip(np.round(obs.frames[0] * 255), 0, 255).astype(np.uint8)
        assert np.array_equal(out["frames"][0], expected)

    def test_version_check(self):
        cfg = EnvConfig.high_poly(observation=FAST_OBS)
        from keratome.env import CataractEnv
        from keratome.session import SessionError

        env = CataractEnv(cfg)
        obs = env.reset(seed=0)
        raw = bytearray(encode_tick_bundle(0, obs, 0, 20, 0, 0.0))
        raw[0] = 99
        with pytest.raises(SessionError):
            decode_tick_bundle(bytes(raw))


class TestSessionService:
    def test_hello_handshake_and_zero_action_stream(self, server):
        _, _, port = server
        client = Client(port)
        assert client.hello["version"] == PROTOCOL_VERSION
        assert client.hello["cameras"] == ["Top", "UpperSide", "UpperCorner"]
        client.control("start", seed=3)
        info = client.recv_json()
        assert info["type"] == "info" and info["seed"] == 3
        ticks = []
        k_time = 0.001
        for _ in range(5):
            bundle = client.recv()
            ticks.append(bundle["tick"])
            # stationary tool: shaping reward is exactly -k_time
            assert bundle["reward"] == pytest.approx(-k_time, abs=1e-6)
            assert bundle["event"] == 0
        assert ticks == list(range(5))
        client.control("abort")
        client.close()

    def test_version_mismatch_rejected(self, server):
        _, _, port = server
        ws = connect(f"ws://127.0.0.1:{port}", max_size=None)
        hello = json.loads(ws.recv())
        assert hello["type"] == "hello"
        ws.send(json.dumps({"type": "hello", "version": 999}))
        reply = json.loads(ws.recv())
        assert reply["type"] == "error"
        assert "version" in reply["reason"]
        ws.close()

    def test_second_connection_busy(self, server):
        _, _, port = server
        first = Client(port)
        second = connect(f"ws://127.0.0.1:{port}", max_size=None)
        msg = json.loads(second.recv())
        assert msg["type"] == "busy"
        second.close()
        first.close()

    def test_malformed_message_keeps_session(self, server):
        _, _, port = server
        client = Client(port)
        client.ws.send("this is not json")
        err = client.recv_json()
        assert err["type"] == "error"
        client.control("start", seed=1)
        assert client.recv_json()["type"] == "info"
        bundle = client.recv()
        assert bundle["tick"] == 0
        client.control("abort")
        client.close()

    def test_save_rejected_without_success(self, server):
        _, _, port = server
        client = Client(port)
        client.control("save", surgeon_id="dr", target_sector="LEFT1")
        msg = client.recv_json()
        assert msg["type"] == "save_rejected"
        assert "no finished episode" in msg["reason"]
        client.close()

    def test_scripted_replay_saves_human_demo(self, lockstep_server):
        srv, store, port = lockstep_server
        # derive an expert action stream for a known seed, then replay it live
        demo = scripted_expert(srv.config, SectorId.LEFT2, seed=11)
        client = Client(port)
        client.control("start", seed=11)
        assert client.recv_json()["type"] == "info"
        outcome = None
        tick = 0
        while outcome is None:
            client.action(tick, demo.steps[min(tick, len(demo.steps) - 1)].action.as_array())
            msg = client.recv()
            if "type" in msg and msg.get("type") == "episode_end":
                outcome = msg
                break
            assert msg["tick"] == tick
            tick += 1
            if msg["event"] in (2, 3):  # SUCCESS / FAIL: episode_end follows
                outcome = client.recv_json()
        assert outcome["outcome"] == "SUCCESS"
        assert outcome["steps"] == len(demo.steps)
        client.control("save", surgeon_id="dr-live", target_sector="LEFT2")
        ack = client.recv_json()
        assert ack["type"] == "save_ack", ack
        assert ack["valid"] is True
        assert ack["entry_sector"] == "LEFT2"
        stored = store.load(ack["demo_id"])
        assert stored.source == "Human"
        assert stored.surgeon_id == "dr-live"
        # the saved human demo passes the validation gate again offline
        from keratome.demos import validate_demo

        report = validate_demo(srv.config, stored)
        assert report.valid and report.entry_sector == "LEFT2"
        client.close()

    def test_stale_actions_dropped(self, server):
        # staleness is judged on receipt, independent of episode state
        _, _, port = server
        client = Client(port)
        client.action(100, [0.05, 0, 0, 0, 0, 0])
        client.action(5, [0.0, 0.09, 0, 0, 0, 0])  # stale: tick 5 < 100
        err = client.recv_json()
        assert err["type"] == "error" and "stale" in err["reason"]
        client.close()

    def test_gapless_ticks_across_episodes(self, server):
        _, _, port = server
        client = Client(port)
        seen = []
        for seed in (4, 5):
            client.control("reset", seed=seed)
            msg = client.recv_json()
            assert msg["type"] == "info"
            while True:
                msg = client.recv()
                if "frames" in msg:
                    seen.append(msg["tick"])
                elif msg.get("type") == "episode_end":
                    break
        assert seen == list(range(len(seen)))
        assert len(seen) == 120  # two timeout episodes at max_steps=60
        client.close()
