"""Interactive demonstration-session service.

One operator at a time steers the incision tool over a persistent WebSocket:
JSON text frames carry control/handshake/status messages, binary frames carry
the per-tick bundle (three camera images, tool state, distance, reward and
counters). Completed episodes ending in success can be saved as human-source
demonstrations after passing the standard validation gate.

Binary tick bundle layout (little-endian), see docs/formats.md:
  u8 version | u8 n_cams | u16 width | u16 height | u8 channels |
  u8 event | u64 tick | u32 hit_c | u32 beta | f32 reward | f32 distance |
  f64 tool_state[7] | n_cams * width * height * channels bytes (pixel u8)
"""

from __future__ import annotations

import asyncio
import json
import struct
import threading

import numpy as np

from .demos import DemoStore, Demonstration, TrajectoryStep, validate_demo
from .env import CataractEnv, EnvConfig, StepEvent
from .eye import SectorId
from .kinematics import ActionDelta

PROTOCOL_VERSION = 1
FRAME_HEADER = struct.Struct("<BBHHBBQIIff7d")


class SessionError(RuntimeError):
    pass


def encode_tick_bundle(tick: int, observation, hit_c: int, beta: int,
                       event: int, reward: float) -> bytes:
    frames = observation.frames
    h, w, c = frames[0].shape
    head = FRAME_HEADER.pack(
        PROTOCOL_VERSION, len(frames), w, h, c, event, tick, hit_c, beta,
        reward, observation.distance, *observation.tool_state,
    )
    pixels = b"".join(
        np.clip(np.round(f * 255.0), 0, 255).astype(np.uint8).tobytes() for f in frames
    )
    return head + pixels


def decode_tick_bundle(data: bytes) -> dict:
    head = FRAME_HEADER.unpack(data[: FRAME_HEADER.size])
    version, n_cams, w, h, c, event, tick, hit_c, beta, reward, distance = head[:11]
    tool_state = head[11:18]
    if version != PROTOCOL_VERSION:
        raise SessionError(f"protocol version mismatch: {version}")
    frame_len = w * h * c
    pixels = data[FRAME_HEADER.size:]
    if len(pixels) != n_cams * frame_len:
        raise SessionError("truncated tick bundle")
    frames = [
        np.frombuffer(pixels[i * frame_len:(i + 1) * frame_len], dtype=np.uint8)
        .reshape(h, w, c)
        for i in range(n_cams)
    ]
    return {
        "tick": tick, "hit_c": hit_c, "beta": beta, "event": event,
        "reward": reward, "distance": distance,
        "tool_state": np.array(tool_state), "frames": frames,
    }


class _SessionState:
    """Mutable per-connection state shared between reader and tick loop."""

    def __init__(self):
        self.latest_action: np.ndarray | None = None
        self.latest_action_tick = -1
        self.controls: asyncio.Queue = asyncio.Queue()
        self.closed = asyncio.Event()
        self.action_received = asyncio.Event()


class SessionServer:
    """Single-session tick server over an environment + demonstration store."""

    def __init__(self, config: EnvConfig, store: DemoStore, tick_rate: float = 20.0,
                 lockstep: bool = False):
        """``lockstep`` makes each tick wait for a client action numbered for
        that tick (scripted replay clients); live sessions keep the paced
        latest-action-wins semantics."""
        config.validate()
        self.config = config
        self.store = store
        self.tick_rate = tick_rate
        self.lockstep = lockstep
        self.env = CataractEnv(config)
        self._busy = False
        self._session_counter = 0

    def hello_message(self, session_id: str) -> dict:
        return {
            "type": "hello",
            "version": PROTOCOL_VERSION,
            "session": session_id,
            "tick_rate": self.tick_rate,
            "beta": self.config.beta,
            "bounds": {
                "translation_mm": self.config.bounds.translation_mm,
                "rotation_rad": self.config.bounds.rotation_rad,
            },
            "obs": {
                "width": self.config.observation.width,
                "height": self.config.observation.height,
                "channels": self.config.observation.channels,
            },
            "cameras": ["Top", "UpperSide", "UpperCorner"],
            "config_hash": self.config.config_hash(),
        }

    async def handler(self, ws):
        if self._busy:
            await ws.send(json.dumps({"type": "busy"}))
            await ws.close()
            return
        self._busy = True
        self._session_counter += 1
        try:
            await self._run_session(ws, f"s{self._session_counter}")
        finally:
            self._busy = False

    async def _reader(self, ws, state: _SessionState, tick_ref):
        try:
            async for raw in ws:
                if isinstance(raw, bytes):
                    await ws.send(json.dumps(
                        {"type": "error", "reason": "binary frames are server-to-client only"}
                    ))
                    continue
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send(json.dumps({"type": "error", "reason": "malformed message"}))
                    continue
                kind = msg.get("type")
                if kind == "action":
                    a_tick = msg.get("tick", -1)
                    delta = msg.get("delta")
                    if (
                        isinstance(delta, list) and len(delta) == 6
                        and a_tick >= state.latest_action_tick
                    ):
                        state.latest_action = np.asarray(delta, dtype=np.float64)
                        state.latest_action_tick = a_tick
                        state.action_received.set()
                    else:
                        await ws.send(json.dumps(
                            {"type": "error", "reason": "stale or malformed action",
                             "tick": tick_ref[0]}
                        ))
                elif kind == "control":
                    await state.controls.put(msg)
                else:
                    await ws.send(json.dumps(
                        {"type": "error", "reason": f"unknown message type {kind!r}"}
                    ))
        except Exception:
            pass
        finally:
            state.closed.set()

    async def _run_session(self, ws, session_id: str):
        await ws.send(json.dumps(self.hello_message(session_id)))
        raw = await ws.recv()
        try:
            msg = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError, TypeError):
            await ws.send(json.dumps({"type": "error", "reason": "handshake not json"}))
            return
        if msg.get("type") != "hello" or msg.get("version") != PROTOCOL_VERSION:
            await ws.send(json.dumps(
                {"type": "error",
                 "reason": f"incompatible protocol version {msg.get('version')!r}"}
            ))
            return

        state = _SessionState()
        tick_ref = [0]
        reader = asyncio.create_task(self._reader(ws, state, tick_ref))
        try:
            await self._tick_loop(ws, state, tick_ref)
        except Exception:
            pass
        finally:
            reader.cancel()

    async def _tick_loop(self, ws, state: _SessionState, tick_ref):
        episode_active = False
        episode_outcome = None
        episode_seed = 0
        next_auto_seed = 0
        episode_return = 0.0
        recorded: list[TrajectoryStep] = []
        obs = None
        tick_period = 1.0 / self.tick_rate if self.tick_rate > 0 else 0.0

        async def apply_control(msg):
            nonlocal episode_active, episode_outcome, episode_seed
            nonlocal next_auto_seed, episode_return, recorded, obs
            op = msg.get("op")
            if op in ("start", "reset"):
                if "seed" in msg:
                    episode_seed = int(msg["seed"])
                else:
                    episode_seed = next_auto_seed
                    next_auto_seed += 1
                obs = self.env.reset(episode_seed)
                episode_active = True
                episode_outcome = None
                episode_return = 0.0
                recorded = []
                state.latest_action = None
                await ws.send(json.dumps(
                    {"type": "info", "message": "episode started", "seed": episode_seed}
                ))
            elif op == "abort":
                episode_active = False
                episode_outcome = None
                recorded = []
                await ws.send(json.dumps({"type": "info", "message": "episode aborted"}))
            elif op == "save":
                await self._handle_save(ws, msg, episode_outcome, recorded, episode_seed)
            else:
                await ws.send(json.dumps({"type": "error", "reason": f"unknown control {op!r}"}))

        while not state.closed.is_set():
            while not state.controls.empty():
                await apply_control(state.controls.get_nowait())
            if not episode_active:
                get_control = asyncio.create_task(state.controls.get())
                closed_wait = asyncio.create_task(state.closed.wait())
                done, pending = await asyncio.wait(
                    {get_control, closed_wait}, return_when=asyncio.FIRST_COMPLETED
                )
                for p in pending:
                    p.cancel()
                if get_control in done:
                    await apply_control(get_control.result())
                continue

            if self.lockstep:
                # wait until the client has supplied an action for this tick
                while (
                    not state.closed.is_set()
                    and state.controls.empty()
                    and state.latest_action_tick < tick_ref[0]
                ):
                    state.action_received.clear()
                    try:
                        await asyncio.wait_for(state.action_received.wait(), timeout=0.05)
                    except (asyncio.TimeoutError, TimeoutError):
                        pass
                if state.closed.is_set() or not state.controls.empty():
                    continue

            action = state.latest_action if state.latest_action is not None else np.zeros(6)
            delta = ActionDelta.from_array(action)
            prev_obs = obs
            result = self.env.step(delta)
            obs = result.observation
            episode_return += result.reward
            recorded.append(
                TrajectoryStep(
                    observation=prev_obs.flatten().astype(np.float32),
                    action=delta,
                    reward=result.reward,
                    t=len(recorded),
                )
            )
            await ws.send(encode_tick_bundle(
                tick_ref[0], obs, result.info["hit_c"], self.config.beta,
                int(result.event), result.reward,
            ))
            tick_ref[0] += 1
            if result.terminal:
                episode_active = False
                episode_outcome = result
                await ws.send(json.dumps({
                    "type": "episode_end",
                    "tick": tick_ref[0],
                    "outcome": result.event.name,
                    "entry_sector": result.entry_sector.name if result.entry_sector else None,
                    "steps": len(recorded),
                    "env_return": episode_return,
                }))
            if tick_period:
                await asyncio.sleep(tick_period)

    async def _handle_save(self, ws, msg, episode_outcome, recorded, episode_seed):
        if episode_outcome is None or episode_outcome.event != StepEvent.SUCCESS:
            reason = (
                "no finished episode to save" if episode_outcome is None
                else f"episode ended {episode_outcome.event.name}; "
                     "valid demonstrations end SUCCESS"
            )
            await ws.send(json.dumps({"type": "save_rejected", "reason": reason}))
            return
        surgeon = msg.get("surgeon_id")
        sector_name = msg.get("target_sector")
        if not surgeon or not sector_name:
            await ws.send(json.dumps(
                {"type": "save_rejected", "reason": "save needs surgeon_id and target_sector"}
            ))
            return
        try:
            sector = SectorId[sector_name]
        except KeyError:
            await ws.send(json.dumps(
                {"type": "save_rejected", "reason": f"unknown sector {sector_name!r}"}
            ))
            return
        demo = Demonstration(
            surgeon_id=surgeon,
            sector=sector,
            fidelity=self.config.fidelity,
            obs_config_hash=self.config.observation.config_hash(),
            env_config_hash=self.config.config_hash(),
            seed=episode_seed,
            source="Human",
            outcome=episode_outcome.event.name,
            steps=list(recorded),
        )
        report = validate_demo(self.config, demo)
        if not report.valid:
            await ws.send(json.dumps(
                {"type": "save_rejected", "reason": f"validation failed: {report.outcome}"}
            ))
            return
        demo_id = self.store.save(demo)
        await ws.send(json.dumps({
            "type": "save_ack",
            "demo_id": demo_id,
            "valid": True,
            "entry_sector": report.entry_sector,
            "n_steps": report.n_steps,
        }))

    async def serve(self, host: str = "127.0.0.1", port: int = 8765):
        import websockets

        async with websockets.serve(self.handler, host, port, max_size=None):
            await asyncio.Future()

    def run(self, host: str = "127.0.0.1", port: int = 8765):
        asyncio.run(self.serve(host, port))


class ServerThread:
    """Runs a SessionServer on a background event loop (tests, tooling)."""

    def __init__(self, server: SessionServer, host: str = "127.0.0.1", port: int = 0):
        self.server = server
        self.host = host
        self.port = port
        self._loop = None
        self._thread = None
        self._started = threading.Event()

    def start(self) -> int:
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        if not self._started.wait(timeout=30):
            raise SessionError("session server failed to start")
        return self.port

    def _run(self):
        import websockets

        async def main():
            server = await websockets.serve(
                self.server.handler, self.host, self.port, max_size=None
            )
            self.port = server.sockets[0].getsockname()[1]
            self._started.set()
            await asyncio.Future()

        self._loop = asyncio.new_event_loop()
        asyncio.set_event_loop(self._loop)
        try:
            self._loop.run_until_complete(main())
        except (asyncio.CancelledError, RuntimeError):
            pass
        finally:
            self._loop.close()

    def stop(self):
        if self._loop is not None and self._loop.is_running():
            self._loop.call_soon_threadsafe(
                lambda: [t.cancel() for t in asyncio.all_tasks(self._loop)]
            )
        if self._thread is not None:
            self._thread.join(timeout=10)
