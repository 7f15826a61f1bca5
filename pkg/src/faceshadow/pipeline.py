"""Real-time shadowing runtime: staged threads joined by bounded queues.

Stage layout: ingest -> preprocess -> control generation -> transmit.  Every
hop is a drop-oldest queue (default capacity 2), so a stalled consumer sheds
the stalest frames instead of propagating backpressure; ingest never blocks
on processing and processing never blocks on transmission.  All stage
durations come from the monotonic clock.

Motion parameters ride as sidecar data on each toy frame (the synthetic
world knows the parameters that generated a frame, so extraction is exact);
a frame without them is skipped with a logged diagnostic.
"""

from __future__ import annotations

import gc
import logging
import socket as socket_mod
import threading
import time
import traceback
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from .errors import (
    ConfigError,
    FrameDecodeError,
    MotionExtractionError,
    SessionStateError,
)
from .latency import LatencyRecord, LatencySummary, StageBudget, check_budget, summarize
from .mapping import ControlVector, ModelDims, RegressorModel, forward
from .motion import (
    FeatureVolume,
    MotionParams,
    SourceCache,
    StitchPolicy,
    _bilinear_sample,
    apply_stitch,
    generate_intermediate,
    relative_transform,
    stitch_offset,
    transform_keypoints,
    warp_features,
)
from .synth import (
    ExpressionParams,
    ExpressionTrajectory,
    SynthBasis,
    default_basis,
    render_toy,
    synth_motion,
)
from . import wire

logger = logging.getLogger(__name__)

DEFAULT_FRAME_PORT = 7588

_CLOSED = object()


@dataclass
class Frame:
    """One driving frame: toy grid payload plus optional motion sidecar."""

    seq: int
    capture_ts: int                      # microseconds since epoch
    width: int
    height: int
    payload: np.ndarray | bytes
    format: int = wire.FORMAT_F32_GRID
    motion: Optional[MotionParams] = None


class StageQueue:
    """Bounded thread-safe queue that drops the oldest item when full.

    `wait=True` switches a put to blocking (lossless replay mode); an abort
    event breaks the wait if the session is tearing down.
    """

    def __init__(self, capacity: int = 2, abort_event: threading.Event | None = None):
        if capacity < 1:
            raise ConfigError("queue capacity must be >= 1")
        self.capacity = capacity
        self.policy = "drop-oldest"
        self.dropped_count = 0
        self.peak_occupancy = 0
        self._items: deque = deque()
        self._cond = threading.Condition()
        self._closed = False
        self._abort = abort_event

    def put(self, item, wait: bool = False) -> bool:
        """Enqueue; returns True when an older item had to be dropped."""
        dropped = False
        with self._cond:
            if self._closed:
                return False
            if wait:
                while len(self._items) >= self.capacity and not self._closed:
                    if self._abort is not None and self._abort.is_set():
                        return False
                    self._cond.wait(0.05)
                if self._closed:
                    return False
            elif len(self._items) >= self.capacity:
                self._items.popleft()
                self.dropped_count += 1
                dropped = True
            self._items.append(item)
            self.peak_occupancy = max(self.peak_occupancy, len(self._items))
            self._cond.notify_all()
        return dropped

    def get(self, timeout: float | None = None):
        """Dequeue in order; None on timeout, the closed sentinel when drained."""
        with self._cond:
            while not self._items and not self._closed:
                if not self._cond.wait(timeout):
                    return None
            if self._items:
                item = self._items.popleft()
                self._cond.notify_all()   # wake blocked producers
                return item
            return _CLOSED

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


# ---------------------------------------------------------------------------
# session state and per-frame operations

def precompute_source(
    source: ExpressionParams | MotionParams,
    res: tuple[int, int] = (32, 32),
    basis: SynthBasis | None = None,
) -> SourceCache:
    """Build the warmup cache: source keypoints and the toy feature volume."""
    basis = basis if basis is not None else default_basis()
    params = synth_motion(source, basis) if isinstance(source, ExpressionParams) else source
    x_s = transform_keypoints(basis.canonical_keypoints, params)
    volume = FeatureVolume(render_toy(x_s, res)[:, :, np.newaxis])
    return SourceCache(
        canonical_keypoints=basis.canonical_keypoints,
        source_params=params,
        source_keypoints=x_s,
        feature_volume=volume,
        compute_count=1,
    )


@dataclass
class SessionState:
    """Per-session anchors: the source cache and the frame-0 reference pose."""

    source_cache: Optional[SourceCache] = None
    first_frame_params: Optional[MotionParams] = None
    frames_seen: int = 0

    def warmup(
        self,
        source: ExpressionParams | MotionParams,
        res: tuple[int, int] = (32, 32),
        basis: SynthBasis | None = None,
    ) -> SourceCache:
        if self.source_cache is not None:
            raise SessionStateError("source cache already built for this session")
        self.source_cache = precompute_source(source, res, basis)
        return self.source_cache

    def rebase(self) -> None:
        """Forget the frame-0 anchor; the next frame becomes the reference."""
        self.first_frame_params = None


def extract_motion(frame: Frame) -> MotionParams:
    """Recover the pose bundle for a toy frame (exact, via the sidecar)."""
    if frame.motion is None:
        raise MotionExtractionError(f"frame {frame.seq} carries no motion parameters")
    return frame.motion


def process_frame(
    frame: Frame,
    state: SessionState,
    model: RegressorModel,
    stitch_policy: StitchPolicy | None = None,
) -> ControlVector:
    """Relative transform, stitch, warp, generate, predict - one frame."""
    cache = state.source_cache
    if cache is None:
        raise SessionStateError("precompute_source must run before the first frame")
    params = extract_motion(frame)
    if state.first_frame_params is None:
        state.first_frame_params = params
    x_rel = relative_transform(
        params, state.first_frame_params, cache.source_params, cache.canonical_keypoints
    )
    delta = stitch_offset(cache.source_keypoints, x_rel, policy=stitch_policy)
    x_dp = apply_stitch(x_rel, delta)
    warped = warp_features(cache.feature_volume, cache.source_keypoints, x_dp)
    inter = generate_intermediate(warped, frame_seq=frame.seq)
    _, y = forward(model, inter)
    state.frames_seen += 1
    return ControlVector(
        values=y, seq=frame.seq, capture_ts=frame.capture_ts, send_ts=0
    )


def bilinear_resize(img: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    th, tw = target
    h, w = img.shape
    if (h, w) == (th, tw):
        return img.copy()
    rows = (np.arange(th) * (h - 1) / (th - 1)) if th > 1 else np.zeros(1)
    cols = (np.arange(tw) * (w - 1) / (tw - 1)) if tw > 1 else np.zeros(1)
    col_grid = np.broadcast_to(cols[np.newaxis, :], (th, tw))
    row_grid = np.broadcast_to(rows[:, np.newaxis], (th, tw))
    return _bilinear_sample(img, col_grid, row_grid)


def preprocess(
    frame: Frame,
    target_dims: tuple[int, int],
    decoder: Callable[[bytes], np.ndarray] | None = None,
) -> np.ndarray:
    """Center-crop to square, bilinear-resize to the model grid, clamp to [0, 1]."""
    payload = frame.payload
    if isinstance(payload, (bytes, bytearray, memoryview)):
        if frame.format == wire.FORMAT_F32_GRID:
            expected = 4 * frame.width * frame.height
            if len(payload) != expected:
                raise FrameDecodeError(
                    f"frame {frame.seq}: payload {len(payload)} bytes, expected {expected}"
                )
            grid = (
                np.frombuffer(payload, dtype="<f4")
                .reshape(frame.height, frame.width)
                .astype(np.float64)
            )
        elif decoder is not None:
            grid = np.asarray(decoder(bytes(payload)), dtype=np.float64)
        else:
            raise FrameDecodeError(
                f"frame {frame.seq}: opaque payload and no decoder configured"
            )
    else:
        grid = np.asarray(payload, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
        raise FrameDecodeError(f"frame {frame.seq}: payload is not a 2D grid")
    if not np.all(np.isfinite(grid)):
        raise FrameDecodeError(f"frame {frame.seq}: non-finite payload values")
    side = min(grid.shape)
    r0 = (grid.shape[0] - side) // 2
    c0 = (grid.shape[1] - side) // 2
    square = grid[r0 : r0 + side, c0 : c0 + side]
    return np.clip(bilinear_resize(square, target_dims), 0.0, 1.0)


# ---------------------------------------------------------------------------
# frame sources

class SyntheticSource:
    """Paced stream of rendered toy frames following a seeded expression path."""

    def __init__(
        self,
        fps: float = 30.0,
        duration_s: float | None = None,
        frame_count: int | None = None,
        res: tuple[int, int] = (360, 480),
        seed: int = 0,
        basis: SynthBasis | None = None,
    ):
        if frame_count is not None:
            self.count = int(frame_count)
        elif duration_s is not None:
            nominal = fps if fps > 0 else 30.0
            self.count = int(round(nominal * duration_s))
        else:
            raise ConfigError("synthetic source needs duration_s or frame_count")
        self.fps = fps
        self.res = res
        self.seed = seed
        self.basis = basis if basis is not None else default_basis()
        self.trajectory = ExpressionTrajectory(seed)

    def frames(self) -> Iterator[Frame]:
        period = 1.0 / self.fps if self.fps > 0 else 0.0
        nominal = period if period else 1.0 / 30.0
        start = time.perf_counter()
        for i in range(self.count):
            if period:
                delay = start + i * period - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
            e = self.trajectory.at(i * nominal)   # virtual time: replayable
            motion = synth_motion(e, self.basis)
            keypoints = transform_keypoints(self.basis.canonical_keypoints, motion)
            payload = render_toy(keypoints, self.res)
            yield Frame(
                seq=i,
                capture_ts=time.time_ns() // 1000,
                width=self.res[1],
                height=self.res[0],
                payload=payload,
                motion=motion,
            )


class SessionStreamDecoder:
    """Incremental frame + optional-sidecar parser with magic resync."""

    def __init__(self):
        self.buffer = b""
        self.pending: Optional[wire.FrameMessage] = None
        self.resync_count = 0

    def _to_frame(self, msg: wire.FrameMessage, params: Optional[MotionParams]) -> Frame:
        payload = msg.grid() if msg.format == wire.FORMAT_F32_GRID else msg.payload
        return Frame(
            seq=msg.seq, capture_ts=msg.capture_ts, width=msg.width,
            height=msg.height, payload=payload, format=msg.format, motion=params,
        )

    def feed(self, data: bytes) -> list[Frame]:
        self.buffer += data
        out: list[Frame] = []
        while True:
            if self.pending is None:
                idx = self.buffer.find(wire.FRAME_MAGIC)
                if idx < 0:
                    self.buffer = self.buffer[-3:] if self.buffer else b""
                    break
                if idx > 0:
                    self.buffer = self.buffer[idx:]
                    self.resync_count += 1
                try:
                    msg, consumed = wire.parse_frame(self.buffer)
                except wire.IncompleteMessageError:
                    break
                except (wire.ProtocolError, wire.CorruptFrameError):
                    self.buffer = self.buffer[1:]
                    self.resync_count += 1
                    continue
                self.pending = msg
                self.buffer = self.buffer[consumed:]
            # decide whether a sidecar follows the pending frame
            if len(self.buffer) < 4:
                break
            if self.buffer[:4] == wire.SIDECAR_MAGIC:
                try:
                    params, consumed = wire.parse_sidecar(self.buffer)
                except wire.IncompleteMessageError:
                    break
                except (wire.ProtocolError, wire.CorruptFrameError):
                    self.buffer = self.buffer[1:]
                    self.resync_count += 1
                    out.append(self._to_frame(self.pending, None))
                    self.pending = None
                    continue
                self.buffer = self.buffer[consumed:]
                out.append(self._to_frame(self.pending, params))
            else:
                out.append(self._to_frame(self.pending, None))
            self.pending = None
        return out

    def flush(self) -> list[Frame]:
        if self.pending is None:
            return []
        frame = self._to_frame(self.pending, None)
        self.pending = None
        return [frame]


def write_session_file(path: str | Path, frames) -> int:
    """Record frames (with sidecars) to a replayable session file."""
    count = 0
    with open(path, "wb") as fh:
        for frame in frames:
            if isinstance(frame.payload, np.ndarray):
                msg = wire.FrameMessage.from_grid(frame.seq, frame.capture_ts, frame.payload)
            else:
                msg = wire.FrameMessage(
                    seq=frame.seq, capture_ts=frame.capture_ts, width=frame.width,
                    height=frame.height, format=frame.format, payload=bytes(frame.payload),
                )
            fh.write(wire.encode_frame(msg))
            if frame.motion is not None:
                fh.write(wire.encode_sidecar(frame.motion))
            count += 1
    return count


def read_session_file(path: str | Path) -> list[Frame]:
    decoder = SessionStreamDecoder()
    frames = decoder.feed(Path(path).read_bytes())
    frames += decoder.flush()
    return frames


class FileSource:
    """Replay a recorded session file, optionally re-paced to a frame rate."""

    def __init__(self, path: str | Path, fps: float = 0.0):
        self._frames = read_session_file(path)
        self.fps = fps

    def frames(self) -> Iterator[Frame]:
        period = 1.0 / self.fps if self.fps > 0 else 0.0
        start = time.perf_counter()
        for i, frame in enumerate(self._frames):
            if period:
                delay = start + i * period - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
            yield frame


class SocketFrameSource:
    """TCP listener that decodes a stream of frame (+ sidecar) messages."""

    def __init__(
        self,
        port: int = DEFAULT_FRAME_PORT,
        host: str = "127.0.0.1",
        accept_timeout: float = 10.0,
        recv_timeout: float = 10.0,
    ):
        self.host = host
        self.port = port
        self.accept_timeout = accept_timeout
        self.recv_timeout = recv_timeout
        self._server = socket_mod.socket(socket_mod.AF_INET, socket_mod.SOCK_STREAM)
        self._server.setsockopt(socket_mod.SOL_SOCKET, socket_mod.SO_REUSEADDR, 1)
        self._server.bind((host, port))
        self._server.listen(1)
        self.bound_port = self._server.getsockname()[1]

    def frames(self) -> Iterator[Frame]:
        self._server.settimeout(self.accept_timeout)
        try:
            conn, _ = self._server.accept()
        except socket_mod.timeout:
            self._server.close()
            return
        decoder = SessionStreamDecoder()
        conn.settimeout(self.recv_timeout)
        try:
            while True:
                try:
                    data = conn.recv(65536)
                except socket_mod.timeout:
                    break
                if not data:
                    break
                yield from decoder.feed(data)
            yield from decoder.flush()
        finally:
            conn.close()
            self._server.close()


# ---------------------------------------------------------------------------
# control sinks

class NullSink:
    """Counts messages; keeps the last payload for inspection."""

    def __init__(self):
        self.sent = 0
        self.last: bytes | None = None

    def send(self, data: bytes) -> None:
        self.sent += 1
        self.last = data

    def close(self) -> None:
        pass


class CollectSink:
    """Keeps every message (tests and offline analysis)."""

    def __init__(self):
        self.messages: list[bytes] = []

    def send(self, data: bytes) -> None:
        self.messages.append(data)

    def close(self) -> None:
        pass


class FileSink:
    def __init__(self, path: str | Path):
        self._fh = open(path, "wb")
        self.sent = 0

    def send(self, data: bytes) -> None:
        self._fh.write(data)
        self.sent += 1

    def close(self) -> None:
        self._fh.close()


class SocketControlSink:
    """TCP client pushing control messages; a dead peer drops, never blocks the run."""

    def __init__(self, host: str = "127.0.0.1", port: int = 7589, connect_timeout: float = 2.0):
        self.host = host
        self.port = port
        self.connect_timeout = connect_timeout
        self.sent = 0
        self.failed = 0
        self._sock: socket_mod.socket | None = None
        self._dead = False

    def _connect(self) -> bool:
        if self._sock is not None:
            return True
        if self._dead:
            return False
        try:
            self._sock = socket_mod.create_connection(
                (self.host, self.port), timeout=self.connect_timeout
            )
            return True
        except OSError as exc:
            logger.warning("control sink unreachable (%s); dropping messages", exc)
            self._dead = True
            return False

    def send(self, data: bytes) -> None:
        if not self._connect():
            self.failed += 1
            return
        try:
            self._sock.sendall(data)
            self.sent += 1
        except OSError as exc:
            logger.warning("control sink send failed (%s); dropping messages", exc)
            self.failed += 1
            self._dead = True
            self._sock = None

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None


class StallingSink:
    """Fault-injection wrapper: sleeps once at the Nth send."""

    def __init__(self, inner, stall_at: int, stall_s: float):
        self.inner = inner
        self.stall_at = stall_at
        self.stall_s = stall_s
        self._count = 0
        self.stalled = False

    def send(self, data: bytes) -> None:
        if self._count == self.stall_at and not self.stalled:
            self.stalled = True
            time.sleep(self.stall_s)
        self._count += 1
        self.inner.send(data)

    def close(self) -> None:
        self.inner.close()


# ---------------------------------------------------------------------------
# session runner

@dataclass
class RunConfig:
    fps: float = 30.0
    duration_s: float | None = None
    frame_count: int | None = None
    source_res: tuple[int, int] = (360, 480)
    grid_res: tuple[int, int] = (32, 32)
    queue_capacity: int = 2
    seed: int = 0
    inject_control_delay_s: float = 0.0
    load_tag: str = "idle"
    rebase: bool = False
    lossless: bool = False      # block instead of drop (deterministic replay)
    source_expression: ExpressionParams | None = None


@dataclass
class WorkItem:
    frame: Frame
    t_ingest: float
    grid: np.ndarray | None = None
    control: ControlVector | None = None


@dataclass
class SessionReport:
    load_tag: str
    frames_in: int = 0
    controls_out: int = 0
    skipped: int = 0
    send_failures: int = 0
    drops: dict = field(default_factory=dict)
    peak_occupancy: dict = field(default_factory=dict)
    records: dict = field(default_factory=dict)
    out_seqs: list = field(default_factory=list)
    partial: bool = False
    error: str | None = None

    def summaries(self) -> dict[str, LatencySummary | None]:
        out = {}
        for stage, recs in self.records.items():
            out[stage] = summarize([r.duration for r in recs]) if recs else None
        return out

    def budget_verdicts(self, budget: StageBudget | None = None) -> dict:
        budget = budget if budget is not None else StageBudget()
        verdicts = {}
        for stage, summary in self.summaries().items():
            if summary is not None:
                verdicts[stage] = check_budget(summary, budget, stage)
        return verdicts

    def to_dict(self) -> dict:
        summaries = {
            stage: (s.as_dict() if s is not None else None)
            for stage, s in self.summaries().items()
        }
        verdicts = {k: v.as_dict() for k, v in self.budget_verdicts().items()}
        return {
            "load_tag": self.load_tag,
            "frames_in": self.frames_in,
            "controls_out": self.controls_out,
            "skipped": self.skipped,
            "send_failures": self.send_failures,
            "drops": dict(self.drops),
            "peak_occupancy": dict(self.peak_occupancy),
            "stages": summaries,
            "budget_verdicts": verdicts,
            "out_seqs_strictly_increasing": all(
                b > a for a, b in zip(self.out_seqs, self.out_seqs[1:])
            ),
            "partial": self.partial,
            "error": self.error,
        }


def run_stream(source, sink, config: RunConfig, model: RegressorModel | None = None,
               basis: SynthBasis | None = None,
               state: SessionState | None = None) -> SessionReport:
    """Drive a full shadowing session; stages run as concurrent tasks.

    Transmission never blocks control generation: each hop is a bounded
    drop-oldest queue, so overload sheds the oldest frames and the report's
    drop counters say where.  Passing `state` lets a caller keep the session
    anchors (source cache, frame-0 pose) for inspection or reuse.
    """
    basis = basis if basis is not None else default_basis()
    if model is None:
        model = RegressorModel.init(
            ModelDims(input_h=config.grid_res[0], input_w=config.grid_res[1]),
            seed=config.seed,
        )
    if model.dims.input_h != config.grid_res[0] or model.dims.input_w != config.grid_res[1]:
        raise ConfigError(
            f"model input {model.dims.input_h}x{model.dims.input_w} does not match "
            f"grid_res {config.grid_res}"
        )

    if state is None:
        state = SessionState()
    if state.source_cache is None:
        source_expr = (
            config.source_expression
            if config.source_expression is not None
            else ExpressionParams(e=np.zeros(8))
        )
        state.warmup(source_expr, res=config.grid_res, basis=basis)
    if config.rebase:
        state.rebase()

    abort = threading.Event()
    q_pre = StageQueue(config.queue_capacity, abort)
    q_gen = StageQueue(config.queue_capacity, abort)
    q_tx = StageQueue(config.queue_capacity, abort)
    wait = config.lossless

    tag = config.load_tag
    report = SessionReport(load_tag=tag)
    records = {stage: [] for stage in ("preprocess", "control_gen", "transmit", "total")}
    errors: list[str] = []

    def ingest() -> None:
        try:
            for frame in source.frames():
                report.frames_in += 1
                q_pre.put(WorkItem(frame=frame, t_ingest=time.perf_counter()), wait=wait)
        except Exception:
            errors.append(f"ingest: {traceback.format_exc()}")
            abort.set()
        finally:
            q_pre.close()

    def preprocess_stage() -> None:
        try:
            while True:
                item = q_pre.get(timeout=0.1)
                if item is None:
                    continue
                if item is _CLOSED:
                    break
                t0 = time.perf_counter()
                try:
                    item.grid = preprocess(item.frame, config.grid_res)
                except FrameDecodeError as exc:
                    report.skipped += 1
                    logger.warning("skipping frame: %s", exc)
                    continue
                t1 = time.perf_counter()
                records["preprocess"].append(
                    LatencyRecord(item.frame.seq, "preprocess", t1 - t0, tag)
                )
                q_gen.put(item, wait=wait)
        except Exception:
            errors.append(f"preprocess: {traceback.format_exc()}")
            abort.set()
        finally:
            q_gen.close()

    def control_stage() -> None:
        try:
            while True:
                item = q_gen.get(timeout=0.1)
                if item is None:
                    continue
                if item is _CLOSED:
                    break
                t0 = time.perf_counter()
                if config.inject_control_delay_s > 0:
                    time.sleep(config.inject_control_delay_s)
                try:
                    item.control = process_frame(item.frame, state, model)
                except MotionExtractionError as exc:
                    report.skipped += 1
                    logger.warning("skipping frame: %s", exc)
                    continue
                t1 = time.perf_counter()
                records["control_gen"].append(
                    LatencyRecord(item.frame.seq, "control_gen", t1 - t0, tag)
                )
                q_tx.put(item, wait=wait)
        except Exception:
            errors.append(f"control_gen: {traceback.format_exc()}")
            abort.set()
        finally:
            q_tx.close()

    def transmit_stage() -> None:
        last_seq = -1
        try:
            while True:
                item = q_tx.get(timeout=0.1)
                if item is None:
                    continue
                if item is _CLOSED:
                    break
                t0 = time.perf_counter()
                control = item.control
                sink.send(wire.encode_control_vector(control, time.time_ns() // 1000))
                t1 = time.perf_counter()
                records["transmit"].append(
                    LatencyRecord(item.frame.seq, "transmit", t1 - t0, tag)
                )
                records["total"].append(
                    LatencyRecord(item.frame.seq, "total", t1 - item.t_ingest, tag)
                )
                report.controls_out += 1
                if control.seq <= last_seq:
                    errors.append(
                        f"transmit: sequence regression {last_seq} -> {control.seq}"
                    )
                last_seq = control.seq
                report.out_seqs.append(control.seq)
        except Exception:
            errors.append(f"transmit: {traceback.format_exc()}")
            abort.set()

    threads = [
        threading.Thread(target=fn, name=name, daemon=True)
        for name, fn in (
            ("ingest", ingest),
            ("preprocess", preprocess_stage),
            ("control_gen", control_stage),
            ("transmit", transmit_stage),
        )
    ]
    # enter the session with a collected heap so mid-run GC pauses stay small
    gc.collect()
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    if hasattr(sink, "failed"):
        report.send_failures = sink.failed
    report.records = records
    report.drops = {
        "preprocess": q_pre.dropped_count,
        "control_gen": q_gen.dropped_count,
        "transmit": q_tx.dropped_count,
    }
    report.peak_occupancy = {
        "preprocess": q_pre.peak_occupancy,
        "control_gen": q_gen.peak_occupancy,
        "transmit": q_tx.peak_occupancy,
    }
    if errors:
        report.partial = True
        report.error = "; ".join(e.splitlines()[-1] for e in errors)
        logger.error("session finished with stage errors: %s", report.error)
    return report


def run_session(config: RunConfig, source=None, sink=None,
                model: RegressorModel | None = None,
                basis: SynthBasis | None = None,
                state: SessionState | None = None) -> SessionReport:
    """Convenience wrapper: synthetic source and null sink unless given."""
    basis = basis if basis is not None else default_basis()
    own_source = source is None
    if own_source:
        source = SyntheticSource(
            fps=config.fps,
            duration_s=config.duration_s,
            frame_count=config.frame_count,
            res=config.source_res,
            seed=config.seed,
            basis=basis,
        )
    own_sink = sink is None
    if own_sink:
        sink = NullSink()
    try:
        return run_stream(source, sink, config, model=model, basis=basis, state=state)
    finally:
        if own_sink:
            sink.close()
