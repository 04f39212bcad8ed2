"""Frame ingestion, chunking, splits, synthetic trajectories, rasterization.

Frames travel as JSON Lines: one object per frame with ``t`` (seconds),
``points`` (list of [x, y] fractions of the map extent, each in [0, 1]) and
an optional ``owner`` list of ints carried through loads/saves but ignored
by the models.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CHUNK_LEN = 50
FRAME_PERIOD = 0.2


class FrameError(ValueError):
    """A frame (or frame file line) violating the schema."""


@dataclass
class PointFrame:
    """One timestamped set of unit positions in the unit square."""

    t: float
    points: np.ndarray  # (N, 2) float64, coordinates in [0, 1]
    owner: np.ndarray | None = None  # (N,) int, optional player tags

    @property
    def n(self) -> int:
        return len(self.points)

    def validate(self, label: str = "frame") -> "PointFrame":
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise FrameError(f"{label}: points must be (N, 2), got {pts.shape}")
        if len(pts) < 1:
            raise FrameError(f"{label}: empty frame (N=0) is not allowed")
        if not np.all(np.isfinite(pts)):
            raise FrameError(f"{label}: non-finite coordinate")
        if pts.min() < 0.0 or pts.max() > 1.0:
            bad = pts[(pts < 0.0).any(axis=1) | (pts > 1.0).any(axis=1)][0]
            raise FrameError(
                f"{label}: coordinate {bad.tolist()} outside [0, 1]"
            )
        if self.owner is not None and len(self.owner) != len(pts):
            raise FrameError(f"{label}: owner list length != point count")
        return self

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointFrame):
            return NotImplemented
        same_owner = (
            (self.owner is None and other.owner is None)
            or (
                self.owner is not None
                and other.owner is not None
                and np.array_equal(self.owner, other.owner)
            )
        )
        return (
            self.t == other.t
            and np.array_equal(self.points, other.points)
            and same_owner
        )


def load_frames(path) -> list[PointFrame]:
    """Parse a JSONL frame file, validating every frame."""
    frames: list[PointFrame] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FrameError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "t" not in obj or "points" not in obj:
                raise FrameError(f"{path}:{lineno}: frame object needs 't' and 'points'")
            owner = obj.get("owner")
            try:
                frame = PointFrame(
                    t=float(obj["t"]),
                    points=np.asarray(obj["points"], dtype=np.float64).reshape(-1, 2),
                    owner=None if owner is None else np.asarray(owner, dtype=np.int64),
                )
            except (TypeError, ValueError) as exc:
                raise FrameError(f"{path}:{lineno}: bad frame payload ({exc})") from exc
            frame.validate(label=f"{path}:{lineno}")
            frames.append(frame)
    return frames


def save_frames(frames: Iterable[PointFrame], path) -> None:
    """Write frames as JSONL; inverse of :func:`load_frames`."""
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            obj = {"t": frame.t, "points": frame.points.tolist()}
            if frame.owner is not None:
                obj["owner"] = [int(o) for o in frame.owner]
            fh.write(json.dumps(obj) + "\n")


@dataclass
class Chunk:
    """Exactly 50 consecutive frames (10 s at the 0.2 s cadence)."""

    frames: tuple[PointFrame, ...]

    def __post_init__(self):
        if len(self.frames) != CHUNK_LEN:
            raise FrameError(f"chunk must hold {CHUNK_LEN} frames, got {len(self.frames)}")
        ts = [f.t for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise FrameError("chunk timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)


def make_chunks(frames: Sequence[PointFrame], chunk_len: int = CHUNK_LEN) -> list[Chunk]:
    """Non-overlapping consecutive windows; the leftover tail is dropped."""
    if chunk_len != CHUNK_LEN:
        raise ValueError(f"chunk length is fixed at {CHUNK_LEN}")
    if len(frames) < chunk_len:
        raise FrameError(
            f"need at least {chunk_len} frames to form a chunk, got {len(frames)}"
        )
    n = len(frames) // chunk_len
    return [
        Chunk(tuple(frames[i * chunk_len : (i + 1) * chunk_len])) for i in range(n)
    ]


@dataclass
class DatasetSplit:
    """Disjoint train/validation/test chunk lists (80/10/10 by count)."""

    train: list[Chunk]
    validation: list[Chunk]
    test: list[Chunk]
    seed: int

    def __iter__(self):
        yield from (self.train, self.validation, self.test)


def split_chunks(chunks: Sequence[Chunk], seed: int) -> DatasetSplit:
    """Shuffle chunks with ``seed``; 10% validation and test (floored),
    remainder to train."""
    order = np.random.default_rng(seed).permutation(len(chunks))
    shuffled = [chunks[i] for i in order]
    n_hold = len(chunks) // 10
    n_train = len(chunks) - 2 * n_hold
    return DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train : n_train + n_hold],
        test=shuffled[n_train + n_hold :],
        seed=seed,
    )


def frames_of(chunks: Iterable[Chunk]) -> list[PointFrame]:
    """Flatten chunks back to a frame list (for the frame-shuffled stages)."""
    return [frame for chunk in chunks for frame in chunk.frames]


@dataclass
class SynthConfig:
    """Two clustered factions moving toward waypoints with per-unit jitter.

    Stands in for replay-derived data: unit counts drift between ``n_min``
    and ``n_max`` through spawn/death events, and each faction's cluster
    follows its own sequence of waypoints across the unit square.
    """

    frames: int = 1500
    n_init: int = 36  # total units at t=0, split between the factions
    n_min: int = 20
    n_max: int = 60
    speed: float = 0.05  # map units per second toward the waypoint
    jitter: float = 0.004  # per-frame positional noise (std)
    spawn_rate: float = 0.01  # per-frame probability of one spawn per faction
    death_rate: float = 0.01  # per-frame probability of one death per faction
    cluster_spread: float = 0.07
    waypoint_reach: float = 0.35  # waypoints stay this close to the home anchor
    dt: float = FRAME_PERIOD

    def validate(self) -> "SynthConfig":
        if self.frames < 1 or self.n_init < 2:
            raise ValueError("synth config: frames >= 1 and n_init >= 2 required")
        if not (1 <= self.n_min <= self.n_init <= self.n_max):
            raise ValueError("synth config: need 1 <= n_min <= n_init <= n_max")
        if min(self.speed, self.jitter, self.spawn_rate, self.death_rate) < 0:
            raise ValueError("synth config: rates must be non-negative")
        return self


def synth_generate(config: SynthConfig, seed: int) -> list[PointFrame]:
    """Deterministic synthetic trajectory; same seed, same frames (bitwise)."""
    config.validate()
    rng = np.random.default_rng(seed)
    half = config.n_init // 2
    sizes = [half, config.n_init - half]
    anchors = np.array([[0.2, 0.2], [0.8, 0.8]])

    def waypoint_near(anchor):
        reach = config.waypoint_reach
        return np.clip(anchor + rng.uniform(-reach, reach, size=2), 0.0, 1.0)

    factions = []
    for size, anchor in zip(sizes, anchors):
        pos = np.clip(
            anchor + rng.normal(scale=config.cluster_spread, size=(size, 2)), 0.0, 1.0
        )
        factions.append({"pos": pos, "anchor": anchor, "waypoint": waypoint_near(anchor)})

    frames: list[PointFrame] = []
    for i in range(config.frames):
        for fi, fac in enumerate(factions):
            pos = fac["pos"]
            center = pos.mean(axis=0)
            if np.linalg.norm(center - fac["waypoint"]) < 0.05:
                fac["waypoint"] = waypoint_near(fac["anchor"])
            direction = fac["waypoint"] - pos
            norms = np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-9)
            step = direction / norms * (config.speed * config.dt)
            noise = rng.normal(scale=config.jitter, size=pos.shape)
            fac["pos"] = np.clip(pos + step + noise, 0.0, 1.0)

            total = sum(len(f["pos"]) for f in factions)
            if rng.random() < config.spawn_rate and total < config.n_max:
                newborn = np.clip(
                    fac["pos"].mean(axis=0)
                    + rng.normal(scale=config.cluster_spread, size=2),
                    0.0,
                    1.0,
                )
                fac["pos"] = np.vstack([fac["pos"], newborn])
            total = sum(len(f["pos"]) for f in factions)
            if rng.random() < config.death_rate and total > config.n_min and len(fac["pos"]) > 1:
                victim = rng.integers(len(fac["pos"]))
                fac["pos"] = np.delete(fac["pos"], victim, axis=0)

        points = np.vstack([f["pos"] for f in factions])
        owner = np.repeat(
            np.arange(len(factions)), [len(f["pos"]) for f in factions]
        )
        frames.append(
            PointFrame(t=round(i * config.dt, 6), points=points.copy(), owner=owner)
        )
    return frames


def rasterize(frame: PointFrame, resolution: int = 256) -> np.ndarray:
    """Occupancy mask: True where a unit rounds onto the pixel grid.

    Pixel (row, col) = (round(y*(res-1)), round(x*(res-1))); coincident
    points mark one pixel.
    """
    if resolution < 2:
        raise ValueError("rasterize: resolution must be at least 2")
    mask = np.zeros((resolution, resolution), dtype=bool)
    scaled = np.floor(frame.points * (resolution - 1) + 0.5).astype(int)
    mask[scaled[:, 1], scaled[:, 0]] = True
    return mask


def pgm_bytes(mask: np.ndarray) -> bytes:
    """Binary PGM (P5) with occupied pixels dark (0) on a white field."""
    h, w = mask.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    body = np.where(mask, 0, 255).astype(np.uint8)
    return header + body.tobytes()


def write_pgm(mask: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(mask))
