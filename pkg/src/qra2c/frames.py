"""Atari-style observation preprocessing as pure functions over synthetic frames.

grayscale -> max-pool consecutive frames -> bilinear resize to 84x84 -> stack of 4,
plus reward clipping and a frame-skip state machine driven by injected
``(frame, reward, lives)`` ticks instead of an emulator.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])
SIZE = 84


def _check_rgb(frame):
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3 or frame.shape[0] < 1 or frame.shape[1] < 1:
        raise ValueError(f"expected an (H, W, 3) RGB frame, got shape {frame.shape}")
    return frame


def grayscale(frame: np.ndarray) -> np.ndarray:
    """Luminance in [0, 1] using ITU-R 601 weights."""
    f = _check_rgb(frame).astype(np.float64)
    # elementwise rather than a dot product so the result never depends on BLAS summation order
    y = LUMA[0] * f[..., 0] + LUMA[1] * f[..., 1] + LUMA[2] * f[..., 2]
    return np.clip(y / 255.0, 0.0, 1.0)


def maxpool_pair(f_t: np.ndarray, f_prev: np.ndarray) -> np.ndarray:
    f_t, f_prev = np.asarray(f_t), np.asarray(f_prev)
    if f_t.shape != f_prev.shape:
        raise ValueError(f"frame shapes differ: {f_t.shape} vs {f_prev.shape}")
    return np.maximum(f_t, f_prev)


def _bilinear_axis(n_in: int, n_out: int):
    # Half-pixel centres; an equal-size resize maps every pixel onto itself.
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def downsample(plane: np.ndarray, size: tuple[int, int] = (SIZE, SIZE)) -> np.ndarray:
    """Bilinear resize of a 2-D plane (default 84x84)."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2 or min(plane.shape) < 2:
        raise ValueError(f"expected a 2-D plane of at least 2x2, got {plane.shape}")
    y0, y1, wy = _bilinear_axis(plane.shape[0], size[0])
    x0, x1, wx = _bilinear_axis(plane.shape[1], size[1])
    top = plane[y0][:, x0] * (1.0 - wx) + plane[y0][:, x1] * wx
    bottom = plane[y1][:, x0] * (1.0 - wx) + plane[y1][:, x1] * wx
    return top * (1.0 - wy)[:, None] + bottom * wy[:, None]


def clip_reward(r: float) -> float:
    return min(max(float(r), -1.0), 1.0)


@dataclass(frozen=True)
class StackedState:
    """``planes[phi_length, 84, 84]``, oldest first."""

    planes: np.ndarray

    @classmethod
    def initial(cls, plane: np.ndarray, phi_length: int = 4) -> "StackedState":
        plane = _check_plane(plane)
        return cls(np.repeat(plane[None], phi_length, axis=0))

    @property
    def phi_length(self) -> int:
        return self.planes.shape[0]


def _check_plane(plane):
    plane = np.asarray(plane, dtype=np.float64)
    if plane.shape != (SIZE, SIZE):
        raise ValueError(f"expected an {SIZE}x{SIZE} plane, got {plane.shape}")
    return plane


def push_frame(state: StackedState | None, plane: np.ndarray, phi_length: int = 4) -> StackedState:
    """Drop the oldest plane and append ``plane``; ``None`` starts a stack by repetition."""
    if state is None:
        return StackedState.initial(plane, phi_length)
    plane = _check_plane(plane)
    return StackedState(np.concatenate([state.planes[1:], plane[None]], axis=0))


def preprocess(frame: np.ndarray, prev_frame: np.ndarray | None = None) -> np.ndarray:
    """One observation plane from the latest raw frame (max-pooled with the previous one)."""
    g = grayscale(frame)
    if prev_frame is not None:
        g = maxpool_pair(g, grayscale(prev_frame))
    return downsample(g)


class FrameSkipper:
    """Action-repeat bookkeeping over injected emulator ticks.

    Each agent step consumes up to ``skip`` ticks ``(frame, reward, lives)``.
    The observation is built from the max of the last two frames; rewards are
    summed then clipped. A drop in ``lives`` ends the step early and marks it
    terminal; ``max_frames`` ticks per episode mark it truncated.
    """

    def __init__(self, skip: int = 4, phi_length: int = 4, max_frames: int = 108_000,
                 terminal_on_life_loss: bool = True):
        self.skip = skip
        self.phi_length = phi_length
        self.max_frames = max_frames
        self.terminal_on_life_loss = terminal_on_life_loss
        self.state = None
        self.lives = None
        self.frames = 0

    def reset(self, frame: np.ndarray, lives: int) -> StackedState:
        self.frames = 0
        self.lives = lives
        self.state = StackedState.initial(preprocess(frame), self.phi_length)
        return self.state

    def step(self, ticks) -> tuple[StackedState, float, bool, bool]:
        if self.state is None:
            raise RuntimeError("reset() must be called first")
        ticks = list(ticks)[: self.skip]
        if not ticks:
            raise ValueError("need at least one tick")
        total, terminal, seen = 0.0, False, []
        for frame, reward, lives in ticks:
            self.frames += 1
            total += reward
            seen.append(frame)
            if self.terminal_on_life_loss and lives < self.lives:
                terminal = True
            self.lives = lives
            if terminal or self.frames >= self.max_frames:
                break
        prev = seen[-2] if len(seen) > 1 else None
        self.state = push_frame(self.state, preprocess(seen[-1], prev))
        truncated = not terminal and self.frames >= self.max_frames
        return self.state, clip_reward(total), terminal, truncated


# -- fixture files --------------------------------------------------------
# Raw frame: u32 height, u32 width (little-endian), then H*W*3 RGB bytes row-major.
# A sidecar ``.txt`` next to it describes the layout in ``key = value`` lines.

def write_raw_frame(path, pixels: np.ndarray, description: str = "") -> None:
    pixels = _check_rgb(pixels).astype(np.uint8)
    path = Path(path)
    h, w, _ = pixels.shape
    path.write_bytes(struct.pack("<II", h, w) + pixels.tobytes(order="C"))
    lines = [f"height = {h}", f"width = {w}", "channels = 3", "dtype = uint8",
             "layout = row-major RGB after 8-byte little-endian (height, width) header"]
    if description:
        lines.append(f"description = {description}")
    path.with_suffix(".txt").write_text("\n".join(lines) + "\n")


def read_raw_frame(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    h, w = struct.unpack_from("<II", data, 0)
    if len(data) != 8 + h * w * 3:
        raise ValueError(f"{path}: expected {8 + h * w * 3} bytes, found {len(data)}")
    sidecar = path.with_suffix(".txt")
    if sidecar.exists():
        meta = dict(line.split(" = ", 1) for line in sidecar.read_text().splitlines() if " = " in line)
        if int(meta["height"]) != h or int(meta["width"]) != w:
            raise ValueError(f"{path}: header {h}x{w} disagrees with {sidecar.name}")
    return np.frombuffer(data, np.uint8, h * w * 3, 8).reshape(h, w, 3).copy()
