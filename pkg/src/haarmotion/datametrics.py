"""Motion clips, the MOTB clip file format, window sampling, the per-horizon
joint-position error metric, synthetic motion, and the evaluation driver.

MOTB layout (all integers little-endian u32, floats little-endian f32):

    magic "MOTB0001" | K | fps | F | len(action) | len(subject)
    action bytes (UTF-8) | subject bytes (UTF-8) | F*3K floats, row-major

Evaluation draws fixed-length windows (input frames + a 25-frame target
covering 1000 ms at 25 fps), rolls the model out auto-regressively, and
averages per-joint Euclidean error at the eight standard frame offsets.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod

MAGIC = b"MOTB0001"
EVAL_OFFSETS = (2, 4, 8, 10, 14, 18, 22, 25)
EVAL_MILLISECONDS = (80, 160, 320, 400, 560, 720, 880, 1000)
EVAL_HORIZON = 25

SYNTH_ACTIONS = (
    "sway", "reach", "bounce", "twist", "wave", "lean", "circle", "stretch",
)


class ClipFormatError(Exception):
    """Base class for malformed MOTB files."""


class BadMagicError(ClipFormatError):
    pass


class TruncatedError(ClipFormatError):
    pass


class PayloadMismatchError(ClipFormatError):
    """Header promises a different payload size than the file carries."""


class SamplingError(Exception):
    """No valid windows available for a requested action set."""


@dataclass
class MotionClip:
    """One recorded motion: F frames of K joints, 3 coordinates each, in mm.

    Frames are kept in float32 so a write/read cycle is bit-exact.
    """

    action: str
    subject: str
    fps: int
    frames: np.ndarray  # F x 3K

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[1] % 3:
            raise ValueError(f"frames must be F x 3K, got {self.frames.shape}")
        if self.fps < 1:
            raise ValueError(f"fps must be >= 1, got {self.fps}")
        if not np.isfinite(self.frames).all():
            raise ValueError("clip contains non-finite coordinates")

    @property
    def joints(self) -> int:
        return self.frames.shape[1] // 3

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def write_clip(clip: MotionClip, path: str) -> None:
    action = clip.action.encode("utf-8")
    subject = clip.subject.encode("utf-8")
    header = MAGIC + struct.pack(
        "<5I", clip.joints, clip.fps, clip.num_frames, len(action), len(subject)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(action)
        fh.write(subject)
        fh.write(clip.frames.astype("<f4").tobytes())


def read_clip(path: str) -> MotionClip:
    blob = open(path, "rb").read()
    if blob[:8] != MAGIC:
        raise BadMagicError(f"{path}: magic {blob[:8]!r} is not {MAGIC!r}")
    if len(blob) < 8 + 20:
        raise TruncatedError(f"{path}: header cut short at {len(blob)} bytes")
    joints, fps, num_frames, alen, slen = struct.unpack("<5I", blob[8:28])
    offset = 28
    if len(blob) < offset + alen + slen:
        raise TruncatedError(f"{path}: labels cut short")
    action = blob[offset : offset + alen].decode("utf-8")
    subject = blob[offset + alen : offset + alen + slen].decode("utf-8")
    offset += alen + slen
    expected = num_frames * joints * 3 * 4
    got = len(blob) - offset
    if got < expected:
        raise TruncatedError(f"{path}: payload holds {got} bytes, header promises {expected}")
    if got > expected:
        raise PayloadMismatchError(
            f"{path}: {got - expected} trailing bytes beyond the promised {expected}"
        )
    frames = np.frombuffer(blob, dtype="<f4", count=num_frames * joints * 3, offset=offset)
    return MotionClip(action, subject, int(fps), frames.reshape(num_frames, joints * 3))


# ----------------------------------------------------------------- windows


@dataclass
class EvalWindow:
    input: np.ndarray  # T x C
    target: np.ndarray  # EVAL_HORIZON x C
    action: str


def window_starts(clips: list, length: int, count: int, rng) -> list:
    """Draw `count` (clip_index, start) pairs uniformly over every valid
    window of `length` frames across the given clips."""
    valid = [max(0, clip.num_frames - length + 1) for clip in clips]
    total = sum(valid)
    if total == 0:
        raise SamplingError(f"no clip offers a window of {length} frames")
    bounds = np.cumsum(valid)
    picks = rng.integers(0, total, size=count)
    out = []
    for p in picks:
        ci = int(np.searchsorted(bounds, p, side="right"))
        prev = int(bounds[ci - 1]) if ci else 0
        out.append((ci, int(p - prev)))
    return out


def draw_training_windows(clips: list, length: int, count: int, rng) -> np.ndarray:
    """Uniformly sampled windows as a (count, length, C) float64 array."""
    pairs = window_starts(clips, length, count, rng)
    out = np.empty((count, length, clips[0].frames.shape[1]))
    for row, (ci, start) in enumerate(pairs):
        out[row] = clips[ci].frames[start : start + length]
    return out


def sample_windows(
    clips: list, per_action: int, seed: int, frames_in: int = 50
) -> list:
    """Per-action uniform window draws for evaluation, `frames_in` input
    frames plus the fixed 25-frame target horizon each."""
    length = frames_in + EVAL_HORIZON
    by_action: dict[str, list] = {}
    for clip in clips:
        by_action.setdefault(clip.action, []).append(clip)

    too_short = [
        action
        for action, group in sorted(by_action.items())
        if all(clip.num_frames < length for clip in group)
    ]
    if too_short:
        raise SamplingError(
            f"no window of {length} frames possible for actions: {', '.join(too_short)}"
        )

    rng = np.random.default_rng(seed)
    windows = []
    for action in sorted(by_action):
        group = by_action[action]
        for ci, start in window_starts(group, length, per_action, rng):
            frames = group[ci].frames[start : start + length].astype(np.float64)
            windows.append(EvalWindow(frames[:frames_in], frames[frames_in:], action))
    return windows


# ------------------------------------------------------------------ metric


def _offset_errors(pred: np.ndarray, target: np.ndarray, offsets) -> np.ndarray:
    """(batch, H, C) pair -> (batch, len(offsets)) mean-over-joints errors."""
    batch, horizon, c = pred.shape
    offsets = list(offsets)
    if any(o < 1 or o > horizon for o in offsets):
        raise ValueError(f"offsets {offsets} out of range for horizon {horizon}")
    idx = [o - 1 for o in offsets]
    diff = (pred[:, idx] - target[:, idx]).reshape(batch, len(offsets), c // 3, 3)
    return np.sqrt((diff * diff).sum(axis=-1)).mean(axis=-1)


def mpjpe(pred: np.ndarray, target: np.ndarray, offsets=EVAL_OFFSETS) -> np.ndarray:
    """Mean per-joint position error (mm) at 1-based frame offsets after the
    last input frame; offset o reads predicted frame o-1."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.shape[1] % 3:
        raise ValueError("channel count must be divisible by 3")
    return _offset_errors(pred[None], target[None], offsets)[0]


# --------------------------------------------------------------- synthetic


def synth_generate(
    n_clips: int, joints: int = 22, fps: int = 25, length: int = 125, seed: int = 0
) -> list:
    """Deterministic sinusoidal stand-in clips: each joint is a sum of 2-4
    seeded sinusoids (periods 0.4-4 s, amplitudes 20-150 mm) around a fixed
    per-joint offset, so motion is smooth, bounded, and learnable."""
    if n_clips < 0 or joints < 1 or fps < 1 or length < 1:
        raise ValueError("synth_generate needs positive dimensions")
    rng = np.random.default_rng(seed)
    t = np.arange(length) / fps  # seconds
    clips = []
    for i in range(n_clips):
        coords = np.empty((length, joints, 3))
        for j in range(joints):
            base = rng.uniform(-500.0, 500.0, size=3)
            coords[:, j] = base
            for _ in range(int(rng.integers(2, 5))):
                amp = rng.uniform(20.0, 150.0)
                period = rng.uniform(0.4, 4.0)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                direction = rng.normal(size=3)
                direction /= np.linalg.norm(direction)
                wave = np.sin(2.0 * np.pi * t / period + phase)
                coords[:, j] += amp * wave[:, None] * direction
        clips.append(
            MotionClip(
                action=SYNTH_ACTIONS[i % len(SYNTH_ACTIONS)],
                subject=f"SYN{i:03d}",
                fps=fps,
                frames=coords.reshape(length, joints * 3),
            )
        )
    return clips


# -------------------------------------------------------------- evaluation


@dataclass
class EvalReport:
    offsets: tuple
    overall: list  # mm per offset
    per_action: dict  # action -> list of mm per offset
    samples: int
    seed: int
    field_order: tuple = field(default=("offsets", "overall", "per_action"), repr=False)


def evaluate(
    clips: list,
    seed: int,
    net=None,
    per_action: int = 256,
    frames_in: int = 50,
    chunk: int = 256,
) -> EvalReport:
    """Sample windows per action, predict 25 frames (auto-regressive rollout,
    or repeat-last-frame when net is None), and aggregate the metric."""
    windows = sample_windows(clips, per_action, seed, frames_in=frames_in)
    actions = sorted({w.action for w in windows})
    inputs = np.stack([w.input for w in windows])
    targets = np.stack([w.target for w in windows])
    labels = np.array([actions.index(w.action) for w in windows])

    errors = np.empty((len(windows), len(EVAL_OFFSETS)))
    for lo in range(0, len(windows), chunk):
        hi = min(lo + chunk, len(windows))
        if net is None:
            pred = np.repeat(inputs[lo:hi, -1:, :], EVAL_HORIZON, axis=1)
        else:
            pred = model_mod.rollout_batch(net, inputs[lo:hi], EVAL_HORIZON)
        errors[lo:hi] = _offset_errors(pred, targets[lo:hi], EVAL_OFFSETS)

    per_action_table = {
        action: errors[labels == ai].mean(axis=0).tolist()
        for ai, action in enumerate(actions)
    }
    return EvalReport(
        offsets=EVAL_OFFSETS,
        overall=errors.mean(axis=0).tolist(),
        per_action=per_action_table,
        samples=len(windows),
        seed=seed,
    )


def format_report(report: EvalReport) -> str:
    """Serialize a report as line-oriented text; parse_report inverts it."""
    lines = [
        "# motion evaluation report v1",
        "offsets_frames=" + ",".join(str(o) for o in report.offsets),
        "offsets_ms=" + ",".join(str(m) for m in EVAL_MILLISECONDS),
        f"samples={report.samples}",
        f"seed={report.seed}",
        "overall=" + ",".join(repr(v) for v in report.overall),
    ]
    for action in sorted(report.per_action):
        values = ",".join(repr(v) for v in report.per_action[action])
        lines.append(f"action={action} {values}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> EvalReport:
    fields: dict[str, str] = {}
    per_action: dict[str, list] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        if not _:
            raise ValueError(f"report line without '=': {line!r}")
        if key == "action":
            action, _, nums = value.partition(" ")
            per_action[action] = [float(v) for v in nums.split(",")]
        else:
            fields[key] = value
    try:
        return EvalReport(
            offsets=tuple(int(o) for o in fields["offsets_frames"].split(",")),
            overall=[float(v) for v in fields["overall"].split(",")],
            per_action=per_action,
            samples=int(fields["samples"]),
            seed=int(fields["seed"]),
        )
    except KeyError as exc:
        raise ValueError(f"report missing field: {exc}") from None
