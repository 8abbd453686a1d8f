"""Walk a local Human3.6M pose tree and emit MOTB clips for one split.

Source layout (the widely mirrored exponential-map text release):

    <src>/S1/walking_1.txt    one row per 50 fps frame, 99 comma-separated
    <src>/S1/walking_2.txt    values: 3 global-translation numbers, then
    ...                       32 exponential-map triples (root first)

``<src>/dataset`` and ``<src>/h3.6m/dataset`` are also accepted as roots.
Conversion drops the global translation, zeroes the global rotation, runs
forward kinematics, keeps the configured joint subset and every second
frame (50 -> 25 fps).  Per-file conversion is independent -- it could be
parallelised -- but runs sequentially here so output and manifest order
are trivially deterministic.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from . import motb, skeleton

SPLIT_SUBJECTS = {
    "train": ("S1", "S6", "S7", "S8", "S9"),
    "val": ("S11",),
    "test": ("S5",),
}
SOURCE_FPS = 50
TARGET_FPS = 25
EXPECTED_COLUMNS = 3 + skeleton.NUM_JOINTS * 3  # 99
MANIFEST_NAME = "manifest.txt"


class ExportError(Exception):
    """Raised when an export cannot produce what was asked for."""


@dataclass
class ClipRecord:
    output: str  # file name inside the split directory
    action: str
    frames: int
    sha256: str
    source: str  # path relative to the source root


@dataclass
class ExportManifest:
    split: str
    subjects: tuple
    joints: int
    fps: int
    clips: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # (source, reason) pairs

    def format(self) -> str:
        """Tab-separated structured text; stable across re-exports
        because source paths are stored relative to the source root."""
        lines = [
            "# h36m-exporter manifest",
            f"split={self.split}",
            "subjects=" + ",".join(self.subjects),
            f"joints={self.joints}",
            f"fps={self.fps}",
            f"clips={len(self.clips)}",
        ]
        for c in self.clips:
            lines.append("clip\t%s\taction=%s\tframes=%d\tsha256=%s\tsource=%s"
                         % (c.output, c.action, c.frames, c.sha256, c.source))
        for source, reason in self.skipped:
            lines.append(f"skip\t{source}\t{reason}")
        return "\n".join(lines) + "\n"


def find_source_root(src_dir: str) -> str:
    """Return the directory that actually holds the S* subject folders."""
    candidates = (src_dir, os.path.join(src_dir, "dataset"),
                  os.path.join(src_dir, "h3.6m", "dataset"))
    for cand in candidates:
        if not os.path.isdir(cand):
            continue
        subjects = [e for e in os.listdir(cand) if e.startswith("S")
                    and e[1:].isdigit() and os.path.isdir(os.path.join(cand, e))]
        if subjects:
            return cand
    raise ExportError(f"no S* subject directories under {src_dir}")


def parse_pose_file(path: str) -> np.ndarray:
    """Comma-separated floats, one 99-value row per source frame."""
    try:
        values = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ExportError(f"unparsable row: {exc}") from None
    if values.size == 0:
        raise ExportError("no frames")
    if values.shape[1] != EXPECTED_COLUMNS:
        raise ExportError(f"expected {EXPECTED_COLUMNS} columns, found {values.shape[1]}")
    if not np.all(np.isfinite(values)):
        raise ExportError("non-finite values in source")
    return values


def convert(values: np.ndarray, subset: np.ndarray) -> np.ndarray:
    """(F, 99) source rows -> (ceil(F/2), 3*len(subset)) float32 mm."""
    rotations = values[:, 3:].reshape(-1, skeleton.NUM_JOINTS, 3).copy()
    rotations[:, 0] = 0.0  # root expmap is the global orientation: off
    rotations = rotations[::2]  # 50 -> 25 fps by frame dropping
    xyz = skeleton.positions(rotations)
    return xyz[:, subset].reshape(len(rotations), -1).astype("<f4")


def action_label(file_name: str) -> str:
    """walking_1.txt -> walking; the trailing _N is the subaction take."""
    stem = file_name[: -len(".txt")]
    head, _, tail = stem.rpartition("_")
    return head if head and tail.isdigit() else stem


def export(src_dir: str, out_dir: str, split: str, subset_file=None) -> ExportManifest:
    """Convert every pose file of the split's subjects; returns the manifest.

    Unreadable or malformed files and missing subjects are recorded as
    skipped rather than aborting the run.  The manifest is written to the
    split directory even when the export comes up empty, so the skip
    reasons stay inspectable; emptiness still raises.
    """
    if split not in SPLIT_SUBJECTS:
        known = ", ".join(sorted(SPLIT_SUBJECTS))
        raise ExportError(f"unknown split {split!r}; expected one of {known}")
    subset = skeleton.load_joint_subset(subset_file)
    root = find_source_root(src_dir)
    manifest = ExportManifest(split, SPLIT_SUBJECTS[split], len(subset), TARGET_FPS)
    split_dir = os.path.join(out_dir, split)
    os.makedirs(split_dir, exist_ok=True)
    for subject in SPLIT_SUBJECTS[split]:
        subject_dir = os.path.join(root, subject)
        if not os.path.isdir(subject_dir):
            manifest.skipped.append((subject, "subject directory missing"))
            continue
        for name in sorted(os.listdir(subject_dir)):
            if not name.endswith(".txt"):
                continue
            rel = os.path.join(subject, name)
            try:
                values = parse_pose_file(os.path.join(subject_dir, name))
            except ExportError as exc:
                manifest.skipped.append((rel, str(exc)))
                continue
            frames = convert(values, subset)
            action = action_label(name)
            out_name = f"{subject}_{name[:-len('.txt')]}.motb"
            blob = motb.encode(action, subject, TARGET_FPS, frames)
            out_path = os.path.join(split_dir, out_name)
            with open(out_path, "wb") as fh:
                fh.write(blob)
            report = motb.check_file(out_path)
            if not report.ok:  # writer and validator disagree: a bug, not data
                raise ExportError(f"{out_name}: invalid after writing: {report.reason}")
            manifest.clips.append(ClipRecord(
                output=out_name, action=action, frames=len(frames),
                sha256=hashlib.sha256(blob).hexdigest(), source=rel))
    with open(os.path.join(split_dir, MANIFEST_NAME), "w") as fh:
        fh.write(manifest.format())
    if not manifest.clips:
        raise ExportError(f"split {split!r}: no clips exported from {root}")
    return manifest
