"""Forward kinematics for the 32-joint Human3.6M skeleton.

Pose files store one exponential-map (axis-angle) triple per joint.  The
chain below turns those into 3D joint positions in millimetres using the
row-vector convention of the reference preprocessing: a child's offset is
rotated by its parent's accumulated rotation, and local rotations
pre-multiply down the chain.  The caller decides what to do with the
root's rotation; the export pipeline zeroes it (and the translation) so
clips come out root-relative and orientation-normalised.
"""

from __future__ import annotations

import os

import numpy as np

NUM_JOINTS = 32

# parent of each joint, -1 marks the root
PARENTS = (
    -1, 0, 1, 2, 3, 4, 0, 6, 7, 8, 9, 0, 11, 12, 13, 14, 12, 16, 17,
    18, 19, 20, 19, 22, 12, 24, 25, 26, 27, 28, 27, 30,
)

# skeleton names as shipped with the dataset ("Site" marks end effectors)
JOINT_NAMES = (
    "Hips", "RightUpLeg", "RightLeg", "RightFoot", "RightToeBase", "Site",
    "LeftUpLeg", "LeftLeg", "LeftFoot", "LeftToeBase", "Site", "Spine",
    "Spine1", "Neck", "Head", "Site", "LeftShoulder", "LeftArm",
    "LeftForeArm", "LeftHand", "LeftHandThumb", "Site", "L_Wrist_End",
    "Site", "RightShoulder", "RightArm", "RightForeArm", "RightHand",
    "RightHandThumb", "Site", "R_Wrist_End", "Site",
)

# resting-pose bone offsets in mm, one row per joint
OFFSETS_MM = np.array([
    [0.0, 0.0, 0.0],
    [-132.948591, 0.0, 0.0],
    [0.0, -442.894612, 0.0],
    [0.0, -454.206447, 0.0],
    [0.0, 0.0, 162.767078],
    [0.0, 0.0, 74.999437],
    [132.948826, 0.0, 0.0],
    [0.0, -442.894413, 0.0],
    [0.0, -454.206590, 0.0],
    [0.0, 0.0, 162.767426],
    [0.0, 0.0, 74.999948],
    [0.0, 0.1, 0.0],
    [0.0, 233.383263, 0.0],
    [0.0, 257.077681, 0.0],
    [0.0, 121.134938, 0.0],
    [0.0, 115.002227, 0.0],
    [0.0, 257.077681, 0.0],
    [0.0, 151.034226, 0.0],
    [0.0, 278.882773, 0.0],
    [0.0, 251.733451, 0.0],
    [0.0, 0.0, 0.0],
    [0.0, 0.0, 99.999627],
    [0.0, 100.000188, 0.0],
    [0.0, 0.0, 0.0],
    [0.0, 257.077681, 0.0],
    [0.0, 151.031437, 0.0],
    [0.0, 278.892924, 0.0],
    [0.0, 251.728680, 0.0],
    [0.0, 0.0, 0.0],
    [0.0, 0.0, 99.999888],
    [0.0, 137.499922, 0.0],
    [0.0, 0.0, 0.0],
])

DEFAULT_SUBSET_FILE = os.path.join(os.path.dirname(__file__), "joint_subset.txt")


class SubsetError(ValueError):
    """Raised when a joint-subset file cannot be used."""


def rotation_matrices(expmaps: np.ndarray) -> np.ndarray:
    """Batched Rodrigues formula: (..., 3) axis-angle -> (..., 3, 3).

    The float32-epsilon guard on the axis normalisation matches the
    reference preprocessing exactly, so a zero vector maps to the
    identity without a special case.
    """
    r = np.asarray(expmaps, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1, keepdims=True)
    axis = r / (theta + np.finfo(np.float32).eps)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    k = np.stack([
        np.stack([zero, -z, y], axis=-1),
        np.stack([z, zero, -x], axis=-1),
        np.stack([-y, x, zero], axis=-1),
    ], axis=-2)
    t = theta[..., None]
    return np.eye(3) + np.sin(t) * k + (1.0 - np.cos(t)) * (k @ k)


def positions(expmaps: np.ndarray) -> np.ndarray:
    """Run the kinematic chain over (F, 32, 3) exponential maps.

    Returns (F, 32, 3) joint positions in mm with the root pinned at the
    origin.  A single (32, 3) pose is accepted and returned as (32, 3).
    """
    exp = np.asarray(expmaps, dtype=np.float64)
    single = exp.ndim == 2
    if single:
        exp = exp[None]
    if exp.shape[-2:] != (NUM_JOINTS, 3):
        raise ValueError(f"expected (F, {NUM_JOINTS}, 3) exponential maps, got {exp.shape}")
    local = rotation_matrices(exp)  # (F, 32, 3, 3)
    rot = np.empty_like(local)  # accumulated, row-vector convention
    xyz = np.zeros((exp.shape[0], NUM_JOINTS, 3))
    for j in range(NUM_JOINTS):
        parent = PARENTS[j]
        if parent < 0:
            rot[:, j] = local[:, j]
            continue
        # parents precede children in index order, so one pass suffices
        xyz[:, j] = OFFSETS_MM[j] @ rot[:, parent] + xyz[:, parent]
        rot[:, j] = local[:, j] @ rot[:, parent]
    return xyz[0] if single else xyz


def load_joint_subset(path=None) -> np.ndarray:
    """Read a joint index list: one index per line, '#' starts a comment.

    The shipped default keeps the 22 joints shared by the comparison
    evaluation protocols; pass another file to export a different set.
    """
    chosen = DEFAULT_SUBSET_FILE if path is None else path
    indices: list[int] = []
    with open(chosen) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                value = int(text)
            except ValueError:
                raise SubsetError(f"{chosen}:{lineno}: {text!r} is not a joint index") from None
            if not 0 <= value < NUM_JOINTS:
                raise SubsetError(f"{chosen}:{lineno}: index {value} outside 0..{NUM_JOINTS - 1}")
            indices.append(value)
    if not indices:
        raise SubsetError(f"{chosen}: no joint indices found")
    if len(set(indices)) != len(indices):
        raise SubsetError(f"{chosen}: duplicate joint indices")
    return np.array(indices, dtype=np.int64)
