"""
Trajectory alignment and pose-error metrics used at evaluation time, plus the
TUM trajectory file format (``frame_id tx ty tz qx qy qz qw``).
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from flownerf.exceptions.Exceptions import (
    AlignmentException,
    ContractException,
    FormatParseException,
    StorageException,
)

logger = logging.getLogger(__name__)


@dataclass
class Trajectory:
    frame_ids: list
    positions: np.ndarray     # (n, 3)
    quaternions: np.ndarray   # (n, 4), scalar last

    def __len__(self):
        return len(self.frame_ids)

    def rotations(self):
        return Rotation.from_quat(self.quaternions).as_matrix()

    def pose_vectors(self):
        rotvecs = Rotation.from_quat(self.quaternions).as_rotvec()
        return np.concatenate([rotvecs, self.positions], axis=-1)

    @classmethod
    def from_pose_vectors(cls, vectors, frame_ids=None):
        vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, 6)
        ids = list(range(len(vectors))) if frame_ids is None else list(frame_ids)
        quats = Rotation.from_rotvec(vectors[:, :3]).as_quat()
        return cls(ids, vectors[:, 3:].copy(), quats)

    @classmethod
    def from_matrices(cls, rotations, positions, frame_ids=None):
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        ids = list(range(len(positions))) if frame_ids is None else list(frame_ids)
        return cls(ids, positions.copy(), Rotation.from_matrix(np.asarray(rotations)).as_quat())


def umeyama_align(est, gt):
    """
    Closed-form similarity (s, R, t) minimizing sum ||gt - (s R est + t)||².

    Raises AlignmentException when fewer than three non-collinear positions
    are given.
    """
    est = np.asarray(est, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if est.shape != gt.shape or est.ndim != 2 or est.shape[1] != 3:
        raise ContractException(f"Trajectories must be matching (n, 3) arrays, got {est.shape} and {gt.shape}")
    n = len(est)
    if n < 3:
        raise AlignmentException(f"Alignment needs at least 3 positions, got {n}")

    mu_est = est.mean(axis=0)
    mu_gt = gt.mean(axis=0)
    est_c = est - mu_est
    gt_c = gt - mu_gt
    spread = np.linalg.svd(est_c, compute_uv=False)
    if spread[0] < 1e-12 or spread[1] < 1e-9 * spread[0]:
        raise AlignmentException("Estimated trajectory is degenerate (coincident or collinear positions)")

    cov = gt_c.T @ est_c / n
    sigma2 = (est_c ** 2).sum() / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = np.trace(np.diag(D) @ S) / sigma2
    t = mu_gt - s * R @ mu_est
    return s, R, t


def _rotation_angle_deg(R):
    cos_angle = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos_angle)))


def pose_metrics(est_rotations, est_positions, gt_rotations, gt_positions, align=True):
    """
    ATE (RMSE of aligned positions) and RPE over consecutive pairs.

    RPE_t is reported in raw scene units, RPE_r in degrees.
    """
    est_R = np.asarray(est_rotations, dtype=np.float64)
    est_t = np.asarray(est_positions, dtype=np.float64)
    gt_R = np.asarray(gt_rotations, dtype=np.float64)
    gt_t = np.asarray(gt_positions, dtype=np.float64)
    if len(est_t) != len(gt_t) or len(est_R) != len(gt_R) or len(est_R) != len(est_t):
        raise ContractException(f"Trajectory lengths differ: {len(est_t)} estimated vs {len(gt_t)} ground truth")

    if align:
        s, R_a, t_a = umeyama_align(est_t, gt_t)
        est_t = s * est_t @ R_a.T + t_a
        est_R = np.einsum("ij,njk->nik", R_a, est_R)

    ate = float(np.sqrt(np.mean(np.sum((est_t - gt_t) ** 2, axis=-1))))

    trans_errors, rot_errors = [], []
    for k in range(len(gt_t) - 1):
        rel_gt_R = gt_R[k].T @ gt_R[k + 1]
        rel_gt_t = gt_R[k].T @ (gt_t[k + 1] - gt_t[k])
        rel_est_R = est_R[k].T @ est_R[k + 1]
        rel_est_t = est_R[k].T @ (est_t[k + 1] - est_t[k])
        err_R = rel_gt_R.T @ rel_est_R
        err_t = rel_gt_R.T @ (rel_est_t - rel_gt_t)
        trans_errors.append(float(np.linalg.norm(err_t)))
        rot_errors.append(_rotation_angle_deg(err_R))

    return {
        "ATE": ate,
        "RPE_t": float(np.mean(trans_errors)) if trans_errors else 0.0,
        "RPE_r": float(np.mean(rot_errors)) if rot_errors else 0.0,
    }


def write_tum(path, trajectory):
    lines = []
    for fid, p, q in zip(trajectory.frame_ids, trajectory.positions, trajectory.quaternions):
        values = " ".join(repr(float(x)) for x in (*p, *q))
        lines.append(f"{fid} {values}\n")
    try:
        Path(path).write_bytes("".join(lines).encode("utf-8"))
    except OSError as e:
        raise StorageException(f"Cannot write trajectory {path}: {e}")


def read_tum(path):
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise StorageException(f"Cannot read trajectory {path}: {e}")
    ids, positions, quats = [], [], []
    offset = 0
    for line in data.decode("utf-8").split("\n"):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            parts = stripped.split(" ")
            if len(parts) != 8:
                raise FormatParseException(path, offset, f"expected 8 fields, found {len(parts)}")
            try:
                ids.append(int(parts[0]))
                values = [float(x) for x in parts[1:]]
            except ValueError:
                raise FormatParseException(path, offset, "non-numeric field")
            positions.append(values[:3])
            quats.append(values[3:])
        offset += len(line.encode("utf-8")) + 1
    return Trajectory(ids, np.array(positions).reshape(-1, 3), np.array(quats).reshape(-1, 4))
