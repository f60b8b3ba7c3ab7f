"""Gaussian scene representation.

Each primitive carries a 3D mean, spherical-harmonics color coefficients
(degree 3, 16 per channel), an opacity logit, per-axis log scales, and an
orientation quaternion (w, x, y, z). Parameters live in unconstrained space;
activations (exp, sigmoid, normalize) are applied at use sites so optimizer
steps stay well-behaved.

Checkpoints are binary little-endian PLY with double-precision properties, so
a save/load round trip is value-exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)
MAX_SH_DEGREE = 3
NUM_SH_COEFFS = (MAX_SH_DEGREE + 1) ** 2  # 16


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    return float(np.log(p / (1.0 - p)))


# ---------------------------------------------------------------------------
# Quaternions and covariance


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from unit quaternions (w, x, y, z). Accepts a single
    quaternion (4,) or a batch (N, 4)."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a single rotation matrix, w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def _drot_dquat(q: np.ndarray) -> np.ndarray:
    """d(rotation matrix)/d(unit quaternion components): (N, 4, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)
    d = np.empty((len(q), 4, 3, 3))
    d[:, 0] = 2 * np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )
    d[:, 1] = 2 * np.stack(
        [
            np.stack([zero, y, z], axis=-1),
            np.stack([y, -2 * x, -w], axis=-1),
            np.stack([z, w, -2 * x], axis=-1),
        ],
        axis=-2,
    )
    d[:, 2] = 2 * np.stack(
        [
            np.stack([-2 * y, x, w], axis=-1),
            np.stack([x, zero, z], axis=-1),
            np.stack([-w, z, -2 * y], axis=-1),
        ],
        axis=-2,
    )
    d[:, 3] = 2 * np.stack(
        [
            np.stack([-2 * z, -w, x], axis=-1),
            np.stack([w, -2 * z, y], axis=-1),
            np.stack([x, y, zero], axis=-1),
        ],
        axis=-2,
    )
    return d


def covariance_from_params(log_scales: np.ndarray, quaternions: np.ndarray) -> np.ndarray:
    """Sigma = R diag(exp(2 s)) R^T, guaranteed symmetric PSD. (N, 3, 3)."""
    norms = np.linalg.norm(quaternions, axis=1, keepdims=True)
    R = quat_to_rotmat(quaternions / norms)
    M = R * np.exp(log_scales)[:, None, :]  # R @ diag(scale)
    return M @ M.transpose(0, 2, 1)


def covariance_backward(
    log_scales: np.ndarray, quaternions: np.ndarray, grad_sigma: np.ndarray
) -> tuple:
    """Pull dL/dSigma back to (dL/dlog_scales, dL/dquaternions).

    grad_sigma may be asymmetric; it is symmetrized first because Sigma is
    built symmetric. The quaternion gradient includes the normalization
    projection, so it applies to the raw (unnormalized) parameters.
    """
    norms = np.linalg.norm(quaternions, axis=1, keepdims=True)
    q_unit = quaternions / norms
    R = quat_to_rotmat(q_unit)
    scales = np.exp(log_scales)
    M = R * scales[:, None, :]
    g_sym = grad_sigma + grad_sigma.transpose(0, 2, 1)  # == 2*sym(grad)
    dM = g_sym @ M  # dL/dM for Sigma = M M^T
    # M = R diag(s): dL/ds_j = sum_i R_ij dM_ij, dL/dR = dM diag(s)
    d_scales = np.einsum("nij,nij->nj", R, dM)
    d_log_scales = d_scales * scales
    dR = dM * scales[:, None, :]
    dRdq = _drot_dquat(q_unit)  # (N, 4, 3, 3)
    d_q_unit = np.einsum("nkij,nij->nk", dRdq, dR)
    # through q_unit = q / |q|: (I - u u^T) / |q|
    proj = d_q_unit - q_unit * np.einsum("nk,nk->n", q_unit, d_q_unit)[:, None]
    return d_log_scales, proj / norms


# ---------------------------------------------------------------------------
# Spherical harmonics


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values for unit directions, (N, (degree+1)^2)."""
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise ValueError(f"sh degree must be in [0, {MAX_SH_DEGREE}], got {degree}")
    n = len(dirs)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out = np.empty((n, (degree + 1) ** 2))
    out[:, 0] = SH_C0
    if degree >= 1:
        out[:, 1] = -SH_C1 * y
        out[:, 2] = SH_C1 * z
        out[:, 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 4] = SH_C2[0] * x * y
        out[:, 5] = SH_C2[1] * y * z
        out[:, 6] = SH_C2[2] * (2 * zz - xx - yy)
        out[:, 7] = SH_C2[3] * x * z
        out[:, 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[:, 9] = SH_C3[0] * y * (3 * xx - yy)
        out[:, 10] = SH_C3[1] * x * y * z
        out[:, 11] = SH_C3[2] * y * (4 * zz - xx - yy)
        out[:, 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        out[:, 13] = SH_C3[4] * x * (4 * zz - xx - yy)
        out[:, 14] = SH_C3[5] * z * (xx - yy)
        out[:, 15] = SH_C3[6] * x * (xx - 3 * yy)
    return out


def sh_basis_jacobian(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d(basis)/d(direction components), (N, (degree+1)^2, 3). Treats the
    direction entries as free variables; callers chain through normalization."""
    n = len(dirs)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    jac = np.zeros((n, (degree + 1) ** 2, 3))
    if degree >= 1:
        jac[:, 1, 1] = -SH_C1
        jac[:, 2, 2] = SH_C1
        jac[:, 3, 0] = -SH_C1
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        jac[:, 4, 0] = SH_C2[0] * y
        jac[:, 4, 1] = SH_C2[0] * x
        jac[:, 5, 1] = SH_C2[1] * z
        jac[:, 5, 2] = SH_C2[1] * y
        jac[:, 6, 0] = SH_C2[2] * (-2 * x)
        jac[:, 6, 1] = SH_C2[2] * (-2 * y)
        jac[:, 6, 2] = SH_C2[2] * (4 * z)
        jac[:, 7, 0] = SH_C2[3] * z
        jac[:, 7, 2] = SH_C2[3] * x
        jac[:, 8, 0] = SH_C2[4] * (2 * x)
        jac[:, 8, 1] = SH_C2[4] * (-2 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        jac[:, 9, 0] = SH_C3[0] * (6 * x * y)
        jac[:, 9, 1] = SH_C3[0] * (3 * xx - 3 * yy)
        jac[:, 10, 0] = SH_C3[1] * (y * z)
        jac[:, 10, 1] = SH_C3[1] * (x * z)
        jac[:, 10, 2] = SH_C3[1] * (x * y)
        jac[:, 11, 0] = SH_C3[2] * (-2 * x * y)
        jac[:, 11, 1] = SH_C3[2] * (4 * zz - xx - 3 * yy)
        jac[:, 11, 2] = SH_C3[2] * (8 * y * z)
        jac[:, 12, 0] = SH_C3[3] * (-6 * x * z)
        jac[:, 12, 1] = SH_C3[3] * (-6 * y * z)
        jac[:, 12, 2] = SH_C3[3] * (6 * zz - 3 * xx - 3 * yy)
        jac[:, 13, 0] = SH_C3[4] * (4 * zz - 3 * xx - yy)
        jac[:, 13, 1] = SH_C3[4] * (-2 * x * y)
        jac[:, 13, 2] = SH_C3[4] * (8 * x * z)
        jac[:, 14, 0] = SH_C3[5] * (2 * x * z)
        jac[:, 14, 1] = SH_C3[5] * (-2 * y * z)
        jac[:, 14, 2] = SH_C3[5] * (xx - yy)
        jac[:, 15, 0] = SH_C3[6] * (3 * xx - 3 * yy)
        jac[:, 15, 1] = SH_C3[6] * (-6 * x * y)
    return jac


def eval_sh(coeffs: np.ndarray, dirs: np.ndarray, degree: int) -> np.ndarray:
    """View-dependent colors max(0, sum_k c_k Y_k(dir) + 0.5), (N, 3)."""
    basis = sh_basis(dirs, degree)
    k = basis.shape[1]
    colors = np.einsum("nk,nkc->nc", basis, coeffs[:, :k, :]) + 0.5
    return np.maximum(colors, 0.0)


# ---------------------------------------------------------------------------
# The cloud


@dataclass
class GaussianCloud:
    positions: np.ndarray  # (N, 3)
    sh_coeffs: np.ndarray  # (N, 16, 3), index 0 is the DC term
    opacity_logits: np.ndarray  # (N,)
    log_scales: np.ndarray  # (N, 3)
    quaternions: np.ndarray  # (N, 4) (w, x, y, z), not necessarily unit
    active_sh_degree: int = 0

    @property
    def count(self) -> int:
        return len(self.positions)

    def validate(self) -> None:
        n = self.count
        shapes = {
            "positions": (self.positions, (n, 3)),
            "sh_coeffs": (self.sh_coeffs, (n, NUM_SH_COEFFS, 3)),
            "opacity_logits": (self.opacity_logits, (n,)),
            "log_scales": (self.log_scales, (n, 3)),
            "quaternions": (self.quaternions, (n, 4)),
        }
        for field_name, (arr, want) in shapes.items():
            if arr.shape != want:
                raise ValueError(f"{field_name} shape {arr.shape} != {want}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{field_name} contains non-finite values")
        if n and np.linalg.norm(self.quaternions, axis=1).min() < 1e-12:
            raise ValueError("degenerate (near-zero) quaternion")
        if not 0 <= self.active_sh_degree <= MAX_SH_DEGREE:
            raise ValueError(f"active_sh_degree out of range: {self.active_sh_degree}")

    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def covariances(self) -> np.ndarray:
        return covariance_from_params(self.log_scales, self.quaternions)

    def take(self, indices) -> "GaussianCloud":
        return GaussianCloud(
            self.positions[indices].copy(),
            self.sh_coeffs[indices].copy(),
            self.opacity_logits[indices].copy(),
            self.log_scales[indices].copy(),
            self.quaternions[indices].copy(),
            self.active_sh_degree,
        )

    @staticmethod
    def concat(a: "GaussianCloud", b: "GaussianCloud") -> "GaussianCloud":
        return GaussianCloud(
            np.concatenate([a.positions, b.positions]),
            np.concatenate([a.sh_coeffs, b.sh_coeffs]),
            np.concatenate([a.opacity_logits, b.opacity_logits]),
            np.concatenate([a.log_scales, b.log_scales]),
            np.concatenate([a.quaternions, b.quaternions]),
            a.active_sh_degree,
        )


def init_from_seed(seeds, sh_degree: int = MAX_SH_DEGREE, initial_opacity: float = 0.1,
                   extent: float = 1.0) -> GaussianCloud:
    """Place one isotropic Gaussian per seed point.

    Scale is the mean distance to the 3 nearest neighbors (log-space,
    isotropic); a single-point cloud has no neighbors, so it falls back to a
    tenth of the supplied scene extent. DC color matches the seed RGB under
    the SH convention color = C0 * dc + 0.5; higher-order coefficients start
    at zero.
    """
    xyz = np.asarray(seeds.xyz, dtype=np.float64)
    rgb = np.asarray(seeds.rgb, dtype=np.float64)
    n = len(xyz)
    if n == 0:
        raise ValueError("cannot initialize from an empty seed cloud")
    if n >= 2:
        k = min(4, n)
        dists, _ = cKDTree(xyz).query(xyz, k=k)
        mean_dist = dists[:, 1:].mean(axis=1)
    else:
        mean_dist = np.full(n, 0.1 * extent)
    mean_dist = np.maximum(mean_dist, 1e-7)
    sh = np.zeros((n, NUM_SH_COEFFS, 3))
    sh[:, 0, :] = (rgb - 0.5) / SH_C0
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    cloud = GaussianCloud(
        positions=xyz.copy(),
        sh_coeffs=sh,
        opacity_logits=np.full(n, logit(initial_opacity)),
        log_scales=np.repeat(np.log(mean_dist)[:, None], 3, axis=1),
        quaternions=quats,
        active_sh_degree=min(sh_degree, MAX_SH_DEGREE),
    )
    cloud.validate()
    return cloud


# ---------------------------------------------------------------------------
# PLY checkpoints

_PLY_FIELDS = (
    ["x", "y", "z"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(45)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


def save_ply(cloud: GaussianCloud, path) -> None:
    """Binary little-endian PLY, all properties double precision.

    f_dc_* is the SH DC term per channel; f_rest_* holds the 15 higher-order
    coefficients channel-major (all red, then green, then blue).
    """
    cloud.validate()
    n = cloud.count
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property double {name}" for name in _PLY_FIELDS]
    header.append("end_header")
    rec = np.empty((n, len(_PLY_FIELDS)))
    rec[:, 0:3] = cloud.positions
    rec[:, 3:6] = cloud.sh_coeffs[:, 0, :]
    rec[:, 6:51] = cloud.sh_coeffs[:, 1:, :].transpose(0, 2, 1).reshape(n, 45)
    rec[:, 51] = cloud.opacity_logits
    rec[:, 52:55] = cloud.log_scales
    rec[:, 55:59] = cloud.quaternions
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(rec, dtype="<f8").tobytes())


_PLY_TYPES = {"double": "<f8", "float": "<f4"}


def load_ply(path) -> GaussianCloud:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = fh.readline().strip()
        if fmt != b"format binary_little_endian 1.0":
            raise ValueError(f"{path}: expected binary little-endian PLY, got {fmt.decode()}")
        n = None
        props = []
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: header ended prematurely")
            line = line.strip().decode("ascii")
            if line == "end_header":
                break
            if line.startswith("comment"):
                continue
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            elif line.startswith("element"):
                raise ValueError(f"{path}: unexpected element {line.split()[1]!r}")
            elif line.startswith("property"):
                _, ptype, pname = line.split()
                if ptype not in _PLY_TYPES:
                    raise ValueError(f"{path}: unsupported property type {ptype}")
                props.append((pname, _PLY_TYPES[ptype]))
        if n is None:
            raise ValueError(f"{path}: missing vertex element")
        data = np.frombuffer(fh.read(), dtype=np.dtype(props), count=n)

    names = {name for name, _ in props}
    required = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"}
    missing = sorted(required - names)
    if missing:
        raise ValueError(f"{path}: missing properties {missing}")

    def col(name):
        return data[name].astype(np.float64)

    sh = np.zeros((n, NUM_SH_COEFFS, 3))
    for c in range(3):
        sh[:, 0, c] = col(f"f_dc_{c}")
    rest_names = sorted(
        (name for name in names if name.startswith("f_rest_")),
        key=lambda s: int(s.split("_")[-1]),
    )
    n_rest = len(rest_names)
    if n_rest % 3 != 0 or n_rest > 45:
        raise ValueError(f"{path}: bad f_rest_* count {n_rest}")
    per_channel = n_rest // 3
    for j, name in enumerate(rest_names):
        channel, k = divmod(j, per_channel) if per_channel else (0, 0)
        sh[:, k + 1, channel] = col(name)
    # coefficients present per channel = 1 + per_channel = (degree+1)^2
    degree = int(round(np.sqrt(per_channel + 1))) - 1
    cloud = GaussianCloud(
        positions=np.stack([col("x"), col("y"), col("z")], axis=1),
        sh_coeffs=sh,
        opacity_logits=col("opacity"),
        log_scales=np.stack([col(f"scale_{i}") for i in range(3)], axis=1),
        quaternions=np.stack([col(f"rot_{i}") for i in range(4)], axis=1),
        active_sh_degree=degree,
    )
    cloud.validate()
    return cloud
