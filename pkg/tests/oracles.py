"""Independent reference computations used to check the implementation.

Each oracle takes a different route from the code under test: quaternion
eigenvectors instead of SVD, per-point loops instead of vectorized residuals,
sampling instead of polytope clipping, arbitrary precision instead of float64.
"""

import mpmath
import numpy as np


def horn_similarity(src, dst):
    """Least-squares similarity via Horn's quaternion method.

    Rotation is the top eigenvector of the 4x4 symmetric matrix built from the
    cross-covariance; scale is the least-squares factor for that rotation.
    """
    src, dst = np.asarray(src, float), np.asarray(dst, float)
    mu_s, mu_d = src.mean(0), dst.mean(0)
    a, b = src - mu_s, dst - mu_d
    m = a.T @ b
    sxx, sxy, sxz = m[0]
    syx, syy, syz = m[1]
    szx, szy, szz = m[2]
    n = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    w, v = np.linalg.eigh(n)
    q = v[:, np.argmax(w)]
    rot = quat_to_matrix(q)
    scale = np.sum(b * (a @ rot.T)) / np.sum(a * a)
    return rot, mu_d - scale * rot @ mu_s, scale


def quat_to_matrix(q):
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(r):
    """Shepperd's method, numerically stable on every branch."""
    r = np.asarray(r, float)
    tr = np.trace(r)
    diag = np.array([tr, r[0, 0], r[1, 1], r[2, 2]])
    k = int(np.argmax(diag))
    if k == 0:
        s = 2 * np.sqrt(1 + tr)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif k == 1:
        s = 2 * np.sqrt(1 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif k == 2:
        s = 2 * np.sqrt(1 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = 2 * np.sqrt(1 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q / np.linalg.norm(q)


def quaternion_angle_deg(r1, r2):
    q1, q2 = matrix_to_quat(r1), matrix_to_quat(r2)
    dot = min(1.0, abs(float(np.dot(q1, q2))))
    return np.degrees(2 * np.arccos(dot))


def similarity_matrix(rot, trans, scale):
    m = np.eye(4)
    m[:3, :3] = scale * np.asarray(rot)
    m[:3, 3] = trans
    return m


def brute_residuals(rot, trans, scale, nocs, points, center=0.5):
    """Per-point NOCS residual ||T^-1 d - n|| through an explicit 4x4 inverse."""
    inv = np.linalg.inv(similarity_matrix(rot, trans, scale))
    out = []
    for n, d in zip(nocs, points):
        back = inv @ np.append(d, 1.0)
        out.append(np.sqrt(sum((back[k] + center - n[k]) ** 2 for k in range(3))))
    return np.array(out)


def inlier_max_oracle(n_student, n_teacher):
    return "student" if n_student > n_teacher else "teacher"


def mc_iou(box_a, box_b, n=200_000, seed=0):
    """IoU estimated by uniform sampling inside box ``a``."""
    rng = np.random.default_rng(seed)
    local = (rng.random((n, 3)) - 0.5) * box_a.extents
    pts = local @ box_a.pose.rotation.T + box_a.pose.translation
    frac = box_b.contains(pts).mean()
    inter = frac * box_a.volume
    return inter / (box_a.volume + box_b.volume - inter)


def mp_softmax(logits, dps=50):
    with mpmath.workdps(dps):
        ex = [mpmath.exp(mpmath.mpf(float(v))) for v in logits]
        total = mpmath.fsum(ex)
        return np.array([float(e / total) for e in ex])


def entropy_direct(probs):
    """Mean over leading axes of -sum p log p, skipping exact zeros."""
    probs = np.asarray(probs, float)
    flat = probs.reshape(-1, probs.shape[-1])
    h = [-sum(p * np.log(p) for p in row if p > 0) for row in flat]
    return float(np.mean(h))


def central_diff(f, x, h=1e-5):
    """Gradient of scalar ``f`` at array ``x`` (perturbed in place, then restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor=1e-7):
    """Largest elementwise |a - b| / max(|a|, |b|); entries below ``floor`` in both count as exact."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = np.maximum(np.abs(a), np.abs(b))
    err = np.where(denom < floor, 0.0, np.abs(a - b) / np.where(denom < floor, 1.0, denom))
    return float(err.max()) if err.size else 0.0


def adam_scalar(p, g, m, v, t, lr, b1=0.9, b2=0.999, eps=1e-8):
    """One scalar Adam step written out longhand."""
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    return p - lr * m_hat / (v_hat**0.5 + eps), m, v
