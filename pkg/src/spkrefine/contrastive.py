"""Contrastive distillation objective.

``S[i, j]`` is the mean over the K chunk embeddings of student clip j of
their cosine with teacher embedding i. The loss is the symmetric softmax
cross-entropy of ``tau * S`` with the diagonal as the target, averaged over
rows (teacher -> student) and columns (student -> teacher).
"""
import numpy as np

NORM_TOL = 1e-4


def _check_unit(x, what):
    norms = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        raise ValueError(f"{what} must be L2-normalised (max deviation {np.max(np.abs(norms - 1)):.2e})")


def similarity_matrix(teacher, student):
    """teacher (N, d), student (N, K, d) -> S (N, N)."""
    teacher = np.asarray(teacher)
    if isinstance(student, (list, tuple)):
        if len({len(s) for s in student}) > 1:
            raise ValueError("every student sequence needs the same number of chunk embeddings")
        student = np.stack([np.asarray(s) for s in student])
    if student.ndim != 3 or teacher.ndim != 2 or student.shape[0] != teacher.shape[0] \
            or student.shape[2] != teacher.shape[1]:
        raise ValueError(f"shape mismatch: teacher {teacher.shape}, student {student.shape}")
    if student.shape[1] < 1:
        raise ValueError("need at least one chunk embedding per clip")
    _check_unit(teacher, "teacher embeddings")
    _check_unit(student, "student embeddings")
    return np.einsum("id,jkd->ij", teacher, student) / student.shape[1]


def similarity_backward(dS, teacher, student):
    """Gradients of a scalar w.r.t. teacher (N, d) and student (N, K, d) given dL/dS."""
    K = student.shape[1]
    d_student = np.einsum("ij,id->jd", dS, teacher)[:, None, :].repeat(K, axis=1) / K
    d_teacher = np.einsum("ij,jkd->id", dS, student) / K
    return d_teacher, d_student


def _log_softmax(z, axis):
    zmax = z.max(axis=axis, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def contrastive_loss(S, tau):
    """Return ``(loss, row_loss, col_loss)``; all are non-negative."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("similarity matrix must be square")
    if S.shape[0] == 0:
        raise ValueError("empty batch")
    if not tau > 0:
        raise ValueError("temperature must be positive")
    z = tau * S
    row = -np.mean(np.diag(_log_softmax(z, axis=1)))
    col = -np.mean(np.diag(_log_softmax(z, axis=0)))
    return 0.5 * (row + col), row, col


def loss_backward(S, tau):
    """Return ``(dL/dS, dL/dlog_tau)`` for ``L = contrastive_loss(S, tau)[0]``."""
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    z = tau * S
    eye = np.eye(n)
    d_row = (np.exp(_log_softmax(z, axis=1)) - eye) / n
    d_col = (np.exp(_log_softmax(z, axis=0)) - eye) / n
    dz = 0.5 * (d_row + d_col)
    return tau * dz, tau * float(np.sum(dz * S))
