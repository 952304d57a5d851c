"""Push-forward of reference basis values through affine cell maps."""
from __future__ import annotations

import numpy as np

KINDS = ("scalar", "gradient", "covariant", "covariant_curl", "piola", "piola_div")


class TransformError(ValueError):
    """Singular Jacobian or unknown transform kind."""


def _check(J: np.ndarray):
    J = np.asarray(J, dtype=float)
    single = J.ndim == 2
    if single:
        J = J[None]
    det = np.linalg.det(J)
    scale = np.abs(J).reshape(len(J), -1).max(axis=1) ** 3
    if np.any(~np.isfinite(det)) or np.any(np.abs(det) <= 1e-14 * np.maximum(scale, 1e-300)):
        raise TransformError("singular Jacobian")
    return J, det, single


def push_forward(kind: str, J: np.ndarray, ref_values: np.ndarray) -> np.ndarray:
    """Map reference values to physical values.

    Parameters
    ----------
    kind : str
        One of ``scalar``, ``gradient``, ``covariant`` (``J^{-T} v``),
        ``covariant_curl`` and ``piola`` (``J v / det J``), ``piola_div``
        (``v / det J``).
    J : ndarray, shape (3, 3) or (nc, 3, 3)
        Jacobians of the affine maps.
    ref_values : ndarray
        Reference samples with shape ``(..., 3)`` for vector kinds and
        ``(...)`` for scalar ones, shared by all cells.

    Returns
    -------
    ndarray
        Shape ``(nc, ...)``, or ``ref_values.shape`` for a single ``J``.
    """
    if kind not in KINDS:
        raise TransformError(f"unknown transform kind {kind!r}")
    J, det, single = _check(J)
    v = np.asarray(ref_values, dtype=float)
    if kind == "scalar":
        out = np.broadcast_to(v, (len(J),) + v.shape).copy()
    elif kind in ("gradient", "covariant"):
        Jinv = np.linalg.inv(J)
        out = np.einsum("tji,...j->t...i", Jinv, v)
    elif kind in ("covariant_curl", "piola"):
        out = np.einsum("tij,...j->t...i", J, v)
        out /= det.reshape((-1,) + (1,) * (out.ndim - 1))
    else:
        out = v[None] / det.reshape((-1,) + (1,) * v.ndim)
    return out[0] if single else out
