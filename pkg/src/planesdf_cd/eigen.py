"""Closed-form eigen-decomposition of stacks of symmetric 3x3 matrices."""

from __future__ import annotations

import numpy as np


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _matvec(m, v):
    return np.einsum("...ij,...j->...i", m, v)


def eigh3(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and eigenvectors (columns) of symmetric ``(..., 3, 3)`` input.

    Trigonometric eigenvalues; the eigenvector of the best separated root
    comes from cross products of ``A - lambda I`` rows, and the remaining
    pair from an exact 2x2 rotation in its orthogonal complement. Each
    eigenvector has its largest-magnitude component positive.
    """
    a = np.asarray(a, dtype=float)
    batch = a.shape[:-2]
    a = a.reshape(-1, 3, 3)
    n = len(a)
    scale = np.abs(a).reshape(n, 9).max(axis=1)
    safe = np.where(scale > 0, scale, 1.0)
    b = a / safe[:, None, None]

    q = np.trace(b, axis1=1, axis2=2) / 3.0
    c = b - q[:, None, None] * np.eye(3)
    p = np.sqrt(np.einsum("nij,nij->n", c, c) / 6.0)
    scalar = p <= 1e-150
    p_safe = np.where(scalar, 1.0, p)
    r = np.clip(np.linalg.det(c / p_safe[:, None, None]) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lam1 = q + 2.0 * p * np.cos(phi)
    lam3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    lam2 = 3.0 * q - lam1 - lam3
    iso_top = (lam1 - lam2) >= (lam2 - lam3)
    lam_iso = np.where(iso_top, lam1, lam3)

    m = b - lam_iso[:, None, None] * np.eye(3)
    r0, r1, r2 = m[:, 0], m[:, 1], m[:, 2]
    crosses = np.stack([np.cross(r0, r1), np.cross(r0, r2), np.cross(r1, r2)], axis=1)
    norms = np.linalg.norm(crosses, axis=2)
    pick = np.argmax(norms, axis=1)
    v0 = crosses[np.arange(n), pick]
    v0_norm = norms[np.arange(n), pick]
    degenerate = scalar | (v0_norm <= 1e-300)
    v0 = np.where(degenerate[:, None], np.array([1.0, 0.0, 0.0]), v0 / np.where(v0_norm > 0, v0_norm, 1.0)[:, None])

    # orthonormal basis (u, w) of the plane orthogonal to v0
    use_x = np.abs(v0[:, 0]) > np.abs(v0[:, 1])
    u = np.where(use_x[:, None],
                 np.stack([-v0[:, 2], np.zeros(n), v0[:, 0]], axis=1),
                 np.stack([np.zeros(n), v0[:, 2], -v0[:, 1]], axis=1))
    u /= np.linalg.norm(u, axis=1)[:, None]
    w = np.cross(v0, u)

    bu, bw = _matvec(b, u), _matvec(b, w)
    b11, b12, b22 = _dot(u, bu), _dot(u, bw), _dot(w, bw)
    theta = 0.5 * np.arctan2(2.0 * b12, b11 - b22)
    ct, st = np.cos(theta), np.sin(theta)
    e1 = ct[:, None] * u + st[:, None] * w
    e2 = -st[:, None] * u + ct[:, None] * w
    mu1 = b11 * ct * ct + 2.0 * b12 * ct * st + b22 * st * st
    mu2 = b11 * st * st - 2.0 * b12 * ct * st + b22 * ct * ct
    mu0 = _dot(v0, _matvec(b, v0))

    vals = np.stack([mu0, mu1, mu2], axis=1)
    vecs = np.stack([v0, e1, e2], axis=2)
    vals = np.where(scalar[:, None], q[:, None], vals)
    vecs = np.where(scalar[:, None, None], np.eye(3), vecs)

    order = np.argsort(-vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1) * scale[:, None]
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=2)

    big = np.argmax(np.abs(vecs), axis=1)
    sign = np.take_along_axis(vecs, big[:, None, :], axis=1)[:, 0, :]
    vecs = vecs * np.where(sign < 0, -1.0, 1.0)[:, None, :]
    return vals.reshape(batch + (3,)), vecs.reshape(batch + (3, 3))
