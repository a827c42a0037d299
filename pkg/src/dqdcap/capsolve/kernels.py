"""Closed-form collocation kernel for uniformly charged rectangular panels."""

from __future__ import annotations

import numpy as np

from ..constants import EPS0

_TINY = 1e-300


class AssemblyError(RuntimeError):
    """Mesh cannot be assembled into a collocation system."""


def rect_integral(corner, edge_u, edge_v, points):
    """Integral of 1/|x - x'| over one rectangle, for each field point x.

    Uses the standard corner-sum antiderivative
        F(u, v) = u ln(v + r) + v ln(u + r) - |z| atan2(u v, |z| r)
    which stays finite at the centroid (self term) and on the panel plane.
    """
    a = np.linalg.norm(edge_u)
    b = np.linalg.norm(edge_v)
    uhat = edge_u / a
    vhat = edge_v / b
    what = np.cross(uhat, vhat)
    rel = points - corner
    xi = rel @ uhat
    eta = rel @ vhat
    zz = np.abs(rel @ what)

    total = 0.0
    for u, su in ((xi, 1.0), (xi - a, -1.0)):
        for v, sv in ((eta, 1.0), (eta - b, -1.0)):
            r = np.sqrt(u * u + v * v + zz * zz)
            term = (u * np.log(np.maximum(v + r, _TINY))
                    + v * np.log(np.maximum(u + r, _TINY))
                    - zz * np.arctan2(u * v, zz * r))
            total = total + su * sv * term
    return total


def potential_block(mesh, target_points, source_idx, epsilon_r):
    """Dense block: potential at target_points per unit total charge on each source panel."""
    corners = mesh.corners
    areas = mesh.areas
    pref = 1.0 / (4.0 * np.pi * EPS0 * epsilon_r)
    block = np.empty((len(target_points), len(source_idx)))
    for col, j in enumerate(source_idx):
        quad = corners[j]
        block[:, col] = rect_integral(
            quad[0], quad[1] - quad[0], quad[3] - quad[0], target_points
        ) * (pref / areas[j])
    return block


def check_distinct_centroids(centroids, tol=1e-12):
    """Coincident collocation points make the system singular; reject early."""
    order = np.lexsort(centroids.T)
    c = centroids[order]
    if len(c) > 1:
        d = np.linalg.norm(np.diff(c, axis=0), axis=1)
        if np.any(d < tol):
            k = int(np.argmin(d))
            raise AssemblyError(
                f"panels {order[k]} and {order[k + 1]} have coincident centroids"
            )


def assemble_system(mesh, epsilon_r, jobs=1):
    """Full collocation matrix: volts at panel centroids per unit panel charge."""
    n = mesh.n_panels
    if n == 0:
        raise AssemblyError("empty mesh")
    centroids = mesh.centroids
    check_distinct_centroids(centroids)
    A = np.empty((n, n))
    cols = np.arange(n)
    if jobs and jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        chunks = np.array_split(cols, jobs * 4)

        def fill(chunk):
            A[:, chunk] = potential_block(mesh, centroids, chunk, epsilon_r)

        with ThreadPoolExecutor(max_workers=jobs) as ex:
            list(ex.map(fill, [c for c in chunks if len(c)]))
    else:
        A[:, :] = potential_block(mesh, centroids, cols, epsilon_r)
    return A
