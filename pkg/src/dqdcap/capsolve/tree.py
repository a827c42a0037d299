"""Octree partitioning and cluster-to-point multipole operators.

Far field uses solid-harmonic cluster expansions of order p, admitted by the
acceptance rule  r_source + r_target < mac_ratio * (distance between centers),
which guarantees the pointwise criterion radius < mac_ratio * distance for
every evaluation point in the target cluster.  Near field stays exact.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.special import sph_harm_y

from ..constants import EPS0

# 2x2 tensor Gauss rule on the unit square (exact for cubics)
_G0 = (3.0 - np.sqrt(3.0)) / 6.0
_G1 = (3.0 + np.sqrt(3.0)) / 6.0
_GAUSS_ST = ((_G0, _G0), (_G0, _G1), (_G1, _G0), (_G1, _G1))


class Node:
    __slots__ = ("center", "half", "panels", "children", "radius", "slot")

    def __init__(self, center, half):
        self.center = center
        self.half = half
        self.panels = None  # leaf panel indices
        self.children = []
        self.radius = 0.0
        self.slot = -1  # moment slot, assigned to far-field sources only

    @property
    def is_leaf(self):
        return not self.children


def build_octree(mesh, leaf_size):
    centroids = mesh.centroids
    lo = centroids.min(axis=0)
    hi = centroids.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * float((hi - lo).max()) * 1.0000001 + 1e-30

    leaves = []

    def split(node, idx):
        if len(idx) <= leaf_size:
            node.panels = idx
            leaves.append(node)
            return
        rel = centroids[idx] > node.center
        octant = rel[:, 0] * 1 + rel[:, 1] * 2 + rel[:, 2] * 4
        for o in range(8):
            sub = idx[octant == o]
            if not len(sub):
                continue
            off = np.array([(o & 1), (o >> 1) & 1, (o >> 2) & 1]) - 0.5
            child = Node(node.center + off * node.half, 0.5 * node.half)
            node.children.append(child)
            split(child, sub)

    root = Node(center, half)
    split(root, np.arange(mesh.n_panels))

    # conservative cluster radii from panel corners, propagated upward
    def set_radius(node):
        if node.is_leaf:
            pts = mesh.corners[node.panels].reshape(-1, 3)
            node.radius = float(np.linalg.norm(pts - node.center, axis=1).max())
        else:
            node.radius = max(
                set_radius(ch) + float(np.linalg.norm(ch.center - node.center))
                for ch in node.children
            )
        return node.radius

    set_radius(root)
    return root, leaves


def interaction_lists(root, leaves, mac_ratio):
    """Per target leaf: admissible source nodes (far) and source leaves (near)."""
    far_lists, near_lists = [], []
    for leaf in leaves:
        far, near = [], []
        stack = [root]
        while stack:
            node = stack.pop()
            d = float(np.linalg.norm(node.center - leaf.center))
            if node.radius + leaf.radius < mac_ratio * d:
                far.append(node)
            elif node.is_leaf:
                near.append(node)
            else:
                stack.extend(reversed(node.children))
        far_lists.append(far)
        near_lists.append(near)
    return far_lists, near_lists


def _real_block_count(p):
    return (p + 1) * (p + 1)


def _harmonic_angles(offsets):
    r = np.linalg.norm(offsets, axis=1)
    safe = np.where(r > 0, r, 1.0)
    theta = np.arccos(np.clip(offsets[:, 2] / safe, -1.0, 1.0))
    phi = np.arctan2(offsets[:, 1], offsets[:, 0])
    return r, theta, phi


def moment_basis(offsets, p):
    """Real-packed source basis: rows are points, K=(p+1)^2 columns.

    Column layout per degree l: (l,0), then (Re, Im) pairs for m=1..l.
    Paired with eval_basis, a point charge q at offset d contributes
    q/(4 pi eps |x - d|) to a target at offset x from the same center.
    """
    r, theta, phi = _harmonic_angles(offsets)
    out = np.empty((len(offsets), _real_block_count(p)))
    col = 0
    for l in range(p + 1):
        pref = 4.0 * np.pi / (2 * l + 1) * r**l
        y0 = sph_harm_y(l, 0, theta, phi)
        out[:, col] = pref * y0.real
        col += 1
        for m in range(1, l + 1):
            y = sph_harm_y(l, m, theta, phi)
            out[:, col] = 2.0 * pref * y.real
            out[:, col + 1] = 2.0 * pref * y.imag
            col += 2
    return out


def eval_basis(offsets, p, epsilon_r):
    """Real-packed target basis matching moment_basis; includes 1/(4 pi eps).

    Pairing: sum over +-m equals 2 Re(M E) = (2 pref ReY_s) ReE + (2 pref
    ImY_s) ImE, so both eval columns carry plain Re/Im of Y(target)/r^(l+1).
    """
    r, theta, phi = _harmonic_angles(offsets)
    scale = 1.0 / (4.0 * np.pi * EPS0 * epsilon_r)
    out = np.empty((len(offsets), _real_block_count(p)))
    col = 0
    for l in range(p + 1):
        pref = scale / r ** (l + 1)
        y0 = sph_harm_y(l, 0, theta, phi)
        out[:, col] = pref * y0.real
        col += 1
        for m in range(1, l + 1):
            y = sph_harm_y(l, m, theta, phi)
            out[:, col] = pref * y.real
            out[:, col + 1] = pref * y.imag
            col += 2
    return out


def _gauss_points(mesh, panel_idx):
    """2x2 Gauss quadrature points on each panel, weights 1/4 of unit charge."""
    c0 = mesh.corners[panel_idx, 0]
    eu = mesh.corners[panel_idx, 1] - c0
    ev = mesh.corners[panel_idx, 3] - c0
    pts = np.empty((len(panel_idx), 4, 3))
    for k, (s, t) in enumerate(_GAUSS_ST):
        pts[:, k, :] = c0 + s * eu + t * ev
    return pts


def _collect_panels(node, out):
    if node.is_leaf:
        out.append(node.panels)
    else:
        for ch in node.children:
            _collect_panels(ch, out)


def build_far_operators(mesh, leaves, far_lists, p, epsilon_r):
    """Sparse far-field factorization: potentials = E @ (Mom @ charges)."""
    K = _real_block_count(p)
    active = []
    for far in far_lists:
        for node in far:
            if node.slot < 0:
                node.slot = len(active)
                active.append(node)

    n = mesh.n_panels
    if not active:
        empty = sparse.csr_matrix((n, 0))
        return empty, sparse.csr_matrix((0, n))

    # moments: subtree panels sampled at Gauss points about each node center
    rows, cols, vals = [], [], []
    for node in active:
        chunks = []
        _collect_panels(node, chunks)
        idx = np.concatenate(chunks)
        gp = _gauss_points(mesh, idx)  # (m, 4, 3)
        basis = moment_basis((gp - node.center).reshape(-1, 3), p)
        basis = 0.25 * basis.reshape(len(idx), 4, K).sum(axis=1)
        r0 = node.slot * K
        rows.append((r0 + np.arange(K))[None, :].repeat(len(idx), axis=0).ravel())
        cols.append(idx[:, None].repeat(K, axis=1).ravel())
        vals.append(basis.ravel())
    mom = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(active) * K, n),
    )

    # evaluation: target centroids against each admitted source node
    centroids = mesh.centroids
    targets_per_slot = [[] for _ in active]
    for leaf, far in zip(leaves, far_lists):
        for node in far:
            targets_per_slot[node.slot].append(leaf.panels)
    rows, cols, vals = [], [], []
    for node, tchunks in zip(active, targets_per_slot):
        tidx = np.concatenate(tchunks)
        basis = eval_basis(centroids[tidx] - node.center, p, epsilon_r)
        c0 = node.slot * K
        rows.append(tidx[:, None].repeat(K, axis=1).ravel())
        cols.append((c0 + np.arange(K))[None, :].repeat(len(tidx), axis=0).ravel())
        vals.append(basis.ravel())
    ev = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, len(active) * K),
    )
    return ev, mom
