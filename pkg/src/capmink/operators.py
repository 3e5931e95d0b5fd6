"""Sparse matrix form of the cap differential operators.

These matrices realize exactly the same ghost-cell stencils as
:mod:`capmink.grid`, but as linear maps on flattened fields so the Newton
solver can assemble an exact Jacobian.  Flattening is row-major over
``(phi, psi)``; the extended layout prepends the pole ghost row and appends
the top ghost row.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .grid import CapGeometry, ell_field, top_ghost_coeffs


def _extension_matrix(geom: CapGeometry, bc: str) -> sp.csr_matrix:
    """Map interior (N) -> extended (N + 2*Npsi) values, inserting ghost rows."""
    Nphi, Npsi = geom.Nphi, geom.Npsi
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    half = Npsi // 2
    for j in range(Npsi):
        # pole ghost: value at (phi_1, psi + pi)
        add(j, (j + half) % Npsi, 1.0)
    for i in range(Nphi):
        for j in range(Npsi):
            add((i + 1) * Npsi + j, i * Npsi + j, 1.0)
    a = top_ghost_coeffs(geom, bc)
    for j in range(Npsi):
        r = (Nphi + 1) * Npsi + j
        add(r, (Nphi - 3) * Npsi + j, a[0])
        add(r, (Nphi - 2) * Npsi + j, a[1])
        add(r, (Nphi - 1) * Npsi + j, a[2])
    return sp.csr_matrix(
        (vals, (rows, cols)), shape=((Nphi + 2) * Npsi, Nphi * Npsi)
    )


def _phi_matrices(geom: CapGeometry):
    """1-D (interior x extended) first/second difference and extraction."""
    Nphi = geom.Nphi
    d = geom.dphi
    D1 = sp.lil_matrix((Nphi, Nphi + 2))
    D2 = sp.lil_matrix((Nphi, Nphi + 2))
    P = sp.lil_matrix((Nphi, Nphi + 2))
    for i in range(Nphi):
        D1[i, i] = -1.0 / (2.0 * d)
        D1[i, i + 2] = 1.0 / (2.0 * d)
        D2[i, i] = 1.0 / d**2
        D2[i, i + 1] = -2.0 / d**2
        D2[i, i + 2] = 1.0 / d**2
        P[i, i + 1] = 1.0
    return D1.tocsr(), D2.tocsr(), P.tocsr()


def _psi_matrices(geom: CapGeometry):
    Npsi = geom.Npsi
    d = geom.dpsi
    idx = np.arange(Npsi)
    D1 = sp.csr_matrix(
        (
            np.concatenate([np.full(Npsi, 1.0 / (2 * d)), np.full(Npsi, -1.0 / (2 * d))]),
            (
                np.concatenate([idx, idx]),
                np.concatenate([(idx + 1) % Npsi, (idx - 1) % Npsi]),
            ),
        ),
        shape=(Npsi, Npsi),
    )
    D2 = sp.csr_matrix(
        (
            np.concatenate(
                [
                    np.full(Npsi, 1.0 / d**2),
                    np.full(Npsi, -2.0 / d**2),
                    np.full(Npsi, 1.0 / d**2),
                ]
            ),
            (
                np.concatenate([idx, idx, idx]),
                np.concatenate([(idx + 1) % Npsi, idx, (idx - 1) % Npsi]),
            ),
        ),
        shape=(Npsi, Npsi),
    )
    return D1, D2


def _row_diag(geom: CapGeometry, values_per_row: np.ndarray) -> sp.csr_matrix:
    return sp.kron(sp.diags(values_per_row), sp.identity(geom.Npsi), format="csr")


def _frame_operators(geom: CapGeometry):
    """Maps extended-field -> interior frame quantities (b11, b12, b22, g1, g2)."""
    D1p, D2p, Pp = _phi_matrices(geom)
    D1s, D2s = _psi_matrices(geom)
    Is = sp.identity(geom.Npsi, format="csr")
    Dphi = sp.kron(D1p, Is, format="csr")
    Dphiphi = sp.kron(D2p, Is, format="csr")
    P = sp.kron(Pp, Is, format="csr")
    Dpsi = sp.kron(Pp, D1s, format="csr")
    Dpsipsi = sp.kron(Pp, D2s, format="csr")
    Dphipsi = sp.kron(D1p, D1s, format="csr")

    inv_sin = _row_diag(geom, 1.0 / geom.sin_phi)
    inv_sin2 = _row_diag(geom, 1.0 / geom.sin_phi**2)
    cos_sin2 = _row_diag(geom, geom.cos_phi / geom.sin_phi**2)
    cot = _row_diag(geom, geom.cos_phi / geom.sin_phi)

    b11 = Dphiphi + P
    b12 = inv_sin @ Dphipsi - cos_sin2 @ Dpsi
    b22 = inv_sin2 @ Dpsipsi + cot @ Dphi + P
    g1 = Dphi
    g2 = inv_sin @ Dpsi
    return {"b11": b11, "b12": b12, "b22": b22, "g1": g1, "g2": g2}


def u_system(geom: CapGeometry) -> dict:
    """Operators for the quotient formulation h = ell * u with Neumann ghosts.

    Returns csr matrices mapping the interior u-vector to b11, b12, b22 and
    the covariant gradient of h, plus the interior samples of ell.
    """
    key = "u_system"
    if key in geom._cache:
        return geom._cache[key]
    E = _extension_matrix(geom, "neumann")
    ell = ell_field(geom).values
    phi_ext = np.concatenate(
        [[-geom.dphi / 2.0], geom.phi_nodes, [geom.theta + geom.dphi / 2.0]]
    )
    ell_ext_rows = 1.0 - geom.cos_theta * np.cos(phi_ext)
    Lext = sp.kron(sp.diags(ell_ext_rows), sp.identity(geom.Npsi), format="csr")
    base = (Lext @ E).tocsr()
    frame = _frame_operators(geom)
    ops = {k: (m @ base).tocsr() for k, m in frame.items()}
    ops["ell"] = ell.ravel()
    geom._cache[key] = ops
    return ops


def h_system(geom: CapGeometry, bc: str = "robin") -> dict:
    """Operators mapping the interior h-vector directly (Robin or Neumann ghosts)."""
    key = f"h_system:{bc}"
    if key in geom._cache:
        return geom._cache[key]
    E = _extension_matrix(geom, bc)
    frame = _frame_operators(geom)
    ops = {k: (m @ E).tocsr() for k, m in frame.items()}
    geom._cache[key] = ops
    return ops
