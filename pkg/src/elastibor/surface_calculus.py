"""Differential calculus on a discretized surface of revolution.

For a scalar density sigma(t) e^{i m theta} and a tangential field
J = (J1 tau1 + J2 tau2) e^{i m theta}, the surface gradient and divergence
reduce to one-dimensional expressions along the generating curve:

    Grad sigma = ( sigma'(t) / J ) tau1 + ( i m sigma / r ) tau2
    Div J      = ( r' J1 + r J1'(t) ) / (r J) + ( i m / r ) J2

with J = ds/dt the parameter speed.  Parameter derivatives of nodal data
are taken panel by panel through the Legendre coefficient basis, which is
spectrally accurate for data smooth on each panel.
"""

from __future__ import annotations

import numpy as np

from .geometry import PanelMesh
from .quadrature import reference_deriv_matrix


def apply_dt(mesh: PanelMesh, values: np.ndarray) -> np.ndarray:
    """d/dt of nodal data along the last axis, panel by panel."""
    values = np.asarray(values)
    p = mesh.p
    shape = values.shape
    blocks = values.reshape(shape[:-1] + (mesh.n_panels, p))
    D = reference_deriv_matrix(p)
    out = np.einsum("ij,...kj->...ki", D, blocks)
    halfwidths = 0.5 * (mesh.panels[:, 1] - mesh.panels[:, 0])
    out /= halfwidths[:, None]
    return out.reshape(shape)


def dt_matrix(mesh: PanelMesh) -> np.ndarray:
    """Dense block-diagonal d/dt matrix over all nodes."""
    n = mesh.n_nodes
    D = reference_deriv_matrix(mesh.p)
    out = np.zeros((n, n))
    halfwidths = 0.5 * (mesh.panels[:, 1] - mesh.panels[:, 0])
    for k in range(mesh.n_panels):
        sl = mesh.panel_slice(k)
        out[sl, sl] = D / halfwidths[k]
    return out


def stretch_factors(mesh: PanelMesh) -> tuple[np.ndarray, np.ndarray]:
    """Inverse speed C = 1/J and its parameter derivative C' at the nodes.

    C' = -(r' r'' + z' z'') C^3 follows from J^2 = r'^2 + z'^2.
    """
    f = mesh.frame
    C = 1.0 / f.speed
    Cp = -(f.dr * f.d2r + f.dz * f.d2z) * C**3
    return C, Cp


def surface_gradient_mode(
    mesh: PanelMesh, sigma: np.ndarray, m: int
) -> tuple[np.ndarray, np.ndarray]:
    """(tau1, tau2) components of Grad(sigma e^{i m theta}) at the nodes."""
    f = mesh.frame
    comp1 = apply_dt(mesh, sigma) / f.speed
    comp2 = 1j * m * np.asarray(sigma) / f.r
    return comp1, comp2


def surface_divergence_mode(
    mesh: PanelMesh, j1: np.ndarray, j2: np.ndarray, m: int
) -> np.ndarray:
    """Div of (j1 tau1 + j2 tau2) e^{i m theta} at the nodes."""
    f = mesh.frame
    dj1 = apply_dt(mesh, j1)
    return (f.dr * np.asarray(j1) + f.r * dj1) / (f.r * f.speed) + (
        1j * m / f.r
    ) * np.asarray(j2)
