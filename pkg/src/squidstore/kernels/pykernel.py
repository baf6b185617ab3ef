"""Reference numpy implementation of the piecewise-constant stepper.

Per step s the Hamiltonian is the coefficient combination
H_s = sum_k coeffs[s, k] * terms[k]; the carried matrix X is advanced by
U_s = exp(-i H_s dt_s / hbar), either as X <- U X (state columns or an
accumulated propagator) or X <- U X U~ (density matrix).

Consecutive steps with identical coefficient rows reuse the previous
eigendecomposition; only the phase factors are recomputed.
"""

from __future__ import annotations

import numpy as np


def propagate(terms, coeffs, dts, hbar, x0, conjugate=False, snap_steps=None):
    """Advance x0 through all steps; see module docstring.

    Parameters
    ----------
    terms : (K, d, d) complex array of static operators.
    coeffs : (S, K) float array of per-step coefficients.
    dts : (S,) float array of step durations (ps).
    hbar : float, in the same unit system as terms*dts.
    x0 : (d, m) complex array; columns are propagated.
    conjugate : if True, x0 is a density matrix and steps conjugate it.
    snap_steps : optional sorted int array; a copy of X is recorded after
        each listed step index (use S-1 for the final state only).

    Returns
    -------
    (x_final, snapshots) where snapshots is a (len(snap_steps), d, m)
    array, or None when snap_steps is None.
    """
    terms = np.asarray(terms, dtype=complex)
    coeffs = np.asarray(coeffs, dtype=float)
    dts = np.asarray(dts, dtype=float)
    x = np.array(x0, dtype=complex, copy=True)
    if x.ndim == 1:
        x = x[:, None]
    n_steps = coeffs.shape[0]
    snaps = None
    snap_pos = 0
    if snap_steps is not None:
        snap_steps = np.asarray(snap_steps, dtype=int)
        snaps = np.empty((len(snap_steps),) + x.shape, dtype=complex)

    prev_row = None
    w = v = None
    for s in range(n_steps):
        row = coeffs[s]
        if prev_row is None or not np.array_equal(row, prev_row):
            h = np.tensordot(row, terms, axes=(0, 0))
            w, v = np.linalg.eigh(h)
            prev_row = row.copy()
        phases = np.exp(-1j * w * (dts[s] / hbar))
        if conjugate:
            g = v.conj().T @ x @ v
            g *= np.outer(phases, phases.conj())
            x = v @ g @ v.conj().T
        else:
            x = v @ (phases[:, None] * (v.conj().T @ x))
        if snaps is not None and snap_pos < len(snap_steps) and snap_steps[snap_pos] == s:
            snaps[snap_pos] = x
            snap_pos += 1
    return x, snaps
