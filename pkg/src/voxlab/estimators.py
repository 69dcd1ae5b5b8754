"""Monte-Carlo moment estimators over policy roll-ins.

est_vec and est_mat average a state-action functional at one layer over n
independent episodes.  Both accept a single Policy or a PolicyDistribution;
for a mixture the policy is redrawn every episode (implemented by grouping
episode counts with a multinomial draw, which has the same law and lets the
sampler run vectorized per component).

The functional F may be given as a dense table indexed by (state, action)
with arbitrary trailing shape, or as a callable (x, a) -> array, which is
tabulated once up front.
"""

from __future__ import annotations

import numpy as np

from voxlab.core import VoxlabError, as_distribution
from voxlab.simenv import sample_trajectories

EIG_TOL = 1e-12


def _tabulate(F, M, h):
    if callable(F):
        probe = np.asarray(F(0, 0), dtype=float)
        table = np.zeros((M.n_states(h), M.A) + probe.shape)
        for x in range(M.n_states(h)):
            for a in range(M.A):
                table[x, a] = F(x, a)
        return table
    table = np.asarray(F, dtype=float)
    if table.shape[:2] != (M.n_states(h), M.A):
        raise VoxlabError(
            f"F table has leading shape {table.shape[:2]}, expected "
            f"({M.n_states(h)}, {M.A}) at layer {h}"
        )
    return table


def visit_counts(M, h, pi, n, rng, counter=None):
    """Empirical (state, action) visit counts at layer h over n episodes."""
    if n < 1:
        raise VoxlabError("n must be >= 1")
    P = as_distribution(pi)
    per_comp = rng.multinomial(n, P.weights)
    counts = np.zeros((M.n_states(h), M.A), dtype=np.int64)
    for comp, cnt in zip(P.policies, per_comp):
        if cnt == 0:
            continue
        S, A = sample_trajectories(M, comp, int(cnt), rng, upto=h, counter=counter)
        flat = np.bincount(S[h] * M.A + A[h], minlength=M.n_states(h) * M.A)
        counts += flat.reshape(M.n_states(h), M.A)
    return counts


def est_vec(M, h, F, pi, n, rng, counter=None):
    """Average of F(x_h, a_h) over n roll-ins of pi (EstVec)."""
    table = _tabulate(F, M, h)
    counts = visit_counts(M, h, pi, n, rng, counter=counter)
    return np.tensordot(counts.astype(float), table, axes=([0, 1], [0, 1])) / n


def est_mat(M, h, F, pi, n, rng, counter=None):
    """Average of a PSD matrix functional at layer h; output stays PSD (EstMat)."""
    out = est_vec(M, h, F, pi, n, rng, counter=counter)
    if out.ndim != 2 or out.shape[0] != out.shape[1]:
        raise VoxlabError(f"est_mat needs a square matrix functional, got {out.shape}")
    out = 0.5 * (out + out.T)
    vals, vecs = np.linalg.eigh(out)
    if vals[0] < -EIG_TOL:
        raise VoxlabError(f"matrix functional is not PSD (min eigenvalue {vals[0]:.3e})")
    if vals[0] < 0.0:
        out = (vecs * np.maximum(vals, 0.0)) @ vecs.T
        out = 0.5 * (out + out.T)
    return out
