"""Approximate barycentric spanners via linear-optimization oracles.

Two-phase scheme over an implicit family of vectors in the unit ball.
Phase 1 fills the d working columns one at a time along cofactor
directions; phase 2 keeps swapping any column whose direction admits a
family member improving |det| by a factor C, so |det| grows geometrically
and the total number of column placements is bounded.  Oracles: lin_opt
maps a unit direction to a family index (approximate argmax of the inner
product), lin_est maps an index to its vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from voxlab.core import BudgetError, VoxlabError

DEGENERATE_TOL = 1e-14


@dataclass
class SpannerState:
    """Chosen indices and their (perturbed) working vectors as columns of W."""

    W: np.ndarray
    indices: list
    C: float
    eps: float
    rounds: int
    oracle_calls: int


def spanner_rounds_bound(C, eps, d):
    """Column placements sufficient for termination with conforming oracles."""
    return d + math.ceil(d / 2.0 * math.log(100.0 * d / eps**2) / math.log(C))


def spanner_direction(W, i):
    """theta with theta.v = det of W after replacing column i by v.

    Adjugate-row extraction when W is comfortably invertible, otherwise one
    LU determinant per coordinate.
    """
    W = np.asarray(W, dtype=float)
    d = W.shape[0]
    det = float(np.linalg.det(W))
    if abs(det) > 1e-12:
        theta = det * np.linalg.solve(W.T, np.eye(d)[:, i])
        return theta
    theta = np.zeros(d)
    for j in range(d):
        Mod = W.copy()
        Mod[:, i] = 0.0
        Mod[j, i] = 1.0
        theta[j] = np.linalg.det(Mod)
    return theta


def robust_spanner(lin_opt, lin_est, C, eps, d, max_rounds=None) -> SpannerState:
    """Compute a (C, O(d*eps))-approximate barycentric spanner.

    Counts one round per column placement (d in phase 1, one per phase-2
    swap); raises BudgetError past max_rounds, which defaults to the
    termination bound for conforming oracles.
    """
    if C <= 1.0:
        raise VoxlabError(f"C must exceed 1, got {C}")
    if not 0.0 < eps < 1.0:
        raise VoxlabError(f"eps must be in (0, 1), got {eps}")
    bound = spanner_rounds_bound(C, eps, d)
    if max_rounds is None:
        max_rounds = bound
    W = np.eye(d)
    indices: list = [None] * d
    rounds = 0
    calls = 0

    def probe(theta_hat):
        nonlocal calls
        zp = lin_opt(theta_hat)
        wp = np.asarray(lin_est(zp), dtype=float)
        zm = lin_opt(-theta_hat)
        wm = np.asarray(lin_est(zm), dtype=float)
        calls += 4
        return zp, wp, zm, wm

    for i in range(d):
        theta = spanner_direction(W, i)
        nrm = np.linalg.norm(theta)
        if nrm < DEGENERATE_TOL:
            continue
        theta_hat = theta / nrm
        zp, wp, zm, wm = probe(theta_hat)
        if theta_hat @ wp >= -(theta_hat @ wm):
            W[:, i] = wp + eps * theta_hat
            indices[i] = zp
        else:
            W[:, i] = wm - eps * theta_hat
            indices[i] = zm
        rounds += 1

    while True:
        swapped = False
        for i in range(d):
            theta = spanner_direction(W, i)
            nrm = np.linalg.norm(theta)
            if nrm < DEGENERATE_TOL:
                continue
            theta_hat = theta / nrm
            base = C * abs(theta @ W[:, i])
            zp, wp, zm, wm = probe(theta_hat)
            if theta @ wp + eps * nrm >= base:
                W[:, i] = wp + eps * theta_hat
                indices[i] = zp
                swapped = True
            elif -(theta @ wm) + eps * nrm >= base:
                W[:, i] = wm - eps * theta_hat
                indices[i] = zm
                swapped = True
            if swapped:
                rounds += 1
                if rounds > max_rounds:
                    raise BudgetError(
                        f"robust_spanner exceeded {max_rounds} rounds "
                        f"(termination bound for conforming oracles is {bound})"
                    )
                break
        if not swapped:
            return SpannerState(W=W, indices=indices, C=C, eps=eps,
                                rounds=rounds, oracle_calls=calls)


def verify_spanner(W, tests, C, eps, tol=1e-9):
    """Check the spanner guarantee for each test vector against basis W.

    Coefficients come from the exact linear solve; a vector passes when
    max|beta| <= C + tol and the reconstruction residual is within
    3*C*d*eps/2 + tol.
    """
    W = np.asarray(W, dtype=float)
    d = W.shape[0]
    try:
        betas = np.linalg.solve(W, np.asarray(tests, dtype=float).T).T
    except np.linalg.LinAlgError as exc:
        raise VoxlabError("singular spanner basis") from exc
    out = []
    limit = 3.0 * C * d * eps / 2.0
    for v, beta in zip(np.asarray(tests, dtype=float), betas):
        residual = float(np.linalg.norm(v - W @ beta))
        passed = bool(np.abs(beta).max() <= C + tol and residual <= limit + tol)
        out.append({"beta": beta, "residual": residual, "passed": passed})
    return out
