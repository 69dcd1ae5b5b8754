"""Independent brute-force oracles used by the test suite.

These are deliberately written in the plainest possible style (explicit
loops, direct linear algebra, no shared code with the library beyond the
core data types) so they constitute an independent route to every derived
quantity.  Frozen: implementations in src/ must match these, never the
other way around.
"""

from __future__ import annotations

import itertools

import numpy as np

from voxlab.core import Policy


def oracle_transition(M, h):
    """Transition tensor from raw dot products, no caching, no einsum."""
    n, A, n2 = M.n_states(h), M.A, M.n_states(h + 1)
    T = np.zeros((n, A, n2))
    for x in range(n):
        for a in range(A):
            for y in range(n2):
                T[x, a, y] = float(np.dot(M.mu[h][y], M.phi[h][x, a]))
    return T


def oracle_occupancy(M, pi, h):
    """Forward recursion with explicit loops."""
    occ = np.array(M.rho, dtype=float)
    for t in range(h):
        T = oracle_transition(M, t)
        rows = pi.table(t)
        nxt = np.zeros(M.n_states(t + 1))
        for x in range(M.n_states(t)):
            for a in range(M.A):
                nxt += occ[x] * rows[x, a] * T[x, a]
        occ = nxt
    return occ


def enum_paths_occupancy(M, pi, h):
    """Occupancy at layer h by exhaustive enumeration of state/action paths."""
    transitions = [oracle_transition(M, t) for t in range(h)]
    occ = np.zeros(M.n_states(h))
    layer_states = [range(M.n_states(t)) for t in range(h + 1)]
    layer_actions = [range(M.A)] * h
    for states in itertools.product(*layer_states):
        for actions in itertools.product(*layer_actions):
            p = M.rho[states[0]]
            for t in range(h):
                p *= pi.table(t)[states[t], actions[t]]
                p *= transitions[t][states[t], actions[t], states[t + 1]]
            occ[states[h]] += p
    return occ


def enumerate_det_policies(M, hi):
    """All deterministic policies over layers 0..hi (inclusive)."""
    per_layer = [
        itertools.product(range(M.A), repeat=M.n_states(t)) for t in range(hi + 1)
    ]
    for assignment in itertools.product(*per_layer):
        yield Policy.from_actions(M, [list(acts) for acts in assignment], lo=0)


def brute_max_occupancy(M, h):
    """Per-state occupancy maxima by full deterministic-policy enumeration."""
    best = np.zeros(M.n_states(h))
    if h == 0:
        return np.array(M.rho, dtype=float)
    for pi in enumerate_det_policies(M, h - 1):
        best = np.maximum(best, oracle_occupancy(M, pi, h))
    return best


def dp_optimal_value(M, reward_tables):
    """Optimal expected summed reward by plain backward induction."""
    L = len(reward_tables) - 1
    v = np.zeros(M.n_states(L + 1)) if L + 1 < M.H else None
    value = np.asarray(reward_tables[L], dtype=float).max(axis=1)
    for t in range(L - 1, -1, -1):
        T = oracle_transition(M, t)
        q = np.asarray(reward_tables[t], dtype=float).copy()
        for x in range(M.n_states(t)):
            for a in range(M.A):
                q[x, a] += float(T[x, a] @ value)
        value = q.max(axis=1)
    return float(np.dot(M.rho, value))


def dp_optimal_policy(M, reward_tables):
    """A deterministic optimizer of the summed reward (lowest-index ties)."""
    L = len(reward_tables) - 1
    acts = [None] * (L + 1)
    q = np.asarray(reward_tables[L], dtype=float)
    acts[L] = q.argmax(axis=1)
    value = q.max(axis=1)
    for t in range(L - 1, -1, -1):
        T = oracle_transition(M, t)
        q = np.asarray(reward_tables[t], dtype=float).copy()
        for x in range(M.n_states(t)):
            for a in range(M.A):
                q[x, a] += float(T[x, a] @ value)
        acts[t] = q.argmax(axis=1)
        value = q.max(axis=1)
    return Policy.from_actions(M, acts, lo=0)


def oracle_ball_lsq(Z, y, radius, weights=None, starts=7, seed=0):
    """Constrained least squares by a generic NLP solver from several starts.

    The problem is convex, so any local optimum is global; multiple starts
    plus a KKT sanity check guard against solver quirks.  Serves as the
    independent route for the exact ball-constrained solver in the library.
    """
    from scipy.optimize import minimize

    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if weights is not None:
        w = np.sqrt(np.asarray(weights, dtype=float))
        Z = Z * w[:, None]
        y = y * w
    d = Z.shape[1]

    def f(v):
        r = Z @ v - y
        return float(r @ r)

    def grad(v):
        return 2.0 * Z.T @ (Z @ v - y)

    rng = np.random.default_rng(seed)
    best, best_val = None, np.inf
    inits = [np.zeros(d)] + [
        radius * u / max(np.linalg.norm(u), 1e-12)
        for u in rng.standard_normal((starts - 1, d))
    ]
    for v0 in inits:
        res = minimize(
            f,
            v0,
            jac=grad,
            method="SLSQP",
            constraints=[{
                "type": "ineq",
                "fun": lambda v: radius**2 - float(v @ v),
                "jac": lambda v: -2.0 * v,
            }],
            options={"maxiter": 400, "ftol": 1e-16},
        )
        if res.fun < best_val:
            best, best_val = res.x, float(res.fun)
    return best, best_val


def oracle_design_certificate(P_weights, Ws, gamma):
    """sup_z Tr(M^-1 W_z) with M built by direct inversion (no Cholesky)."""
    Ws = [np.asarray(W, dtype=float) for W in Ws]
    d = Ws[0].shape[0]
    M = gamma * np.eye(d)
    for idx, w in P_weights.items():
        M = M + w * Ws[idx]
    Minv = np.linalg.inv(M)
    return max(float(np.trace(Minv @ W)) for W in Ws)


def oracle_cofactor_direction(W, i):
    """Direction theta with theta . v = det(W with column i replaced by v)."""
    d = W.shape[0]
    theta = np.zeros(d)
    for j in range(d):
        Mod = np.array(W, dtype=float)
        Mod[:, i] = 0.0
        Mod[j, i] = 1.0
        theta[j] = np.linalg.det(Mod)
    return theta


def oracle_gap_on_grid(loss_fn, n_angles=3600):
    """max of a gap function over a dense angular grid of unit directions (d=2)."""
    angles = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    best_val, best_theta = -np.inf, None
    for ang in angles:
        theta = np.array([np.cos(ang), np.sin(ang)])
        val = loss_fn(theta)
        if val > best_val:
            best_val, best_theta = val, theta
    return best_val, best_theta


def oracle_triple_loss(triples, feat_table, w, f_values):
    """Sum over raw (x, a, x') triples of (phi(x,a).w - f(x'))^2, plain loop."""
    total = 0.0
    for x, a, xn in triples:
        pred = float(np.dot(feat_table[x, a], w))
        total += (pred - f_values[xn]) ** 2
    return total


def chi2_uniformity_pvalue(counts):
    from scipy.stats import chisquare

    counts = np.asarray(counts, dtype=float)
    return float(chisquare(counts).pvalue)
