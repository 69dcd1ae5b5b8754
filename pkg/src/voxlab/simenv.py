"""Synthetic environment generation, exact occupancy/moment computation,
reachability constants, and trajectory sampling.

Everything in here is either a generator or an exact (brute-force) oracle;
the Monte-Carlo side of the library lives in ``estimators``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from concurrent.futures import ThreadPoolExecutor

from .core import (
    BudgetError,
    FeatureClass,
    LayeredLowRankMDP,
    LayerRangeError,
    Policy,
    VoxlabError,
)

DEFAULT_DP_BUDGET = 50_000_000


@dataclass
class EnvSpec:
    """Recipe for a synthetic layered low-rank MDP.

    ``boost`` in [0, 1) mixes every latent-assignment row with the uniform
    point on the simplex, which lifts the reachability constant of the
    generated environment.  ``rotate`` re-expresses the factorization in a
    randomly sign-flipped (and, when feasible, rotated) coordinate system so
    that features and densities carry negative entries.
    """

    H: int
    A: int
    d_latent: int
    state_counts: list
    seed: int = 0
    boost: float = 0.0
    rotate: bool = False

    def __post_init__(self):
        if self.H < 2:
            raise VoxlabError("EnvSpec requires H >= 2")
        if self.A < 1 or self.d_latent < 1:
            raise VoxlabError("EnvSpec requires A >= 1 and d_latent >= 1")
        if len(self.state_counts) != self.H:
            raise VoxlabError("EnvSpec needs one state count per layer")
        if any(c < 1 for c in self.state_counts):
            raise VoxlabError("state counts must all be >= 1")
        if not 0.0 <= self.boost < 1.0:
            raise VoxlabError("boost must lie in [0, 1)")


@dataclass
class Trajectory:
    """One episode: per-layer state, action, and reward, h = 0..H-1."""

    states: tuple
    actions: tuple
    rewards: tuple

    def __post_init__(self):
        if not (len(self.states) == len(self.actions) == len(self.rewards)):
            raise VoxlabError("trajectory fields must share length")


class EpisodeCounter:
    """Running count of sampled episodes, threaded through the samplers."""

    def __init__(self):
        self.count = 0

    def add(self, n):
        self.count += int(n)


def _threads():
    try:
        return max(1, int(os.environ.get("VOXLAB_THREADS", "1")))
    except ValueError:
        return 1


def _categorical_rows(p, rng):
    """One draw per row of the nonnegative matrix ``p`` (rows need not be normalized)."""
    p = np.clip(p, 0.0, None)
    cum = np.cumsum(p, axis=1)
    u = rng.random(p.shape[0]) * cum[:, -1]
    idx = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(idx, p.shape[1] - 1)


def _cayley(skew, t):
    d = skew.shape[0]
    a = t * skew
    return np.linalg.solve(np.eye(d) + a, np.eye(d) - a)


def generate_low_rank_mdp(spec, rng=None):
    """Build a valid layered low-rank MDP from latent-variable ingredients.

    Each step draws a latent assignment psi(.|x, a) on the d-simplex (the
    feature vector) and a per-latent emission q(.|z) over next states (the
    density columns), so transition rows are probability vectors by
    construction and every structural invariant holds exactly.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    H, A, d = spec.H, spec.A, spec.d_latent
    counts = list(spec.state_counts)
    layers, next_id = [], 0
    for c in counts:
        layers.append(list(range(next_id, next_id + c)))
        next_id += c

    phi, mu = [], []
    for h in range(H - 1):
        psi = rng.dirichlet(np.ones(d), size=(counts[h], A))
        if spec.boost > 0.0:
            psi = (1.0 - spec.boost) * psi + spec.boost / d
        q = rng.dirichlet(np.ones(counts[h + 1]), size=d).T  # (n_next, d)
        q = q / q.sum(axis=0, keepdims=True)
        phi.append(psi)
        mu.append(q)

    if spec.rotate:
        for h in range(H - 1):
            signs = rng.choice([-1.0, 1.0], size=d)
            if np.all(signs > 0):
                signs[int(rng.integers(d))] = -1.0
            D = np.diag(signs)
            raw = rng.standard_normal((d, d))
            skew = raw - raw.T
            chosen = None
            t = 1.0
            for _ in range(40):
                R = _cayley(skew, t) @ D
                ph = phi[h] @ R.T
                mh = mu[h] @ R.T
                # rescale so feature norms stay inside the unit ball exactly
                s = max(1.0, float(np.linalg.norm(ph, axis=2).max()))
                ph, mh = ph / s, mh * s
                if np.abs(mh).sum(axis=0).max() <= 1.0 + 1e-12:
                    chosen = (ph, mh)
                    break
                t *= 0.5
            if chosen is None:
                # sign flips alone always preserve the mass bounds
                chosen = (phi[h] @ D.T, mu[h] @ D.T)
            phi[h], mu[h] = chosen

    rho = rng.dirichlet(np.ones(counts[0]))
    rho = rho / rho.sum()
    return LayeredLowRankMDP(H, A, d, layers, phi, mu, rho)


def _require_cover(pi, lo, hi):
    if not pi.covers(lo, hi):
        got = f"[{pi.lo}..{pi.hi}]" if pi.tables else "an empty policy"
        raise LayerRangeError(
            f"policy covering layers [{lo}..{hi}] required, got {got}"
        )


def exact_occupancy(M, pi, h):
    """State-occupancy vector at layer h under pi, by forward recursion."""
    if not 0 <= h < M.H:
        raise LayerRangeError(f"layer {h} out of range for H={M.H}")
    occ = M.rho.copy()
    if h > 0:
        _require_cover(pi, 0, h - 1)
    for t in range(h):
        sa = occ[:, None] * pi.table(t)
        occ = np.einsum("xa,xay->y", sa, M.transition_matrix(t))
    return occ


def exact_occupancy_sa(M, pi, h):
    """State-action occupancy matrix at layer h (requires pi to cover h)."""
    occ = exact_occupancy(M, pi, h)
    return occ[:, None] * pi.table(h)


def exact_feature_expectation(M, pi, feat, h):
    """E^pi[f(x_h, a_h)] for a vector-valued per-layer table f."""
    table = feat[h] if isinstance(feat, (list, tuple)) else feat
    sa = exact_occupancy_sa(M, pi, h)
    return np.einsum("xa,xad->d", sa, table)


def exact_second_moment(M, pi, feat, h):
    """E^pi[f f^T (x_h, a_h)]; symmetric PSD for any feature table."""
    table = feat[h] if isinstance(feat, (list, tuple)) else feat
    sa = exact_occupancy_sa(M, pi, h)
    W = np.einsum("xa,xad,xae->de", sa, table, table)
    return (W + W.T) / 2.0


def mixture_occupancy(M, P, h, with_actions=False):
    """Occupancy of a policy mixture: the weight-averaged member occupancies."""
    from .core import as_distribution

    P = as_distribution(P)
    parts = [
        exact_occupancy_sa(M, pi, h) if with_actions else exact_occupancy(M, pi, h)
        for pi in P.policies
    ]
    return sum(w * part for part, w in zip(parts, P.weights))


def exact_q_tables(M, pi, reward_tables):
    """Exact per-layer Q tables for pi under explicit reward tables.

    ``reward_tables[t]`` has shape (|X_t|, A); the list length fixes the last
    rewarded layer.  Returns a list of Q tables of the same shapes.
    """
    L = len(reward_tables) - 1
    if L >= 1:
        _require_cover(pi, 1, L)
    q = [None] * (L + 1)
    v_next = None
    for t in range(L, -1, -1):
        qt = np.array(reward_tables[t], dtype=float)
        if t < L:
            qt = qt + np.einsum("xay,y->xa", M.transition_matrix(t), v_next)
        q[t] = qt
        if t > 0:
            v_next = np.einsum("xa,xa->x", pi.table(t), qt)
    return q


def exact_policy_value(M, pi, reward_tables):
    """E^pi of the summed rewards, computed from exact occupancies."""
    total = 0.0
    for t, r in enumerate(reward_tables):
        if np.any(np.asarray(r) != 0.0):
            sa = exact_occupancy_sa(M, pi, t)
            total += float(np.einsum("xa,xa->", sa, np.asarray(r, dtype=float)))
    return total


def sample_trajectories(M, pi, n, rng, upto=None, counter=None):
    """Vectorized batch of ``n`` episodes under ``pi`` through layer ``upto``.

    Returns (states, actions) arrays of shape (upto+1, n).  Honors
    VOXLAB_THREADS by splitting the batch across worker threads with
    independently spawned generator streams.
    """
    upto = M.H - 1 if upto is None else upto
    if not 0 <= upto < M.H:
        raise LayerRangeError(f"layer {upto} out of range for H={M.H}")
    _require_cover(pi, 0, upto)
    if counter is not None:
        counter.add(n)
    workers = _threads()
    if workers > 1 and n >= 4 * workers:
        chunks = np.array_split(np.arange(n), workers)
        rngs = rng.spawn(len(chunks))
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(
                ex.map(lambda cr: _sample_block(M, pi, len(cr[0]), cr[1], upto),
                       zip(chunks, rngs))
            )
        states = np.concatenate([p[0] for p in parts], axis=1)
        actions = np.concatenate([p[1] for p in parts], axis=1)
        return states, actions
    return _sample_block(M, pi, n, rng, upto)


def _sample_block(M, pi, n, rng, upto):
    states = np.empty((upto + 1, n), dtype=np.int64)
    actions = np.empty((upto + 1, n), dtype=np.int64)
    cum_rho = np.cumsum(M.rho)
    x = np.searchsorted(cum_rho, rng.random(n) * cum_rho[-1], side="right")
    x = np.minimum(x, M.n_states(0) - 1)
    for t in range(upto + 1):
        states[t] = x
        a = _categorical_rows(pi.table(t)[x], rng)
        actions[t] = a
        if t < upto:
            T = M.transition_matrix(t)
            x = _categorical_rows(T[x, a], rng)
    return states, actions


def sample_trajectory(M, pi, rewards=None, rng=None, counter=None):
    """Sample one full episode; rewards read from per-layer tables (or zero)."""
    if rng is None:
        rng = np.random.default_rng()
    states, actions = sample_trajectories(M, pi, 1, rng, counter=counter)
    states, actions = states[:, 0], actions[:, 0]
    rew = []
    for t in range(M.H):
        if rewards is not None and t < len(rewards) and rewards[t] is not None:
            rew.append(float(np.asarray(rewards[t])[states[t], actions[t]]))
        else:
            rew.append(0.0)
    return Trajectory(tuple(states.tolist()), tuple(actions.tolist()), tuple(rew))


def _dp_cost(M, h):
    cost = 0
    for t in range(h):
        cost += M.n_states(t) * M.A * M.n_states(t + 1) * M.n_states(h)
    return cost


def max_occupancies(M, h, budget=DEFAULT_DP_BUDGET):
    """max over deterministic policies of d^pi(x), for every x in layer h.

    Backward dynamic programming on the reach probability of each target
    state; the per-state maximum over all randomized policies is attained by
    a deterministic one because occupancy is affine in each action row.
    """
    if not 0 <= h < M.H:
        raise LayerRangeError(f"layer {h} out of range for H={M.H}")
    if _dp_cost(M, h) > budget:
        raise BudgetError(
            f"max-occupancy recursion at layer {h} needs {_dp_cost(M, h)} ops, "
            f"budget is {budget}"
        )
    n_h = M.n_states(h)
    reach = np.eye(n_h)
    for t in range(h - 1, -1, -1):
        T = M.transition_matrix(t)
        reach = np.einsum("xay,yk->xak", T, reach).max(axis=1)
    return M.rho @ reach


def max_value(M, h, g):
    """sup over policies of E^pi[g(x_h, a_h)] for a (|X_h|, A) reward table."""
    v = np.asarray(g, dtype=float).max(axis=1)
    for t in range(h - 1, -1, -1):
        v = np.einsum("xay,y->xa", M.transition_matrix(t), v).max(axis=1)
    return float(M.rho @ v)


def argmax_policy(M, h, g):
    """A deterministic policy attaining max_value(M, h, g), greedy everywhere."""
    g = np.asarray(g, dtype=float)
    acts = [g.argmax(axis=1)]
    v = g.max(axis=1)
    for t in range(h - 1, -1, -1):
        q = np.einsum("xay,y->xa", M.transition_matrix(t), v)
        acts.insert(0, q.argmax(axis=1))
        v = q.max(axis=1)
    return Policy.from_actions(M, acts, lo=0)


def make_feature_class(M, n_decoys, rng, true_index=0):
    """Finite feature class: the true map plus cell-permuted decoys.

    Each decoy reassigns the true feature vectors across (state, action)
    cells by a per-layer random permutation (never the identity).  Any
    invertible map of the d coordinates would leave conditional means
    linearly realizable, so the scramble acts on cells instead; norms
    stay inside the unit ball while the dynamics stop being linear in
    the decoy.
    """
    decoys = []
    seen = set()
    attempts = 0
    while len(decoys) < n_decoys:
        attempts += 1
        if attempts > 200 * (n_decoys + 1):
            raise VoxlabError(
                f"could not find {n_decoys} distinct cell permutations"
            )
        perms = []
        for tab in M.phi:
            cells = tab.shape[0] * tab.shape[1]
            perms.append(tuple(rng.permutation(cells).tolist()))
        key = tuple(perms)
        if key in seen or all(p == tuple(range(len(p))) for p in perms):
            continue
        seen.add(key)
        decoys.append([
            tab.reshape(-1, M.d)[list(p)].reshape(tab.shape)
            for tab, p in zip(M.phi, perms)
        ])
    candidates = decoys[:]
    candidates.insert(true_index, [tab.copy() for tab in M.phi])
    return FeatureClass(candidates, true_index=true_index)


def reachability_eta(M, h, budget=DEFAULT_DP_BUDGET):
    """min over layer-h states of (best-case occupancy) / (density norm).

    Only states with a nonzero density embedding qualify; the layer must be
    at least 1 since layer 0 carries no density table.
    """
    if not 1 <= h < M.H:
        raise LayerRangeError(f"reachability is defined for layers 1..{M.H - 1}")
    occ = max_occupancies(M, h, budget=budget)
    norms = np.linalg.norm(M.mu[h - 1], axis=1)
    mask = norms > 0
    if not np.any(mask):
        raise VoxlabError(f"layer {h} has no state with nonzero density embedding")
    return float((occ[mask] / norms[mask]).min())
