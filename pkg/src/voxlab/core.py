"""Domain types for finite layered low-rank MDPs, policies, and policy mixtures.

States live in per-layer index sets; every table is addressed by the position
of a state inside its layer.  Transitions factor through d-dimensional
embeddings: the probability of moving from (x, a) at layer h to x' at layer
h+1 is mu[h][x'] . phi[h][x, a].
"""

from __future__ import annotations

import json

import numpy as np

# arithmetic slack used by the validators
ROW_SUM_TOL = 1e-9
NEG_TOL = 1e-12
WEIGHT_TOL = 1e-12
NORM_TOL = 1e-12


class VoxlabError(Exception):
    """Base class for structured library errors."""


class LayerRangeError(VoxlabError):
    """A layer index or layer range was out of bounds or mismatched."""


class BudgetError(VoxlabError):
    """A brute-force enumeration exceeded its combinatorial budget."""


def _freeze(arr):
    arr = np.ascontiguousarray(np.asarray(arr, dtype=float))
    arr.setflags(write=False)
    return arr


class LayeredLowRankMDP:
    """Finite layered MDP with an explicit low-rank transition factorization.

    Parameters
    ----------
    H : horizon, number of layers (>= 2).
    A : number of actions, shared by every layer.
    d : embedding dimension.
    layers : list of H lists of global state ids (disjoint across layers).
    phi : list of H-1 arrays, phi[h] has shape (|X_h|, A, d).
    mu : list of H-1 arrays, mu[h] has shape (|X_{h+1}|, d).
    rho : initial distribution over layer 0, shape (|X_0|,).

    Instances are immutable after construction; all arrays are copied and
    marked read-only so they can be shared across threads.
    """

    def __init__(self, H, A, d, layers, phi, mu, rho):
        self.H = int(H)
        self.A = int(A)
        self.d = int(d)
        if self.H < 2:
            raise VoxlabError(f"horizon must be >= 2, got {self.H}")
        if len(layers) != self.H:
            raise VoxlabError(f"expected {self.H} layers, got {len(layers)}")
        self.layers = tuple(tuple(int(s) for s in ids) for ids in layers)
        if len(phi) != self.H - 1 or len(mu) != self.H - 1:
            raise VoxlabError(
                f"expected {self.H - 1} phi/mu tables, got {len(phi)}/{len(mu)}"
            )
        self.phi = tuple(_freeze(p) for p in phi)
        self.mu = tuple(_freeze(m) for m in mu)
        self.rho = _freeze(rho)
        for h in range(self.H - 1):
            want = (self.n_states(h), self.A, self.d)
            if self.phi[h].shape != want:
                raise VoxlabError(f"phi[{h}] has shape {self.phi[h].shape}, want {want}")
            want = (self.n_states(h + 1), self.d)
            if self.mu[h].shape != want:
                raise VoxlabError(f"mu[{h}] has shape {self.mu[h].shape}, want {want}")
        if self.rho.shape != (self.n_states(0),):
            raise VoxlabError(f"rho has shape {self.rho.shape}, want ({self.n_states(0)},)")
        self._transitions = [None] * (self.H - 1)

    def n_states(self, h):
        return len(self.layers[h])

    def state_counts(self):
        return [self.n_states(h) for h in range(self.H)]

    def transition_matrix(self, h):
        """Dense transition tensor T[x, a, x'] for the step from layer h, cached."""
        if not 0 <= h < self.H - 1:
            raise LayerRangeError(f"no transition out of layer {h} (H={self.H})")
        if self._transitions[h] is None:
            T = np.einsum("xad,yd->xay", self.phi[h], self.mu[h])
            self._transitions[h] = _freeze(T)
        return self._transitions[h]

    def to_json(self):
        payload = {
            "H": self.H,
            "A": self.A,
            "d": self.d,
            "layers": [list(ids) for ids in self.layers],
            "phi": [p.tolist() for p in self.phi],
            "mu": [m.tolist() for m in self.mu],
            "rho": self.rho.tolist(),
        }
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(text):
        obj = json.loads(text)
        return LayeredLowRankMDP(
            obj["H"], obj["A"], obj["d"], obj["layers"], obj["phi"], obj["mu"], obj["rho"]
        )


class Policy:
    """Per-layer action-distribution tables over a contiguous layer range.

    ``tables[i]`` is the (|X_{lo+i}|, A) row-stochastic table for layer lo+i.
    Partial policies are allowed; deterministic policies use one-hot rows.
    """

    def __init__(self, lo, tables):
        self.lo = int(lo)
        self.tables = tuple(_freeze(t) for t in tables)
        for t in self.tables:
            if t.ndim != 2:
                raise VoxlabError("policy tables must be 2-d (states x actions)")

    @property
    def hi(self):
        return self.lo + len(self.tables) - 1

    def covers(self, lo, hi):
        return self.lo <= lo and self.hi >= hi and len(self.tables) > 0

    def table(self, h):
        if not self.lo <= h <= self.hi:
            raise LayerRangeError(
                f"policy covers layers [{self.lo}..{self.hi}], asked for {h}"
            )
        return self.tables[h - self.lo]

    def action_key(self):
        """Hashable digest of the tables, used to deduplicate policies."""
        return tuple(t.tobytes() for t in self.tables) + (self.lo,)

    @staticmethod
    def uniform(mdp, lo=0, hi=None):
        hi = mdp.H - 1 if hi is None else hi
        tables = [
            np.full((mdp.n_states(h), mdp.A), 1.0 / mdp.A) for h in range(lo, hi + 1)
        ]
        return Policy(lo, tables)

    @staticmethod
    def empty(lo=0):
        """Policy with no layers; usable as a roll-in prefix for layer lo."""
        return Policy(lo, [])

    @staticmethod
    def from_actions(mdp, actions, lo=0):
        """Deterministic policy from per-layer action index arrays."""
        tables = []
        for i, acts in enumerate(actions):
            h = lo + i
            t = np.zeros((mdp.n_states(h), mdp.A))
            t[np.arange(mdp.n_states(h)), np.asarray(acts, dtype=int)] = 1.0
            tables.append(t)
        return Policy(lo, tables)


class PolicyDistribution:
    """Finite weighted mixture of policies; weights must sum to 1."""

    def __init__(self, policies, weights):
        self.policies = list(policies)
        self.weights = np.asarray(weights, dtype=float)
        if len(self.policies) == 0:
            raise VoxlabError("policy distribution needs nonempty support")
        if self.weights.shape != (len(self.policies),):
            raise VoxlabError("one weight per policy required")
        if np.any(self.weights < -WEIGHT_TOL):
            raise VoxlabError("mixture weights must be nonnegative")
        total = float(self.weights.sum())
        if abs(total - 1.0) > WEIGHT_TOL:
            raise VoxlabError(f"mixture weights sum to {total!r}, expected 1")
        self.weights = np.clip(self.weights, 0.0, None)
        self.weights.setflags(write=False)

    def __len__(self):
        return len(self.policies)

    def __iter__(self):
        return zip(self.policies, self.weights)

    @property
    def support_size(self):
        return len(self.policies)

    @staticmethod
    def point_mass(policy):
        return PolicyDistribution([policy], [1.0])


def as_distribution(P):
    """Coerce a Policy into a point-mass PolicyDistribution."""
    if isinstance(P, PolicyDistribution):
        return P
    if isinstance(P, Policy):
        return PolicyDistribution.point_mass(P)
    raise VoxlabError(f"expected Policy or PolicyDistribution, got {type(P).__name__}")


class FeatureClass:
    """Finite class of candidate feature maps, each shaped like the MDP's phi.

    ``candidates[i][h]`` has shape (|X_h|, A, d).  ``true_index`` optionally
    records which member is the environment's own map.
    """

    def __init__(self, candidates, true_index=None):
        if len(candidates) == 0:
            raise VoxlabError("feature class must be nonempty")
        self.candidates = [tuple(_freeze(t) for t in cand) for cand in candidates]
        shape0 = [t.shape for t in self.candidates[0]]
        for cand in self.candidates:
            if [t.shape for t in cand] != shape0:
                raise VoxlabError("all candidate maps must share table shapes")
        self.true_index = true_index
        self.d = self.candidates[0][0].shape[2]

    def __len__(self):
        return len(self.candidates)

    def __getitem__(self, i):
        return self.candidates[i]

    def tables_at(self, h):
        """List of per-candidate (|X_h|, A, d) tables for one layer."""
        return [cand[h] for cand in self.candidates]

    def max_feature_norm(self):
        worst = 0.0
        for cand in self.candidates:
            for t in cand:
                worst = max(worst, float(np.linalg.norm(t, axis=2).max()))
        return worst


class Discriminator:
    """Direction-plus-feature-map test function f(x) = max_a theta . phi(x, a)."""

    def __init__(self, theta, phi_index):
        self.theta = _freeze(theta)
        self.phi_index = int(phi_index)
        nrm = float(np.linalg.norm(self.theta))
        if nrm > 1.0 + NORM_TOL:
            raise VoxlabError(f"discriminator direction has norm {nrm} > 1")

    def values(self, Phi, h):
        """Evaluate f on every state of layer h (vector of per-state maxima)."""
        table = Phi[self.phi_index][h]  # (n_h, A, d)
        return (table @ self.theta).max(axis=1)


def compose_policies(prefix, suffix):
    """Concatenate two policies whose layer ranges abut.

    The result plays ``prefix`` on its layers and ``suffix`` from there on.
    """
    if len(prefix.tables) == 0:
        return suffix
    if len(suffix.tables) == 0:
        return prefix
    if prefix.hi + 1 != suffix.lo:
        raise LayerRangeError(
            f"cannot compose: prefix covers [{prefix.lo}..{prefix.hi}], "
            f"suffix covers [{suffix.lo}..{suffix.hi}]"
        )
    return Policy(prefix.lo, list(prefix.tables) + list(suffix.tables))


def mixture_sample(P, rng):
    """Draw one support policy of ``P`` with probability equal to its weight."""
    P = as_distribution(P)
    idx = int(rng.choice(len(P.policies), p=P.weights / P.weights.sum()))
    return P.policies[idx]


def validate_mdp(M):
    """Check every structural invariant and report violations as strings.

    Returns an empty list iff the factorization is valid: feature norms at
    most 1, transition rows that are nonnegative densities summing to 1,
    per-coordinate l1 mass of each mu table at most 1, and rho a probability
    vector.  On top of the l1 condition, a fixed-seed spot check evaluates
    || sum_x g(x) mu(x) || <= sqrt(d) on 1000 random binary g per layer.
    """
    report = []
    d = M.d
    for h in range(M.H - 1):
        norms = np.linalg.norm(M.phi[h], axis=2)
        for x, a in zip(*np.nonzero(norms > 1.0 + NORM_TOL)):
            report.append(
                f"phi norm bound violated at (h={h}, x={x}, a={a}): {norms[x, a]:.12g} > 1"
            )
        T = np.einsum("xad,yd->xay", M.phi[h], M.mu[h])
        bad = T < -NEG_TOL
        for x, a, y in zip(*np.nonzero(bad)):
            report.append(
                f"negative transition density at (h={h}, x={x}, a={a}, x'={y}): {T[x, a, y]:.12g}"
            )
        sums = T.sum(axis=2)
        for x, a in zip(*np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)):
            report.append(
                f"transition row sum off at (h={h}, x={x}, a={a}): {sums[x, a]:.12g}"
            )
        l1 = np.abs(M.mu[h]).sum(axis=0)
        for i in np.nonzero(l1 > 1.0 + ROW_SUM_TOL)[0]:
            report.append(
                f"mu coordinate l1 mass exceeds 1 at (h={h}, i={i}): {l1[i]:.12g}"
            )
        # spot check the aggregate normalization on random binary weightings
        spot = np.random.default_rng(0)
        g = spot.integers(0, 2, size=(1000, M.n_states(h + 1)))
        agg = np.linalg.norm(g @ M.mu[h], axis=1)
        worst = float(agg.max())
        if worst > np.sqrt(d) + ROW_SUM_TOL:
            report.append(
                f"mu aggregate norm exceeds sqrt(d) at h={h}: {worst:.12g} > {np.sqrt(d):.12g}"
            )
    if np.any(M.rho < -NEG_TOL):
        report.append("rho has a negative entry")
    if abs(float(M.rho.sum()) - 1.0) > ROW_SUM_TOL:
        report.append(f"rho sums to {float(M.rho.sum()):.12g}, expected 1")
    return report
