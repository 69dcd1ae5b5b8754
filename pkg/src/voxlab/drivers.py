"""VoX and SpanRL outer loops plus downstream reward optimization.

Both drivers build per-layer exploration covers bottom-up: the first two
layers need no exploration (initial states plus one uniform action), and
each processed layer h hands its policies, composed with uniform actions
from layer h+1 on, to layer h+2.

VoX: per inner iteration, relearn features from the running roll-in
mixture, then run the design loop whose LinOpt is PSDP on quadratic
feature rewards and whose LinEst is the Monte-Carlo second moment; the
layer's cover is the uniform average of the K design distributions.

SpanRL: relearn features once per layer, then build a barycentric spanner
of the reachable feature expectations whose LinOpt is PSDP on linear
feature rewards and whose LinEst is the Monte-Carlo first moment; the d
spanner policies form the cover.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from voxlab.core import (
    Policy,
    PolicyDistribution,
    VoxlabError,
    compose_policies,
)
from voxlab.estimators import est_mat, est_vec
from voxlab.optdesign import DesignOracles, fw_optdesign
from voxlab.psdp import RewardSpec, ValueClass, psdp
from voxlab.replearn import RepLearnConfig, rep_learn
from voxlab.simenv import EpisodeCounter, exact_policy_value
from voxlab.spanner import robust_spanner


@dataclass
class VoxSchedule:
    """Parameters of one VoX run.

    Direct mode takes every knob explicitly; paper mode derives them from
    the target reachability eta and the class size via the published
    schedule (astronomical at desk scale, exposed for bound checks).
    """

    K: int
    gamma: float
    n_replearn: int
    n_estmat: int
    n_psdp: int
    mode: str = "direct"
    C: float = 2.0
    eta: float | None = None
    c: float = 1.0
    delta: float = 0.05
    fw_max_iters: int | None = None
    replearn: RepLearnConfig = field(default_factory=RepLearnConfig)

    def __post_init__(self):
        if self.K < 1 or min(self.n_replearn, self.n_estmat, self.n_psdp) < 1:
            raise VoxlabError("schedule counts must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise VoxlabError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.mode not in ("direct", "paper"):
            raise VoxlabError(f"unknown mode {self.mode!r}")

    @classmethod
    def paper(cls, eta, d, A, n_candidates, H, c=1.0, delta=0.05, **kw):
        K = math.ceil(c * eta**-2 * d**5 * A)
        gamma = eta**2 * d**-4 / 576.0
        log_phi = math.log(n_candidates / delta)
        return cls(
            K=K,
            gamma=gamma,
            n_replearn=math.ceil(c * eta**-5 * d**10 * A**2 * log_phi),
            n_estmat=math.ceil(c * gamma**-4 * math.log(1.0 / delta)),
            n_psdp=math.ceil(
                c * eta**-1 * gamma**-2 * H**2 * d**2 * K * A**2 * (d + log_phi)
            ),
            mode="paper",
            eta=eta,
            c=c,
            delta=delta,
            **kw,
        )


@dataclass
class SpanrlSchedule:
    """Parameters of one SpanRL run (same two modes as VoxSchedule)."""

    n_replearn: int
    n_estvec: int
    n_psdp: int
    mode: str = "direct"
    C: float = 2.0
    c: float = 1.0
    delta: float = 0.05
    max_rounds: int | None = None
    replearn: RepLearnConfig = field(default_factory=RepLearnConfig)

    def __post_init__(self):
        if min(self.n_replearn, self.n_estvec, self.n_psdp) < 1:
            raise VoxlabError("schedule counts must be positive")

    @classmethod
    def paper(cls, eps, d, A, n_candidates, H, c=1.0, delta=0.05, **kw):
        log_phi = math.log(n_candidates / delta)
        return cls(
            n_replearn=math.ceil(c * eps**-2 * A**2 * d * log_phi),
            n_estvec=math.ceil(c * eps**-2 * math.log(1.0 / delta)),
            n_psdp=math.ceil(c * eps**-2 * A**2 * d**3 * H**2 * (d + log_phi)),
            mode="paper",
            c=c,
            delta=delta,
            **kw,
        )


def mix_distributions(parts):
    """Convex combination of policy distributions with action-table dedup.

    ``parts`` is a sequence of (PolicyDistribution, coefficient) with
    coefficients summing to 1.
    """
    total = sum(coef for _, coef in parts)
    if abs(total - 1.0) > 1e-9:
        raise VoxlabError(f"mixture coefficients sum to {total}, expected 1")
    policies, weights, seen = [], [], {}
    for dist, coef in parts:
        if coef == 0.0:
            continue
        for pi, w in zip(dist.policies, dist.weights):
            key = (pi.lo, pi.action_key())
            if key in seen:
                weights[seen[key]] += coef * w
            else:
                seen[key] = len(policies)
                policies.append(pi)
                weights.append(coef * w)
    return PolicyDistribution(policies, weights)


@dataclass
class CoverSet:
    """Per-layer exploration covers produced by a driver."""

    kind: str
    H: int
    layers: list
    psis: list | None = None
    meta: dict = field(default_factory=dict)

    def distribution(self, h) -> PolicyDistribution:
        if not 0 <= h < self.H or self.layers[h] is None:
            raise VoxlabError(f"no cover stored for layer {h}")
        return self.layers[h]

    def to_obj(self):
        return {
            "kind": self.kind,
            "H": self.H,
            "layers": [
                {
                    "weights": [float(w) for w in dist.weights],
                    "policies": [_policy_to_obj(pi) for pi in dist.policies],
                }
                for dist in self.layers
            ],
            "meta": self.meta,
        }

    @classmethod
    def from_obj(cls, obj):
        layers = [
            PolicyDistribution(
                [_policy_from_obj(p) for p in entry["policies"]],
                entry["weights"],
            )
            for entry in obj["layers"]
        ]
        psis = [list(dist.policies) for dist in layers] if obj["kind"] == "spanrl" \
            else None
        return cls(kind=obj["kind"], H=int(obj["H"]), layers=layers, psis=psis,
                   meta=obj.get("meta", {}))


def _policy_to_obj(pi: Policy):
    return {"lo": pi.lo, "tables": [t.tolist() for t in pi.tables]}


def _policy_from_obj(obj):
    return Policy(int(obj["lo"]), [np.asarray(t, dtype=float) for t in obj["tables"]])


@dataclass
class RunResult:
    covers: CoverSet
    episodes: int
    log: list

    def to_obj(self):
        return {
            "covers": self.covers.to_obj(),
            "episode_count": self.episodes,
            "log": self.log,
        }

    def to_json(self):
        return json.dumps(self.to_obj(), sort_keys=True)


def _uniform_dist(M):
    return PolicyDistribution.point_mass(Policy.uniform(M, 0, M.H - 1))


def run_vox(M, Phi, schedule: VoxSchedule, rng, counter=None) -> RunResult:
    """Layer-by-layer cover construction via representation-aware design."""
    counter = EpisodeCounter() if counter is None else counter
    d = Phi.d
    covers = [None] * M.H
    covers[0] = _uniform_dist(M)
    if M.H >= 2:
        covers[1] = _uniform_dist(M)
    log = []
    for hc in range(M.H - 2):
        design_dists = []
        for k in range(1, schedule.K + 1):
            if k == 1:
                rollin = covers[hc]
            else:
                prev = 1.0 / (2.0 * (k - 1))
                rollin = mix_distributions(
                    [(covers[hc], 0.5)] + [(D, prev) for D in design_dists]
                )
            rep = rep_learn(M, hc, Phi, rollin, schedule.n_replearn,
                            schedule.replearn, rng, counter=counter)
            tab = Phi.tables_at(hc)[rep.index]
            phiphi = np.einsum("xad,xae->xade", tab, tab)
            interned, seen = [], {}

            def lin_opt(Mquery, _tab=tab, _interned=interned, _seen=seen, _hc=hc):
                rewards = RewardSpec.quadratic(Mquery, _tab, _hc)
                classes = [ValueClass.ball(Phi, math.sqrt(d)) for _ in range(_hc)]
                classes.append(ValueClass.singleton(rewards.layer_table(M, _hc)))
                pol = psdp(M, _hc, rewards, classes, covers[:_hc + 1],
                           schedule.n_psdp, rng, counter=counter)
                key = pol.action_key()
                if key not in _seen:
                    _seen[key] = len(_interned)
                    _interned.append(pol)
                return _seen[key]

            def lin_est(Pdict, _phiphi=phiphi, _interned=interned, _hc=hc):
                dist = PolicyDistribution(
                    [_interned[z] for z in Pdict], list(Pdict.values())
                )
                return est_mat(M, _hc, _phiphi, dist, schedule.n_estmat, rng,
                               counter=counter)

            state = fw_optdesign(
                DesignOracles(dim=d, lin_opt=lin_opt, lin_est=lin_est),
                schedule.C, schedule.gamma, schedule.fw_max_iters,
            )
            design_dists.append(PolicyDistribution(
                [interned[z] for z in state.P], list(state.P.values())
            ))
            log.append({
                "h": hc,
                "k": k,
                "phi_index": rep.index,
                "replearn_iters": rep.iterations,
                "replearn_capped": rep.capped,
                "fw_iters": state.iterations,
                "certificate": state.certificate,
                "support": state.support_size,
                "trace": [[int(t), float(o), float(c)] for t, o, c in state.trace],
            })
        tail = Policy.uniform(M, hc + 1, M.H - 1)
        composed = [
            (PolicyDistribution(
                [compose_policies(pi, tail) for pi in dist.policies],
                dist.weights,
            ), 1.0 / schedule.K)
            for dist in design_dists
        ]
        covers[hc + 2] = mix_distributions(composed)
    coverset = CoverSet(kind="vox", H=M.H, layers=covers,
                        meta={"K": schedule.K, "gamma": schedule.gamma,
                              "C": schedule.C})
    return RunResult(covers=coverset, episodes=counter.count, log=log)


def run_spanrl(M, Phi, eps, schedule: SpanrlSchedule, rng,
               counter=None) -> RunResult:
    """Layer-by-layer cover construction via barycentric spanners."""
    counter = EpisodeCounter() if counter is None else counter
    d = Phi.d
    unif = Policy.uniform(M, 0, M.H - 1)
    psis = [None] * M.H
    psis[0] = [Policy.empty(0)]
    if M.H >= 2:
        psis[1] = [unif]
    log = []
    for hc in range(M.H - 2):
        dists = [PolicyDistribution(ps, [1.0 / len(ps)] * len(ps))
                 for ps in psis[:hc + 1]]
        rep = rep_learn(M, hc, Phi, dists[hc], schedule.n_replearn,
                        schedule.replearn, rng, counter=counter)
        tab = Phi.tables_at(hc)[rep.index]
        interned, seen = [], {}

        def lin_opt(theta, _tab=tab, _dists=dists, _interned=interned,
                    _seen=seen, _hc=hc):
            rewards = RewardSpec.linear(theta, _tab, _hc)
            classes = [ValueClass.ball(Phi, 2.0 * math.sqrt(d))
                       for _ in range(_hc + 1)]
            pol = psdp(M, _hc, rewards, classes, _dists, schedule.n_psdp, rng,
                       counter=counter)
            key = pol.action_key()
            if key not in _seen:
                _seen[key] = len(_interned)
                _interned.append(pol)
            return _seen[key]

        def lin_est(z, _tab=tab, _interned=interned, _hc=hc):
            return est_vec(M, _hc, _tab, _interned[z], schedule.n_estvec, rng,
                           counter=counter)

        state = robust_spanner(lin_opt, lin_est, schedule.C, eps, d,
                               max_rounds=schedule.max_rounds)
        chosen = [interned[z] if z is not None else unif for z in state.indices]
        tail = Policy.uniform(M, hc + 1, M.H - 1)
        psis[hc + 2] = [compose_policies(pi, tail) for pi in chosen]
        log.append({
            "h": hc,
            "phi_index": rep.index,
            "replearn_iters": rep.iterations,
            "replearn_capped": rep.capped,
            "spanner_rounds": state.rounds,
            "oracle_calls": state.oracle_calls,
        })
    layers = [
        PolicyDistribution(ps, [1.0 / len(ps)] * len(ps)) if ps else None
        for ps in psis
    ]
    coverset = CoverSet(kind="spanrl", H=M.H, layers=layers, psis=psis,
                        meta={"eps": eps, "C": schedule.C})
    return RunResult(covers=coverset, episodes=counter.count, log=log)


def optimize_reward(M, covers: CoverSet, thetas, Phi, n, rng, counter=None):
    """PSDP over the full horizon on linear true-feature rewards.

    ``thetas`` holds one vector per feature layer (H-1 of them; a list of H
    is accepted when the final entry is zero, since the last layer has no
    features).  Returns the learned policy and its exact value.
    """
    counter = EpisodeCounter() if counter is None else counter
    thetas = [np.asarray(t, dtype=float) for t in thetas]
    if len(thetas) == M.H:
        if np.linalg.norm(thetas[-1]) > 0:
            raise VoxlabError(
                "the final layer has no features; a length-H theta list must "
                "end with the zero vector"
            )
        thetas = thetas[:-1]
    if len(thetas) != M.H - 1:
        raise VoxlabError(f"need {M.H - 1} reward vectors, got {len(thetas)}")
    for t, th in enumerate(thetas):
        if np.linalg.norm(th) > 1.0 + 1e-12:
            raise VoxlabError(f"reward vector at layer {t} has norm > 1")
    tables = [M.phi[t] @ thetas[t] for t in range(M.H - 1)]
    rewards = RewardSpec.table(tables)
    top = M.H - 2
    radius = 2.0 * M.H * math.sqrt(Phi.d)
    classes = [ValueClass.ball(Phi, radius) for _ in range(top + 1)]
    dists = [covers.distribution(t) for t in range(top + 1)]
    pol = psdp(M, top, rewards, classes, dists, n, rng, counter=counter)
    value = exact_policy_value(M, pol, tables)
    return pol, value
