"""Command-line front end.

Subcommands: generate-env, run-vox, run-spanrl, optimize-reward,
verify-cover, selftest.  All randomness derives from --seed; outputs are
sorted-key JSON so identical invocations produce byte-identical files.
Exit codes: 0 success, 1 verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from voxlab.core import LayeredLowRankMDP, VoxlabError, validate_mdp
from voxlab.drivers import (
    CoverSet,
    RunResult,
    SpanrlSchedule,
    VoxSchedule,
    optimize_reward,
    run_spanrl,
    run_vox,
)
from voxlab.evalcover import check_policy_cover
from voxlab.replearn import RepLearnConfig
from voxlab.simenv import EnvSpec, generate_low_rank_mdp, make_feature_class


def _dump(obj, path):
    text = json.dumps(obj, sort_keys=True, indent=1)
    if path == "-":
        sys.stdout.write(text + "\n")
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _load_env(path):
    with open(path) as fh:
        return LayeredLowRankMDP.from_json(fh.read())


def _feature_class_from_config(M, config, seed):
    fc = config.get("feature_class", {})
    rng = np.random.default_rng(int(fc.get("seed", seed)) + 0xFEA7)
    return make_feature_class(M, int(fc.get("n_decoys", 3)), rng)


def _replearn_config(config):
    rl = config.get("replearn", {})
    return RepLearnConfig(**rl)


def _cmd_generate_env(args):
    spec = EnvSpec(
        H=args.H,
        A=args.A,
        d_latent=args.d,
        state_counts=[int(s) for s in args.states.split(",")],
        seed=args.seed,
        boost=args.boost_eta,
        rotate=args.rotate,
    )
    M = generate_low_rank_mdp(spec)
    problems = validate_mdp(M)
    if problems:
        raise VoxlabError("generated environment failed validation: "
                          + "; ".join(problems))
    if args.out == "-":
        sys.stdout.write(M.to_json() + "\n")
    else:
        with open(args.out, "w") as fh:
            fh.write(M.to_json() + "\n")
    return 0


def _measured_alphas(M, covers: CoverSet, mode):
    out = {}
    for h in range(2, M.H):
        rep = check_policy_cover(M, covers.distribution(h), h, alpha=0.0, eps=0.0,
                                 mode=mode)
        alpha = rep["alpha_measured"]
        out[str(h)] = alpha if math.isfinite(alpha) else None
    return out


def _cmd_run_vox(args):
    M = _load_env(args.env)
    with open(args.config) as fh:
        config = json.load(fh)
    Phi = _feature_class_from_config(M, config, args.seed)
    schedule = VoxSchedule(
        K=int(config["K"]),
        gamma=float(config["gamma"]),
        n_replearn=int(config["n_replearn"]),
        n_estmat=int(config["n_estmat"]),
        n_psdp=int(config["n_psdp"]),
        C=float(config.get("C", 2.0)),
        fw_max_iters=config.get("fw_max_iters"),
        replearn=_replearn_config(config),
    )
    rng = np.random.default_rng(args.seed)
    result = run_vox(M, Phi, schedule, rng)
    obj = result.to_obj()
    obj["algorithm"] = "vox"
    obj["seed"] = args.seed
    obj["alphas"] = _measured_alphas(M, result.covers, "expectation")
    obj["certificates"] = [row["certificate"] for row in result.log]
    _dump(obj, args.out)
    if args.csv:
        _write_csv(result.log, args.csv)
    return 0


def _write_csv(log, path):
    lines = ["iter,objective,certificate"]
    step = 0
    for row in log:
        for _, objective, certificate in row.get("trace", []):
            step += 1
            lines.append(f"{step},{objective!r},{certificate!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _cmd_run_spanrl(args):
    M = _load_env(args.env)
    with open(args.config) as fh:
        config = json.load(fh)
    Phi = _feature_class_from_config(M, config, args.seed)
    schedule = SpanrlSchedule(
        n_replearn=int(config["n_replearn"]),
        n_estvec=int(config["n_estvec"]),
        n_psdp=int(config["n_psdp"]),
        C=float(config.get("C", 2.0)),
        max_rounds=config.get("max_rounds"),
        replearn=_replearn_config(config),
    )
    rng = np.random.default_rng(args.seed)
    result = run_spanrl(M, Phi, float(config["eps"]), schedule, rng)
    obj = result.to_obj()
    obj["algorithm"] = "spanrl"
    obj["seed"] = args.seed
    obj["alphas"] = _measured_alphas(M, result.covers, "max")
    obj["certificates"] = [row["spanner_rounds"] for row in result.log]
    _dump(obj, args.out)
    return 0


def _cmd_optimize_reward(args):
    M = _load_env(args.env)
    with open(args.config) as fh:
        config = json.load(fh)
    with open(args.run) as fh:
        covers = CoverSet.from_obj(json.load(fh)["covers"])
    Phi = _feature_class_from_config(M, config, args.seed)
    with open(args.theta) as fh:
        thetas = [np.asarray(t, dtype=float) for t in json.load(fh)]
    rng = np.random.default_rng(args.seed)
    pol, value = optimize_reward(M, covers, thetas, Phi,
                                 int(config.get("n_psdp", 20000)), rng)
    _dump(
        {
            "value": value,
            "seed": args.seed,
            "policy": {
                "lo": pol.lo,
                "tables": [t.tolist() for t in pol.tables],
            },
        },
        args.out,
    )
    return 0


def _cmd_verify_cover(args):
    M = _load_env(args.env)
    with open(args.run) as fh:
        run_obj = json.load(fh)
    covers = CoverSet.from_obj(run_obj["covers"])
    mode = args.mode or ("max" if covers.kind == "spanrl" else "expectation")
    reports = {}
    ok = True
    for h in range(2, M.H):
        rep = check_policy_cover(M, covers.distribution(h), h, alpha=args.alpha,
                                 eps=args.eps, mode=mode)
        if not math.isfinite(rep["alpha_measured"]):
            rep["alpha_measured"] = None
        reports[str(h)] = rep
        ok = ok and rep["passed"]
    _dump({"passed": ok, "alpha": args.alpha, "eps": args.eps,
           "layers": reports}, args.out)
    return 0 if ok else 1


def _cmd_selftest(args):
    import voxlab.simenv as simenv
    from voxlab.core import Policy
    from voxlab.optdesign import DesignOracles, fw_optdesign
    from voxlab.psdp import ball_constrained_least_squares
    from voxlab.spanner import robust_spanner, verify_spanner

    failures = []

    def check(name, cond):
        if not cond:
            failures.append(name)

    spec = EnvSpec(H=3, A=2, d_latent=2, state_counts=[2, 3, 3], seed=args.seed)
    M = generate_low_rank_mdp(spec)
    check("env-valid", not validate_mdp(M))
    check("env-json-roundtrip",
          LayeredLowRankMDP.from_json(M.to_json()).to_json() == M.to_json())
    occ = simenv.exact_occupancy(M, Policy.uniform(M, 0, 1), 2)
    check("occupancy-normalized", abs(float(occ.sum()) - 1.0) < 1e-9)

    w = ball_constrained_least_squares(np.array([[1.0]]), np.array([2.0]), 1.0)
    check("ball-lsq-projection", abs(w[0] - 1.0) < 1e-9)

    target = np.eye(2) / math.sqrt(2.0)
    oracles = DesignOracles(dim=2, lin_opt=lambda W: 0, lin_est=lambda P: target)
    state = fw_optdesign(oracles, C=2.0, gamma=0.1)
    check("fw-singleton", state.iterations == 1 and state.support_size == 1)

    family = [np.eye(3)[:, i] * s for i in range(3) for s in (1.0, -1.0)]
    sp = robust_spanner(
        lambda th: int(np.argmax([th @ v for v in family])),
        lambda z: family[z],
        C=2.0, eps=0.05, d=3,
    )
    reports = verify_spanner(sp.W, family, C=2.0, eps=0.05)
    check("spanner-orthonormal", all(r["passed"] for r in reports))

    if failures:
        sys.stderr.write("selftest failures: " + ", ".join(failures) + "\n")
        return 1
    sys.stdout.write("selftest ok\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="voxlab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-env", help="write a synthetic environment")
    p.add_argument("--H", type=int, required=True)
    p.add_argument("--A", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--states", required=True,
                   help="comma-separated per-layer state counts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--boost-eta", type=float, default=0.0, dest="boost_eta")
    p.add_argument("--rotate", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate_env)

    p = sub.add_parser("run-vox", help="run the design-based explorer")
    p.add_argument("--env", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None,
                   help="optional per-iteration design trace")
    p.set_defaults(func=_cmd_run_vox)

    p = sub.add_parser("run-spanrl", help="run the spanner-based explorer")
    p.add_argument("--env", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_run_spanrl)

    p = sub.add_parser("optimize-reward", help="PSDP on a linear reward")
    p.add_argument("--env", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--run", required=True, help="output of run-vox/run-spanrl")
    p.add_argument("--theta", required=True, help="JSON list of reward vectors")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_optimize_reward)

    p = sub.add_parser("verify-cover", help="check stored covers exactly")
    p.add_argument("--env", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--mode", choices=["expectation", "max"], default=None)
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_verify_cover)

    p = sub.add_parser("selftest", help="run fast internal consistency checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_selftest)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (VoxlabError, OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
