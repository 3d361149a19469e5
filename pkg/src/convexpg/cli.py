"""Command-line entry point.

Exit codes: 0 success, 1 check failed, 2 input error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import StepSchedule, contraction_violations, deterministic_trace, td_trace
from .compatible import fa_policy_gradient, fit
from .envs import KINDS as ENV_KINDS, EnvSpec, build, expert_occupancy
from .errors import ConvexPGError, MdpFormatError, NonFiniteUpdate
from .exact import (
    DEFAULT_FD_STEP,
    discounted_operator,
    finite_diff_gradient,
    make_report,
    occupancy_exact,
    policy_gradient,
    q_value,
    state_marginal,
)
from .learner import TrainConfig, run_algorithm1, run_exact_descent, run_metadata
from .mdp import PolicyParams, TabularMdp, mdp_from_dict, mdp_to_json, parse_mdp, validate
from .utilities import UtilitySpec

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class InputError(Exception):
    pass


# --- input loading ----------------------------------------------------------

def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc


def load_model(path) -> TabularMdp:
    """Load an MDP document, or build one if the document is an environment spec."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    try:
        if isinstance(doc, dict) and doc.get("kind") in ENV_KINDS:
            return build(EnvSpec.from_dict(doc))
        return parse_mdp(text, str(path))
    except (ConvexPGError, TypeError) as exc:
        raise InputError(str(exc)) from exc


def resolve_utility(doc: dict, mdp: TabularMdp) -> UtilitySpec:
    """Build a utility; ``expert_theta`` is accepted in place of ``expert_occupancy``."""
    doc = dict(doc)
    if "expert_theta" in doc:
        theta = np.asarray(doc.pop("expert_theta"), dtype=float)
        if theta.shape != (mdp.n_states, mdp.n_actions):
            raise InputError(f"expert_theta shape {theta.shape} does not match the MDP")
        doc["expert_occupancy"] = expert_occupancy(mdp, PolicyParams(theta)).tolist()
    try:
        spec = UtilitySpec.from_dict(doc)
        spec.check(mdp.gamma)
    except (ConvexPGError, TypeError) as exc:
        raise InputError(str(exc)) from exc
    for name in ("reward", "expert_occupancy"):
        arr = getattr(spec, name)
        if arr is not None and arr.size != mdp.n_pairs:
            raise InputError(f"utility {name} has {arr.size} entries, MDP has {mdp.n_pairs} pairs")
    return spec


def load_policy(args, mdp: TabularMdp) -> PolicyParams:
    if getattr(args, "policy", None):
        try:
            params = PolicyParams.from_dict(_read_json(args.policy))
        except (KeyError, ValueError, TypeError) as exc:
            raise InputError(f"bad policy file {args.policy}: {exc}") from exc
        if params.theta.shape != (mdp.n_states, mdp.n_actions):
            raise InputError(f"policy shape {params.theta.shape} does not match the MDP")
        return params
    if getattr(args, "theta_seed", None) is not None:
        return PolicyParams.random(mdp, args.theta_seed)
    return PolicyParams.uniform(mdp)


# --- output -----------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects outputs of one command and writes the manifest on close."""

    def __init__(self, args, inputs):
        self.args = args
        self.out = Path(args.out) if getattr(args, "out", None) else None
        self.inputs = [p for p in inputs if p]
        self.outputs: list[str] = []
        self.started = datetime.now(timezone.utc).isoformat()

    def emit(self, name: str, text: str) -> None:
        """Write ``text`` to ``out/name``, or to stdout without ``--out``."""
        if self.out is None:
            sys.stdout.write(text if text.endswith("\n") else text + "\n")
            return
        path = self.out / name
        _atomic_write(path, text if text.endswith("\n") else text + "\n")
        self.outputs.append(str(path))

    def close(self, seed=None) -> None:
        if self.out is None:
            return
        manifest = {
            "command_line": [os.path.basename(sys.argv[0])] + list(self.args.argv),
            "input_digests": {str(p): _digest(p) for p in self.inputs},
            "seed": seed,
            "version": __version__,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "outputs": self.outputs,
        }
        _atomic_write(self.out / "manifest.json", json.dumps(manifest, indent=1) + "\n")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1)


# --- commands ---------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        text = Path(args.mdp).read_text()
        doc = json.loads(text)
    except OSError as exc:
        print(f"error: cannot read {args.mdp}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_INPUT
    except json.JSONDecodeError as exc:
        print(f"error: {args.mdp}:{exc.lineno}: invalid JSON: {exc.msg}", file=sys.stderr)
        return EXIT_INPUT
    try:
        mdp = mdp_from_dict(doc) if isinstance(doc, dict) else None
    except MdpFormatError as exc:
        print(f"error: {args.mdp}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if mdp is None:
        print(f"error: {args.mdp}: top-level value must be an object", file=sys.stderr)
        return EXIT_INPUT
    problems = validate(mdp)
    for v in problems:
        print(f"{args.mdp}: {v.message}")
    if problems:
        return EXIT_CHECK
    print(f"{args.mdp}: valid ({mdp.n_states} states, {mdp.n_actions} actions, gamma={mdp.gamma})")
    return EXIT_OK


def cmd_solve(args) -> int:
    mdp = load_model(args.mdp)
    params = load_policy(args, mdp)
    run = Run(args, [args.mdp, getattr(args, "policy", None)])
    occ = occupancy_exact(mdp, params)
    mass = occ.total_mass
    expected = 1.0 / (1.0 - mdp.gamma)
    ok = abs(mass - expected) <= 1e-8 and np.allclose(occ.state_action.sum(axis=1), occ.state_marginal, atol=1e-10)
    run.emit("occupancy.json", _dumps(occ.to_dict()))
    print(f"total mass {mass:.12g} (expected {expected:.12g})", file=sys.stderr)
    run.close()
    return EXIT_OK if ok else EXIT_CHECK


def cmd_gradcheck(args) -> int:
    mdp = load_model(args.mdp)
    utility = resolve_utility(_read_json(args.utility), mdp)
    params = load_policy(args, mdp)
    run = Run(args, [args.mdp, args.utility, getattr(args, "policy", None)])
    if args.method == "exact":
        analytic = policy_gradient(mdp, params, utility)
    else:
        occ = occupancy_exact(mdp, params)
        q = q_value(discounted_operator(mdp, params), utility.gradient(occ))
        analytic = fa_policy_gradient(mdp, params, fit(mdp, params, q))
    numeric = finite_diff_gradient(mdp, params, utility, args.fd_step)
    report = make_report(analytic, numeric, args.fd_step, args.method)
    passed = report.passed(args.tol)
    if run.out is not None:
        run.emit("gradcheck.json", report.to_json())
    elif args.format == "json":
        run.emit("gradcheck.json", report.to_json())
    print(f"{'PASS' if passed else 'FAIL'} method={args.method} max_abs_err={report.max_abs_err:.3e} "
          f"tol={args.tol:.3e}")
    run.close()
    return EXIT_OK if passed else EXIT_CHECK


def cmd_bootstrap(args) -> int:
    mdp = load_model(args.mdp)
    params = load_policy(args, mdp)
    run = Run(args, [args.mdp, getattr(args, "policy", None)])
    status = EXIT_OK
    if args.mode == "deterministic":
        trace = deterministic_trace(mdp, params, args.iters)
        initial = float(np.abs(state_marginal(mdp, params)).sum())  # d0 = 0
        bad = contraction_violations(trace, initial, mdp.gamma)
        if bad:
            print(f"contraction bound violated at iterations {bad[:10]}", file=sys.stderr)
            status = EXIT_CHECK
    else:
        schedule = StepSchedule(args.eta_kind, args.eta_c, args.eta_p)
        _, trace = td_trace(mdp, params, args.iters, args.seed, schedule,
                            restart_every=args.restart_every, log_every=args.log_every)
    run.emit("bootstrap.csv", trace.to_csv())
    run.close(seed=args.seed if args.mode == "td" else None)
    return status


def _train_one(mdp, config, method, out_dir: Path | None):
    runner = run_algorithm1 if method == "alg1" else run_exact_descent
    params, trace = runner(mdp, config)
    files = {
        "trace.csv": trace.to_csv(),
        "policy.json": _dumps(params.to_dict()) + "\n",
        "meta.json": _dumps(run_metadata(config, method)) + "\n",
    }
    if out_dir is not None:
        for name, text in files.items():
            _atomic_write(out_dir / name, text)
    return files


def _train_worker(job):
    mdp, config, method, out_dir = job
    try:
        _train_one(mdp, config, method, out_dir)
        return config.seed, None
    except NonFiniteUpdate as exc:
        return config.seed, str(exc)


def _parse_seeds(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",")]


def cmd_train(args) -> int:
    mdp = load_model(args.mdp)
    cfg_doc = _read_json(args.config)
    if "utility" not in cfg_doc:
        raise InputError("train config requires a 'utility' object")
    utility = resolve_utility(cfg_doc["utility"], mdp)
    try:
        config = TrainConfig.from_dict(cfg_doc, utility=utility)
    except (ConvexPGError, TypeError, KeyError, ValueError) as exc:
        raise InputError(f"bad train config: {exc}") from exc
    if args.seed is not None:
        config = TrainConfig(**{**config.__dict__, "seed": args.seed})
    run = Run(args, [args.mdp, args.config])

    if args.seeds:
        if run.out is None:
            raise InputError("--seeds requires --out")
        seeds = _parse_seeds(args.seeds)
        jobs = [(mdp, TrainConfig(**{**config.__dict__, "seed": s}), args.method, run.out / f"seed_{s}")
                for s in seeds]
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_train_worker, jobs))
        failed = [(s, msg) for s, msg in results if msg]
        for s in seeds:
            for name in ("trace.csv", "policy.json", "meta.json"):
                run.outputs.append(str(run.out / f"seed_{s}" / name))
        for s, msg in failed:
            print(f"seed {s}: {msg}", file=sys.stderr)
        run.close(seed=seeds)
        return EXIT_NUMERIC if failed else EXIT_OK

    try:
        files = _train_one(mdp, config, args.method, None)
    except NonFiniteUpdate as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if run.out is None:
        sys.stdout.write(files["trace.csv"])
    else:
        for name, text in files.items():
            run.emit(name, text)
    run.close(seed=config.seed)
    return EXIT_OK


def cmd_make_env(args) -> int:
    try:
        spec = EnvSpec.from_dict(_read_json(args.spec))
        mdp = build(spec)
    except (ConvexPGError, TypeError) as exc:
        raise InputError(str(exc)) from exc
    run = Run(args, [args.spec])
    run.emit("mdp.json", mdp_to_json(mdp))
    run.close(seed=spec.seed)
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"), default=None)

    policy = argparse.ArgumentParser(add_help=False)
    grp = policy.add_mutually_exclusive_group()
    grp.add_argument("--policy", help="JSON file with a 'theta' matrix")
    grp.add_argument("--uniform", action="store_true", help="uniform policy (default)")
    grp.add_argument("--theta-seed", type=int, default=None, help="standard-normal theta from this seed")

    p = argparse.ArgumentParser(prog="convexpg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="check an MDP file")
    s.add_argument("mdp")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("solve", parents=[common, policy], help="exact occupancy measure")
    s.add_argument("mdp")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("gradcheck", parents=[common, policy], help="policy gradient vs finite differences")
    s.add_argument("mdp")
    s.add_argument("utility")
    s.add_argument("--method", choices=("exact", "compatible"), default="exact")
    s.add_argument("--fd-step", type=float, default=DEFAULT_FD_STEP)
    s.add_argument("--tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("bootstrap", parents=[common, policy], help="occupancy bootstrap convergence trace")
    s.add_argument("mdp")
    s.add_argument("--mode", choices=("deterministic", "td"), default="deterministic")
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--eta-kind", choices=("constant", "polynomial"), default="polynomial")
    s.add_argument("--eta-c", type=float, default=0.5)
    s.add_argument("--eta-p", type=float, default=0.6)
    s.add_argument("--restart-every", type=int, default=None)
    s.add_argument("--log-every", type=int, default=1)
    s.set_defaults(func=cmd_bootstrap)

    s = sub.add_parser("train", parents=[common], help="run the sampled learner or exact descent")
    s.add_argument("mdp", help="MDP file or environment spec")
    s.add_argument("config", help="training config JSON")
    s.add_argument("--method", choices=("alg1", "exact"), default="alg1")
    s.add_argument("--seeds", default=None, help="seed range a..b or list a,b,c; one subdirectory each")
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("make-env", parents=[common], help="export a benchmark environment as MDP JSON")
    s.add_argument("spec")
    s.set_defaults(func=cmd_make_env)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    args.argv = argv
    if getattr(args, "seed", None) is None and args.command == "bootstrap":
        args.seed = 0
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
