"""Command line front end: ``gridstack <command> [options]``.

Exit status: 0 success, 1 invalid config, 2 usage error, 3 non-convergence
or state-space cap exceeded (partial outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import warnings
from pathlib import Path

import numpy as np
from sklearn.exceptions import ConvergenceWarning

from . import __version__
from ._validation import InvalidGameError, StateSpaceTooLarge, Violation
from .analysis import check_storage_dominance, nashconv, verify_potential_property
from .config import chain_to_dict, dumps, fixture_path, game_from_dict, load_config, load_fixture
from .ingest import EmptySupport, IncompletePanel, estimate_forecast_and_chain, read_panel_csv
from .learning import fp_mdp_solve
from .mdp import DEFAULT_CAP, joint_state_count
from .model import build_reduced_game
from .mpg import fip_solve, lift_to_pme
from .payoff import potential_columns
from .policies import action_table, pure_actions
from .pricing import PricingGrid, discrepancy_report, grid_search_pricing, worker_count

EXIT_OK, EXIT_CONFIG, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3
EXAMPLES = ("example1", "example2", "example3", "example4")


class RunFailed(Exception):
    """Solver-level failure after partial outputs were written."""


class Run:
    """Collects output files and writes them with a manifest."""

    def __init__(self, command: str, out: Path, config_doc, seed, params: dict):
        self.command = command
        self.out = out
        self.config_doc = config_doc
        self.seed = seed
        self.params = params
        self.files: dict[str, str] = {}
        self.status = "ok"

    def json(self, name: str, doc) -> None:
        self.files[name] = dumps(doc)

    def csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else _fmt(v) for v in row])
        self.files[name] = buf.getvalue()

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "config_sha256": hashlib.sha256(dumps(self.config_doc).encode()).hexdigest(),
            "seed": self.seed,
            "version": __version__,
            "parameters": self.params,
            "status": self.status,
            "outputs": sorted(self.files),
        }

    def flush(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (self.out / name).write_text(text, encoding="utf-8")
        (self.out / "manifest.json").write_text(dumps(self.manifest()), encoding="utf-8")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _game_doc(args, default_fixture=None):
    if args.config is None:
        if default_fixture is None:
            raise InvalidGameError([Violation("MissingField", "--config", "a config file is required")])
        return load_fixture(default_fixture)
    path = Path(args.config)
    if not path.exists() and fixture_path(path.name).exists():
        path = fixture_path(path.name)
    try:
        return load_config(path)
    except FileNotFoundError:
        raise InvalidGameError([Violation("MissingFile", "--config", f"{args.config} not found")]) from None
    except json.JSONDecodeError as exc:
        raise InvalidGameError([Violation("BadJSON", "--config", str(exc))]) from None


# ---- commands ---------------------------------------------------------------


def _solve(run: Run, doc, kmax: int):
    """FIP plus lift; returns ``(summary, result, game)``."""
    g1 = game_from_dict(doc)
    g2 = build_reduced_game(g1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        res = fip_solve(g2, k_max=kmax)
    eq = res.to_dict()
    pme = pure_actions(lift_to_pme(res.policies, g1))
    eq["pme"] = [
        {"demand": action_table(u).demand[a].tolist(), "consumption": action_table(u).consumption[a].tolist()}
        for u, a in zip(g1.users, pme)
    ]
    run.json("equilibrium.json", eq)
    run.csv("trace.csv", ["iteration", "user", "delta", "potential"], res.trace)
    if not res.converged:
        raise RunFailed(f"no convergence within {kmax} iterations")
    return {"converged": True, "iterations": res.n_iter, "potential": res.trace[-1][3]}, res, g1


def cmd_solve(args, run: Run, doc):
    summary, _, _ = _solve(run, doc, args.kmax)
    return summary


def cmd_learn(args, run: Run, doc):
    g1 = game_from_dict(doc)
    res = fp_mdp_solve(g1, args.iters, seed=args.seed, eval_every=args.eval_every, cap=args.cap)
    n = g1.n_users
    rows = [(k, v, *chg) for k, v, chg in res.trace]
    run.csv("trace.csv", ["iteration", "nashconv", *[f"max_change_user{i}" for i in range(n)]], rows)
    run.json(
        "learned.json",
        {
            "iterations": args.iters,
            "final_nashconv": res.trace[-1][1],
            "initial_nashconv": res.trace[0][1],
            "policies": [p.tolist() for p in res.profile.policies],
        },
    )
    return {"final_nashconv": res.trace[-1][1], "initial_nashconv": res.trace[0][1], "evaluations": len(res.trace)}


def cmd_price(args, run: Run, doc):
    g1 = game_from_dict(doc)
    gdoc = doc.get("grid")
    if not gdoc or "alpha" not in gdoc or "beta" not in gdoc:
        raise InvalidGameError([Violation("MissingField", "grid.alpha/grid.beta", "pricing needs a grid")])
    res = grid_search_pricing(g1, PricingGrid(gdoc["alpha"], gdoc["beta"]), k_max=args.kmax)
    run.json("pricing.json", res.to_dict())
    run.csv("pricing.csv", ["alpha", "beta", "U", "converged"], res.csv_rows())
    summary = {"best_alpha": res.best_alpha, "best_beta": res.best_beta, "best_payoff": res.best_payoff}
    ref = gdoc.get("reference")
    if ref:
        report = discrepancy_report(res, ref.get("best"), ref.get("row_argmax_beta"))
        run.json("discrepancy.json", report)
        summary["reference_matches"] = report["matches"]
    if res.flagged():
        raise RunFailed(f"cells without convergence: {res.flagged()}")
    return summary


def cmd_estimate(args, run: Run, doc):
    panel = doc.get("panel")
    if panel is None:
        raise InvalidGameError([Violation("MissingField", "panel", "path of the panel CSV")])
    path = Path(panel)
    if not path.is_absolute() and args.config is not None:
        path = Path(args.config).parent / path
    if not path.exists() and fixture_path(path.name).exists():
        path = fixture_path(path.name)
    try:
        records = read_panel_csv(path)
        chain, report = estimate_forecast_and_chain(
            records,
            scale=float(doc.get("scale", 0.1)),
            support_levels=doc.get("support_levels", (20, 0, -20)),
            return_report=True,
        )
    except (IncompletePanel, EmptySupport, FileNotFoundError, ValueError) as exc:
        raise InvalidGameError([Violation(type(exc).__name__, "panel", str(exc))]) from None
    run.json(
        "chain.json",
        {
            "chain": chain_to_dict(chain),
            "transition_exact": [[str(f) for f in row] for row in report.exact_transition()],
            "unvisited_rows": report.unvisited_rows,
        },
    )
    levels = chain.error_support.tolist()
    run.csv("pair_counts.csv", ["from", "to", "count"], [(levels[a], levels[b], int(report.pair_counts[a, b])) for a in range(len(levels)) for b in range(len(levels))])
    return {"forecast": chain.predicted.tolist(), "transition": chain.transition[0].tolist() if chain.horizon > 1 else []}


def cmd_verify(args, run: Run, doc):
    g1 = game_from_dict(doc)
    out = {}
    linear = all(u.is_linear for u in g1.users)
    if linear:
        g2 = build_reduced_game(g1)
        out["potential_max_discrepancy"] = verify_potential_property(g2, 1000, args.seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            res = fip_solve(g2, k_max=args.kmax)
        out["fip_converged"] = res.converged
        out["joint_states"] = joint_state_count(g1)
        run.json("verify.json", out)
        out["lifted_nashconv"] = nashconv(lift_to_pme(res.policies, g1), g1, cap=args.cap)
    if g1.horizon == 2:
        out["dominance"] = check_storage_dominance(g1, cap=args.cap).to_dict()
    run.json("verify.json", out)
    if linear and not out["fip_converged"]:
        raise RunFailed("FIP did not converge")
    return {k: v for k, v in out.items() if k != "dominance"} | (
        {"strict_dominance": out["dominance"]["counterexample"] is None} if "dominance" in out else {}
    )


def _reference_comparison(res, g2) -> dict:
    ref = load_fixture("reference_equilibrium.json")
    D = res.demand
    phi = potential_columns(D, g2)
    out = {}
    for key, cell in ref["cells"].items():
        t, j = cell["stage"], cell["error_index"]
        reference = np.array(ref[key])
        ours = D[:, t, j]
        alt = D.copy()
        alt[:, t, j] = reference
        out[key] = {
            "matches": bool(np.array_equal(reference, ours)),
            "mismatched_users": np.flatnonzero(reference != ours).tolist(),
            "ours_total": int(ours.sum()),
            "reference_total": int(reference.sum()),
            "stage_potential_ours": float(phi[t, j]),
            "stage_potential_reference": float(potential_columns(alt, g2)[t, j]),
        }
    return out


def cmd_repro(args, run: Run, doc):
    name = args.example
    if name == "example1":
        summary, res, g1 = _solve(run, doc, args.kmax)
        comp = _reference_comparison(res, build_reduced_game(g1))
        run.json("reference_comparison.json", comp)
        summary["reference_rows_match"] = {k: v["matches"] for k, v in comp.items()}
        return summary
    if name == "example2":
        return cmd_learn(args, run, doc)
    if name == "example3":
        return cmd_price(args, run, doc)
    g1 = game_from_dict(doc)
    rep = check_storage_dominance(g1, cap=args.cap)
    run.json("dominance.json", rep.to_dict())
    return {"condition_c1_holds": rep.condition_c1_holds, "strict_dominance": rep.strictly_dominates, "min_gap": rep.min_gap}


COMMANDS = {
    "solve": cmd_solve,
    "learn": cmd_learn,
    "price": cmd_price,
    "estimate": cmd_estimate,
    "verify": cmd_verify,
    "repro": cmd_repro,
}


def _positive(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be >= 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="game config (JSON) or, for estimate, an ingest config")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=_seed, default=0, help="random seed (default: 0)")
    common.add_argument("--kmax", type=_positive, default=10_000, help="FIP iteration budget")
    common.add_argument("--iters", type=_positive, default=20_000, help="fictitious-play iterations")
    common.add_argument("--eval-every", type=_positive, default=50, help="NashConv evaluation period")
    common.add_argument("--cap", type=_positive, default=DEFAULT_CAP, help="joint state-space cap")

    parser = argparse.ArgumentParser(prog="gridstack", description="Storage-user equilibria and leader pricing.")
    parser.add_argument("--version", action="version", version=f"gridstack {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    helps = {
        "solve": "pure equilibrium of the reduced game and its lift",
        "learn": "fictitious play with model-based best responses",
        "price": "leader grid search over (alpha, beta)",
        "estimate": "forecast and error chain from a generation panel",
        "verify": "potential identity, NashConv and storage dominance",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    rp = sub.add_parser("repro", parents=[common], help="rerun a bundled example")
    rp.add_argument("example", choices=EXAMPLES)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        worker_count(1)
    except ValueError as exc:
        print(f"gridstack: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "repro":
            doc = _game_doc(args, f"{args.example}.json")
        elif args.command == "estimate" and args.config and args.config.endswith(".csv"):
            doc = {"panel": str(Path(args.config).resolve())}
            args.config = None
        else:
            doc = _game_doc(args)
    except InvalidGameError as exc:
        print(f"gridstack: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    params = {k: getattr(args, k) for k in ("kmax", "iters", "eval_every", "cap")}
    if args.command == "repro":
        params["example"] = args.example
    run = Run(args.command, Path(args.out), doc, args.seed, params)
    code = EXIT_OK
    try:
        summary = COMMANDS[args.command](args, run, doc)
    except InvalidGameError as exc:
        print(f"gridstack: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunFailed, StateSpaceTooLarge) as exc:
        run.status = "failed"
        summary = {"error": str(exc)}
        print(f"gridstack: {exc}", file=sys.stderr)
        code = EXIT_SOLVER
    except (KeyError, TypeError) as exc:
        print(f"gridstack: invalid config: missing or malformed field {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run.flush()
    sys.stdout.write(dumps({"command": args.command, "status": run.status, "out": str(run.out), **summary}))
    return code


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_exit()
