"""JSON game configs.

Schema (keys not listed are ignored)::

    {
      "chain": {
        "predicted": [5, 11, 8],
        "error_support": [2, 0, -2],
        "transition": [["5/11", "5/11", "1/11"], ...],   # or a list of T-1 matrices
        "initial_dist": [1, 0, 0]                         # optional, default uniform
      },
      "users": [{"theta": 0.9, "d_max": 4, "c_max": 6, "b_max": 2}, ...],
      "pricing": {"alpha": 1.5, "beta": 1.5, "gamma1": 1, "gamma2": 1},
      "leader": {"unit_cost": 1, "penalty_weight": 0.1, "target": 70},   # optional
      "initial_storage": [0, 0, 0],                                       # optional
      "grid": {"alpha": [19, 20, 21], "beta": [19, 20, 21]}               # optional, for pricing
    }

Instead of ``users`` a compact form is accepted: ``"thetas": [...]`` plus
shared ``"d_max"``, ``"c_max"``, ``"b_max"`` under ``"user_defaults"``.
Numbers may be given as rational strings such as ``"5/11"``.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from ._validation import InvalidGameError, Violation, parse_number
from .model import ForecastChain, GameG1, LeaderParams, PricingParams, UserSpec, validate_game


def _user_from_dict(d: dict, where: str) -> UserSpec:
    try:
        kwargs = {k: int(d[k]) for k in ("d_max", "c_max", "b_max")}
    except KeyError as exc:
        raise InvalidGameError([Violation("MissingField", f"{where}.{exc.args[0]}", "required")]) from None
    if "utility" in d:
        return UserSpec(utility=[parse_number(v) for v in d["utility"]], **kwargs)
    if "theta" not in d:
        raise InvalidGameError([Violation("MissingField", f"{where}.theta", "theta or utility required")])
    return UserSpec(theta=parse_number(d["theta"]), **kwargs)


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise InvalidGameError([Violation("MissingField", f"{where}{key}", "required")])
    return doc[key]


def game_from_dict(doc: dict, validate: bool = True) -> GameG1:
    chain_doc = _require(doc, "chain", "")
    try:
        chain = ForecastChain(
            predicted=_require(chain_doc, "predicted", "chain."),
            error_support=_require(chain_doc, "error_support", "chain."),
            transition=_require(chain_doc, "transition", "chain."),
            initial_dist=chain_doc.get("initial_dist"),
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, InvalidGameError):
            raise
        raise InvalidGameError([Violation("BadChain", "chain", str(exc))]) from None

    if "users" in doc:
        users = [_user_from_dict(u, f"users[{i}]") for i, u in enumerate(doc["users"])]
    else:
        defaults = doc.get("user_defaults", {})
        thetas = _require(doc, "thetas", "")
        users = [_user_from_dict({**defaults, "theta": th}, f"thetas[{i}]") for i, th in enumerate(thetas)]

    p = _require(doc, "pricing", "")
    try:
        pricing = PricingParams(
            alpha=parse_number(p["alpha"]),
            beta=parse_number(p["beta"]),
            gamma1=parse_number(p.get("gamma1", 1)),
            gamma2=parse_number(p.get("gamma2", 1)),
        )
    except KeyError as exc:
        raise InvalidGameError([Violation("MissingField", f"pricing.{exc.args[0]}", "required")]) from None

    leader = None
    if "leader" in doc:
        ld = doc["leader"]
        leader = LeaderParams(
            unit_cost=parse_number(ld["unit_cost"]),
            penalty_weight=parse_number(ld["penalty_weight"]),
            target=parse_number(ld.get("target", 0)),
        )
    game = GameG1(chain=chain, users=users, pricing=pricing, initial_storage=doc.get("initial_storage"), leader=leader)
    return validate_game(game) if validate else game


def game_to_dict(game: GameG1) -> dict:
    chain = game.chain
    doc = {
        "chain": {
            "predicted": chain.predicted.tolist(),
            "error_support": chain.error_support.tolist(),
            "transition": chain.transition.tolist(),
            "initial_dist": chain.initial_dist.tolist(),
        },
        "users": [],
        "pricing": {
            "alpha": game.pricing.alpha,
            "beta": game.pricing.beta,
            "gamma1": game.pricing.gamma1,
            "gamma2": game.pricing.gamma2,
        },
        "initial_storage": list(game.initial_storage),
    }
    for u in game.users:
        entry = {"d_max": u.d_max, "c_max": u.c_max, "b_max": u.b_max}
        if u.is_linear:
            entry["theta"] = u.theta
        else:
            entry["utility"] = u.utility.tolist()
        doc["users"].append(entry)
    if game.leader is not None:
        doc["leader"] = {
            "unit_cost": game.leader.unit_cost,
            "penalty_weight": game.leader.penalty_weight,
            "target": game.leader.target,
        }
    return doc


def chain_to_dict(chain: ForecastChain) -> dict:
    return game_to_dict(
        GameG1(chain=chain, users=(), pricing=PricingParams(1.0, 1.0))
    )["chain"]


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_game(path, validate: bool = True) -> GameG1:
    return game_from_dict(load_config(path), validate=validate)


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture file, e.g. ``fixture_path("example2.json")``."""
    return Path(str(resources.files("gridstack") / "fixtures" / name))


def load_fixture(name: str) -> dict:
    return load_config(fixture_path(name))


def example_game(name: str) -> GameG1:
    """One of the bundled example games: ``example1`` ... ``example4``."""
    return game_from_dict(load_fixture(f"{name}.json"))


def dumps(doc) -> str:
    """Canonical JSON text used for every emitted document."""
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
