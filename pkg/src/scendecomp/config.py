"""JSON run configurations and the bundled example fixtures.

A configuration has three blocks: ``problem`` (with a ``type`` of
``online_qp``, ``utility`` or ``mv``), ``pha`` (engine settings) and
``output`` (print precision).  Stage distributions are written as
``{"outcomes": [[...], ...], "probabilities": [...]}``; omitting the
probabilities means equiprobable outcomes.
"""
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .pha import PhaConfig
from .portfolio import MarketModel, MvsSpec, SmoothingSpec, UtilitySpec
from .tree import StageDistribution

FIXTURES = ("binomial_qp", "utility_smoothing", "mv_smoothing")


class ConfigError(ValueError):
    """Missing, malformed or inconsistent configuration."""


def fixture_path(name):
    return resources.files("scendecomp") / "fixtures" / f"{name}.json"


def load_config(source):
    """Read a config from a file path or a bundled fixture name."""
    if isinstance(source, dict):
        return source
    src = str(source)
    if src in FIXTURES:
        text = fixture_path(src).read_text()
    else:
        path = Path(src)
        if not path.is_file():
            raise ConfigError(f"input file not found: {src}")
        text = path.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {src}: {exc}") from exc
    if not isinstance(cfg, dict) or "problem" not in cfg:
        raise ConfigError("config needs a 'problem' block")
    return cfg


def _get(block, key, where):
    try:
        return block[key]
    except (KeyError, TypeError):
        raise ConfigError(f"missing '{key}' in {where}") from None


def parse_distribution(spec, where="distribution"):
    outcomes = _get(spec, "outcomes", where)
    try:
        if spec.get("probabilities") is None:
            return StageDistribution.uniform(outcomes)
        return StageDistribution(outcomes, spec["probabilities"])
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_pha(cfg, overrides=None):
    block = dict(cfg.get("pha", {}))
    for key, value in (overrides or {}).items():
        if value is not None:
            block[key] = value
    allowed = {"alpha", "epsilon", "max_iterations", "init"}
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown pha settings: {sorted(unknown)}")
    try:
        return PhaConfig(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"pha block: {exc}") from exc


def _vector(value, size):
    # scalars are broadcast over every stage
    arr = np.array(value, dtype=float)
    return np.full(size, float(arr)) if arr.ndim == 0 else arr


def parse_online_qp(block):
    from .online_qp import OnlineQpProblem

    noise = [parse_distribution(s, f"noise[{t}]") for t, s in enumerate(_get(block, "noise", "problem"))]
    try:
        A = [np.atleast_2d(np.array(a, dtype=float)) for a in _get(block, "A", "problem")]
        B = [np.atleast_2d(np.array(b, dtype=float)) for b in _get(block, "B", "problem")]
        if not A or not B:
            raise ValueError("A and B must be nonempty")
        T, m, n = len(A), A[0].shape[0], B[0].shape[1]
        c = _vector(block.get("c", 0.0), m * (T + 1))
        d = _vector(block.get("d", 0.0), n * T)
        return OnlineQpProblem(
            A=A,
            B=B,
            Q=np.array(_get(block, "Q", "problem"), dtype=float),
            R=np.array(_get(block, "R", "problem"), dtype=float),
            c=c,
            d=d,
            x0=np.array(_get(block, "x0", "problem"), dtype=float),
            noise=noise,
        )
    except ValueError as exc:
        raise ConfigError(f"online_qp problem: {exc}") from exc


def parse_market(block):
    mk = _get(block, "market", "problem")
    returns = [parse_distribution(s, f"returns[{t}]") for t, s in enumerate(_get(mk, "returns", "market"))]
    r = _get(mk, "r", "market")
    if np.isscalar(r):
        r = [r] * len(returns)
    try:
        return MarketModel(r, returns, _get(mk, "x0", "market"), bool(mk.get("excess", True)))
    except ValueError as exc:
        raise ConfigError(f"market: {exc}") from exc


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def parse_utility(block, gamma=None):
    """Market, utility and one smoothing spec per requested gamma."""
    market = parse_market(block)
    u = block.get("utility", {})
    sm = block.get("smoothing", {})
    gammas = _as_list(gamma) if gamma is not None else _as_list(sm.get("gamma", 0.0))
    try:
        utility = UtilitySpec(float(u.get("a", 1.0)), float(u.get("b", 0.0)))
        specs = [
            SmoothingSpec(float(g), sm.get("kind", "wealth"), tuple(sm.get("stages", ())), tuple(sm.get("assets", ())))
            for g in gammas
        ]
        for s in specs:
            s.validate(market.T, market.n)
    except ValueError as exc:
        raise ConfigError(f"utility problem: {exc}") from exc
    return market, utility, specs


def parse_mv(block, w=None, gamma=None):
    market = parse_market(block)
    ws = _as_list(w) if w is not None else _as_list(_get(block, "w", "problem"))
    g = gamma if gamma is not None else block.get("gamma", 0.0)
    try:
        specs = [MvsSpec(float(x), float(g)) for x in ws]
    except ValueError as exc:
        raise ConfigError(f"mv problem: {exc}") from exc
    return market, specs
