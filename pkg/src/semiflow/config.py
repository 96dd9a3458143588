"""Flat key=value experiment configs.

Format: one ``key = value`` entry per line, ``#`` starts a comment, blank
lines are ignored, and repeating a list key (``scheme``, ``t``, ``n``)
appends to the list.  Unknown keys are rejected by name with the offending
line number.  ``serialize_config(parse_config(text))`` is canonical: parsing
it again yields the identical config.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError

_FAMILIES = ("laplacian1d", "spd_random", "skew", "bounded_random", "scalar2x2")
_COUPLINGS = ("random_bounded", "fractional", "identity_like")
_SCHEMES = ("AO", "transposed", "symmetrized", "naive", "exact")
_EMITS = ("csv", "json")

_SCALAR_KEYS = ("family", "n1", "n2", "coupling", "coupling_scale",
                "coupling_beta", "seed", "output_path", "emit")
_LIST_KEYS = ("scheme", "t", "n")


@dataclass(frozen=True)
class ExperimentConfig:
    family: str
    n1: int
    n2: int
    coupling: str
    coupling_scale: float
    coupling_beta: float | None
    seed: int
    schemes: tuple[str, ...]
    t_values: tuple[float, ...]
    n_values: tuple[int, ...]
    output_path: str
    emit: str


def _parse_int(value: str, key: str, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"key {key!r} needs an integer, got {value!r}", line) from None


def _parse_float(value: str, key: str, line: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"key {key!r} needs a number, got {value!r}", line) from None


def parse_config(text: str) -> ExperimentConfig:
    scalars: dict[str, tuple[str, int]] = {}
    lists: dict[str, list[tuple[str, int]]] = {k: [] for k in _LIST_KEYS}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _LIST_KEYS:
            lists[key].append((value, lineno))
        elif key in _SCALAR_KEYS:
            if key in scalars:
                raise ConfigError(f"duplicate key {key!r}", lineno)
            scalars[key] = (value, lineno)
        else:
            raise ConfigError(f"unknown key {key!r}", lineno)

    def need(key: str) -> tuple[str, int]:
        if key not in scalars:
            raise ConfigError(f"missing required key {key!r}")
        return scalars[key]

    family, ln = need("family")
    if family not in _FAMILIES:
        raise ConfigError(f"unknown family {family!r}", ln)
    n1_raw, ln = need("n1")
    n1 = _parse_int(n1_raw, "n1", ln)
    n2_raw, ln = need("n2")
    n2 = _parse_int(n2_raw, "n2", ln)

    coupling, ln = scalars.get("coupling", ("random_bounded", 0))
    if coupling not in _COUPLINGS:
        raise ConfigError(f"unknown coupling {coupling!r}", ln)
    scale_raw, ln = scalars.get("coupling_scale", ("1.0", 0))
    coupling_scale = _parse_float(scale_raw, "coupling_scale", ln)
    beta = None
    if "coupling_beta" in scalars:
        braw, ln = scalars["coupling_beta"]
        beta = _parse_float(braw, "coupling_beta", ln)
    if coupling == "fractional":
        if beta is None:
            raise ConfigError("coupling 'fractional' requires key 'coupling_beta'")
        if not 0.0 < beta <= 1.0:
            raise ConfigError(f"coupling_beta must lie in (0, 1], got {beta}")
    seed_raw, ln = scalars.get("seed", ("0", 0))
    seed = _parse_int(seed_raw, "seed", ln)

    schemes = tuple(v for v, _ in lists["scheme"]) or ("AO",)
    for value, ln in lists["scheme"]:
        if value not in _SCHEMES:
            raise ConfigError(f"unknown scheme {value!r}", ln)
    t_values = tuple(_parse_float(v, "t", ln) for v, ln in lists["t"]) or (1.0,)
    if any(t <= 0 for t in t_values):
        raise ConfigError("t values must be positive")
    n_values = tuple(_parse_int(v, "n", ln) for v, ln in lists["n"])
    if not n_values:
        raise ConfigError("at least one 'n' entry is required")
    if any(n < 1 for n in n_values):
        raise ConfigError("n values must be >= 1")
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ConfigError("n values must be strictly ascending")

    output_path, _ = scalars.get("output_path", ("out", 0))
    emit, ln = scalars.get("emit", ("csv", 0))
    if emit not in _EMITS:
        raise ConfigError(f"emit must be one of {_EMITS}, got {emit!r}", ln)

    return ExperimentConfig(family, n1, n2, coupling, coupling_scale, beta,
                            seed, schemes, t_values, n_values, output_path, emit)


def parse_config_file(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; parsing it reproduces ``cfg`` exactly."""
    lines = [
        f"family = {cfg.family}",
        f"n1 = {cfg.n1}",
        f"n2 = {cfg.n2}",
        f"coupling = {cfg.coupling}",
        f"coupling_scale = {cfg.coupling_scale!r}",
    ]
    if cfg.coupling_beta is not None:
        lines.append(f"coupling_beta = {cfg.coupling_beta!r}")
    lines.append(f"seed = {cfg.seed}")
    lines += [f"scheme = {s}" for s in cfg.schemes]
    lines += [f"t = {t!r}" for t in cfg.t_values]
    lines += [f"n = {n}" for n in cfg.n_values]
    lines.append(f"output_path = {cfg.output_path}")
    lines.append(f"emit = {cfg.emit}")
    return "\n".join(lines) + "\n"
