"""Run configuration: plain-text ``key=value`` files with ``--key=value`` overrides."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import PreconditionError


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "auto", "none") else int(text)


def _opt_str(text: str) -> str | None:
    return None if text.strip().lower() in ("", "none") else text.strip()


@dataclass(frozen=True)
class RunConfig:
    dim: int = 2
    alpha: float = 0.5
    n_list: tuple[int, ...] = (32, 64, 128, 256)
    chains: int = 16
    sweeps: int = 2000
    thin: int = 200
    burn_in: float = 0.2
    seed: int = 20240601
    box_l: float | None = None
    grid_m: int | None = None
    cbar: float = 1.0
    potential: str = "quadratic"
    potential_table: str | None = None
    tol: float = 1e-8
    max_iter: int = 20000
    k_list: tuple[float, ...] = tuple(0.25 * i for i in range(1, 17))
    density_bound: float | None = None
    log_k_samples: int = 10000
    workers: int = 1
    runs_dir: str = "runs"

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise PreconditionError(f"grid pipelines support dim 2 or 3, got {self.dim}")
        if not 0 < self.alpha < 1:
            raise PreconditionError(f"alpha must lie in (0, 1) for 1/N << beta << 1, got {self.alpha}")
        if not self.n_list or min(self.n_list) < 1:
            raise PreconditionError("n_list must list positive particle numbers")
        if self.chains < 1 or self.sweeps < 1 or self.thin < 1:
            raise PreconditionError("chains, sweeps and thin must be positive")
        if not 0 <= self.burn_in < 1:
            raise PreconditionError("burn_in is a fraction in [0, 1)")

    def grid_nodes(self, n: int) -> int:
        """Nodes per axis: max(64, 4 N^(1/d)) unless fixed by grid_m."""
        if self.grid_m:
            return self.grid_m
        return max(64, int(round(4 * n ** (1.0 / self.dim))))

    def with_overrides(self, pairs: dict[str, str]) -> RunConfig:
        return replace(self, **{k: parse_value(k, v) for k, v in pairs.items()})

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif v is None:
                v = "auto"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha1(self.to_text().encode()).hexdigest()


_PARSERS = {
    "dim": int, "alpha": float, "n_list": _ints, "chains": int, "sweeps": int, "thin": int,
    "burn_in": float, "seed": int, "box_l": _opt_float, "grid_m": _opt_int, "cbar": float,
    "potential": str.strip, "potential_table": _opt_str, "tol": float, "max_iter": int,
    "k_list": _floats, "density_bound": _opt_float, "log_k_samples": int, "workers": int,
    "runs_dir": str.strip,
}


def parse_value(key: str, text: str):
    if key not in _PARSERS:
        raise PreconditionError(f"unknown config key {key!r}")
    try:
        return _PARSERS[key](text)
    except ValueError as exc:
        raise PreconditionError(f"bad value for {key}: {text!r}") from exc


def parse_pairs(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PreconditionError(f"line {lineno}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = cfg.with_overrides(parse_pairs(Path(path).read_text()))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


def parse_overrides(args: list[str]) -> dict[str, str]:
    """Turn ``--key=value`` tokens into a dict; dashes in keys map to underscores."""
    out = {}
    for tok in args:
        if not tok.startswith("--") or "=" not in tok:
            raise PreconditionError(f"expected --key=value, got {tok!r}")
        k, v = tok[2:].split("=", 1)
        out[k.replace("-", "_")] = v
    return out
