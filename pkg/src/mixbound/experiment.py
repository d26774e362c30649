"""Finite-N sweeps over REM instances: exact mixing brackets against path bounds.

Every record is a pure function of (config, N, beta, seed), records are
emitted in sorted order and serialized with sorted keys, so reruns of the
same config produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .chain import SpectralDecomposition, spectral_gap, t_eta
from .errors import ConfigError, InsufficientSeeds, MixboundError
from .paths import select_paths
from .poincare import WeightAssignment, log_mixing_time_bound, path_bound_L_eta
from .rem import BETA_C, DEFAULT_CAP, gibbs_measure, lambda_weights, metropolis_chain, sample_instance

SCHEMA_VERSION = 1

EXIT_OK, EXIT_HARD, EXIT_SOFT = 0, 1, 2


@dataclass
class ExperimentConfig:
    N_list: list
    beta_list: list
    seeds: list
    epsilon: float = 0.5
    c: float = 1.0
    c1: float = 1.0
    cap: int = DEFAULT_CAP
    path_cap: int = 8
    beta_units: str = "beta_c"  # "beta_c": beta_list holds multiples of beta_c
    mode: str = "paper"  # "paper" or "manual"
    zeta: float | None = None
    rho: float = 0.75
    p: float | None = None
    p_prime: float | None = None
    c_e: float = 1.0
    variant: str = "proposition"
    t_rtol: float = 1e-2
    output: str | None = None
    format: str = "json"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("N_list", "beta_list", "seeds"):
            v = getattr(self, name)
            if not isinstance(v, (list, tuple)) or len(v) == 0:
                raise ConfigError(f"{name} must be a nonempty list")
        if any(int(N) < 2 for N in self.N_list):
            raise ConfigError("every N must be at least 2")
        if any(b < 0 for b in self.beta_list):
            raise ConfigError("beta must be nonnegative")
        if not 0 < self.epsilon < 2:
            raise ConfigError("epsilon must lie in (0, 2)")
        if self.c <= 0 or self.c1 <= 0:
            raise ConfigError("c and c1 must be positive")
        if self.beta_units not in ("beta_c", "absolute"):
            raise ConfigError("beta_units must be 'beta_c' or 'absolute'")
        if self.mode not in ("paper", "manual"):
            raise ConfigError("mode must be 'paper' or 'manual'")
        if self.mode == "manual":
            if self.zeta is None or self.p is None:
                raise ConfigError("manual mode needs zeta and p")
            if not 0 < self.p < 1 or self.zeta <= 0:
                raise ConfigError("manual mode needs 0 < p < 1 and zeta > 0")
        if not 0 < self.rho < 1:
            raise ConfigError("rho must lie in (0, 1)")
        if self.format not in ("json", "csv"):
            raise ConfigError("format must be 'json' or 'csv'")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def beta_value(self, b: float) -> float:
        return float(b) * BETA_C if self.beta_units == "beta_c" else float(b)


@dataclass
class BoundParameters:
    zeta: float
    rho: float
    p: float
    p_prime: float
    d: float
    rule: str
    in_regime: bool  # zeta <= (beta_c - beta) / beta and p < 1/2


def paper_parameters(N: int, beta: float, c: float, c1: float, rho: float = 0.75) -> BoundParameters:
    """zeta^2 = 12 (beta_c/beta) sqrt(c1 (1+c) log N / N), p/(1-p) = (2/3) beta^2/(beta_c^2+beta^2) zeta^2."""
    if beta <= 0:
        raise ConfigError("the parameter rule needs beta > 0")
    zeta = math.sqrt(12 * BETA_C / beta * math.sqrt(c1 * (1 + c) * math.log(N) / N))
    ratio = 2 / 3 * beta**2 / (BETA_C**2 + beta**2) * zeta**2
    p = ratio / (1 + ratio)
    ok = zeta <= (BETA_C - beta) / beta and p < 0.5
    return BoundParameters(zeta, rho, p, p, beta * (1 + zeta), "paper", ok)


def manual_parameters(beta: float, zeta: float, rho: float, p: float, p_prime: float | None) -> BoundParameters:
    pp = p if p_prime is None else p_prime
    ok = beta > 0 and zeta <= (BETA_C - beta) / beta and p < 0.5
    return BoundParameters(zeta, rho, p, pp, beta * (1 + zeta), "manual", ok)


def log_prop_bounds(N: int, beta: float, zeta: float, p: float, c: float, c1: float) -> tuple[float, float]:
    """log of the closed-form upper bounds on 1/L_pi(p) and 1/L_eta(p) for the uniform start."""
    root = beta * BETA_C * math.sqrt(c1 * (1 + c) * N * math.log(N))
    core = beta**2 * (1 + zeta) * N
    log4 = math.log(4)
    pi_side = (1 - 3 * p + p**2) / (p * (1 - p)) * log4 + math.log(22) + 4 * math.log(N) + 2 * root + core
    eta_side = (2 - 3 * p + 2 * p**2) / (p * (1 - p)) * log4 + math.log(4) + 2 * math.log(N) + 4 * root + core
    return pi_side, eta_side


def _finite(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass
class SweepRecord:
    N: int
    beta: float
    beta_over_beta_c: float
    seed: int
    status: str = "ok"
    lambda_N: float | None = None
    T_eta_upper: float | None = None
    T_eta_lower: float | None = None
    parameters: dict = field(default_factory=dict)
    bound_values: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)

    @property
    def key(self) -> tuple:
        return (self.N, self.beta, self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    def flat(self) -> dict:
        row = {k: v for k, v in self.to_dict().items() if not isinstance(v, dict)}
        for group in ("parameters", "bound_values", "verdicts"):
            for k, v in sorted(getattr(self, group).items()):
                row[f"{group}.{k}"] = v
        return row


HARD_VERDICTS = ("bracket_ordered", "end_to_end_geometric")
SOFT_VERDICTS = ("upper_below_inverse_gap", "rate_within_trend")


def finite_size_slack(N: int, beta: float, c: float, c1: float) -> float:
    return 2 * beta * BETA_C * math.sqrt(c1 * (1 + c) * math.log(N) / N) + 4 * math.log(N) / N


def run_record(config: ExperimentConfig, N: int, beta: float, seed: int) -> SweepRecord:
    rec = SweepRecord(int(N), float(beta), float(beta / BETA_C), int(seed))
    try:
        _fill_record(rec, config)
    except MixboundError as exc:
        rec.status = f"error: {type(exc).__name__}: {exc}"
    return rec


def _fill_record(rec: SweepRecord, cfg: ExperimentConfig) -> None:
    N, beta = rec.N, rec.beta
    inst = sample_instance(N, beta, rec.seed)
    chain = metropolis_chain(inst, cfg.cap)
    n = chain.n
    eta = np.full(n, 1.0 / n)
    spectral = SpectralDecomposition.of(chain)
    gap = spectral_gap(chain)
    rec.lambda_N = gap
    bracket = t_eta(chain, eta, cfg.epsilon, rtol=cfg.t_rtol, spectral=spectral)
    rec.T_eta_upper, rec.T_eta_lower = bracket.upper, bracket.lower
    log_upper = math.log(bracket.upper) if bracket.upper > 0 else -math.inf
    slack = finite_size_slack(N, beta, cfg.c, cfg.c1)
    rec.bound_values["log_inverse_gap"] = -math.log(gap)
    rec.bound_values["rate_upper"] = _finite(log_upper / N)
    rec.bound_values["rate_inverse_gap"] = -math.log(gap) / N
    rec.bound_values["trend_line"] = beta**2 + slack
    rec.verdicts["bracket_ordered"] = bool(bracket.lower <= bracket.upper)
    rec.verdicts["upper_below_inverse_gap"] = bool(bracket.upper < 1.0 / gap)
    rec.verdicts["rate_within_trend"] = bool(log_upper / N <= beta**2 + slack)

    if beta <= 0:
        rec.parameters = {"rule": "none", "epsilon": cfg.epsilon, "c": cfg.c, "c1": cfg.c1}
        return
    if cfg.mode == "paper":
        par = paper_parameters(N, beta, cfg.c, cfg.c1, cfg.rho)
    else:
        par = manual_parameters(beta, cfg.zeta, cfg.rho, cfg.p, cfg.p_prime)
    rec.parameters = {"zeta": par.zeta, "rho": par.rho, "p": par.p, "p_prime": par.p_prime, "d": par.d,
                      "rule": par.rule, "in_regime": par.in_regime, "epsilon": cfg.epsilon,
                      "c": cfg.c, "c1": cfg.c1, "c_e": cfg.c_e, "variant": cfg.variant}
    lp_pi, lp_eta = log_prop_bounds(N, beta, par.zeta, par.p, cfg.c, cfg.c1)
    rec.bound_values["log_inv_L_pi_closed_form"] = lp_pi
    rec.bound_values["log_inv_L_eta_closed_form"] = lp_eta
    rec.bound_values["log_T_bound_closed_form"] = log_mixing_time_bound(lp_eta, lp_pi, par.p, par.p_prime, cfg.epsilon)

    if N > cfg.path_cap:
        rec.verdicts["end_to_end_geometric"] = None
        rec.bound_values["paths"] = "skipped"
        return
    paths = select_paths(inst.energies, N, cfg.c_e, cfg.variant)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lw = lambda_weights(inst, par.d, par.rho)
    lam = lw.weights.lam
    pi = gibbs_measure(inst)
    inv_pi = path_bound_L_eta(chain, paths, WeightAssignment(lam, lam), par.p, pi).value
    inv_eta = path_bound_L_eta(chain, paths, WeightAssignment(lam, np.ones(n)), par.p_prime, eta).value
    log_T = log_mixing_time_bound(math.log(inv_eta), math.log(inv_pi), par.p, par.p_prime, cfg.epsilon)
    rec.bound_values.update({
        "paths": "selected", "path_fallbacks": int(paths.fallback.sum()),
        "log_lambda": lw.log_lambda, "empty_low_set": lw.empty_low_set,
        "log_inv_L_pi_paths": math.log(inv_pi), "log_inv_L_eta_paths": math.log(inv_eta),
        "log_T_bound_paths": log_T,
    })
    rec.verdicts["end_to_end_geometric"] = bool(log_upper <= log_T + 1e-9 * max(1.0, abs(log_T)))


def run_sweep(config: ExperimentConfig) -> list:
    records = []
    for N in sorted(int(v) for v in config.N_list):
        for b in sorted(config.beta_list):
            for seed in sorted(int(s) for s in config.seeds):
                records.append(run_record(config, N, config.beta_value(b), seed))
    return records


def exit_code(records: Sequence[SweepRecord]) -> int:
    hard = any(r.status != "ok" or any(r.verdicts.get(k) is False for k in HARD_VERDICTS) for r in records)
    if hard:
        return EXIT_HARD
    soft = any(r.verdicts.get(k) is False for r in records for k in SOFT_VERDICTS)
    return EXIT_SOFT if soft else EXIT_OK


def clean_json(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.generic):
        return clean_json(obj.item())
    return obj


def records_to_json(records: Sequence[SweepRecord], config: ExperimentConfig | None = None,
                    extra: dict | None = None) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "records": [r.to_dict() for r in records]}
    if config is not None:
        doc["config"] = asdict(config)
    if extra:
        doc.update(extra)
    return json.dumps(clean_json(doc), sort_keys=True, indent=1) + "\n"


def records_to_csv(records: Sequence[SweepRecord]) -> str:
    rows = [clean_json(r.flat()) for r in records]
    cols = sorted({k for row in rows for k in row})
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["schema_version"] + cols, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({"schema_version": SCHEMA_VERSION, **{k: ("" if v is None else v) for k, v in row.items()}})
    return buf.getvalue()


# ------------------------------------------------------------ estimator --


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    phat = k / n
    den = 1 + z**2 / n
    mid = (phat + z**2 / (2 * n)) / den
    half = z * math.sqrt(phat * (1 - phat) / n + z**2 / (4 * n**2)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


@dataclass
class TnEstimate:
    N: int
    beta: float
    seeds: int
    level: float  # 1 - e^{-cN}
    T_N: float  # empirical level-quantile of the per-seed upper brackets
    coverage: float  # fraction of seeds with T_eta_upper <= T_N
    coverage_ci: tuple
    inverse_gap_quantile: float
    rate: float  # (1/N) log T_N
    beta_sq: float
    beta_beta_c: float
    slack: float

    def to_dict(self) -> dict:
        return asdict(self)


def t_n_estimator(records: Iterable[SweepRecord], epsilon: float, c: float, c1: float = 1.0,
                  min_seeds: int = 30) -> list:
    """Seed quantile of certified upper brackets, per (N, beta)."""
    groups: dict = {}
    for r in records:
        if r.status == "ok":
            groups.setdefault((r.N, r.beta), []).append(r)
    out = []
    for (N, beta), rs in sorted(groups.items()):
        if len(rs) < min_seeds:
            raise InsufficientSeeds(f"(N={N}, beta={beta:.4g}) has {len(rs)} seeds < {min_seeds}")
        level = 1 - math.exp(-c * N)
        if epsilon >= 2:
            T = 0.0
            ups = np.zeros(len(rs))
        else:
            ups = np.array([r.T_eta_upper for r in rs])
            T = float(np.quantile(ups, level, method="higher"))
        k = int(np.sum(ups <= T))
        inv_gap = float(np.quantile([1 / r.lambda_N for r in rs], level, method="higher"))
        rate = math.log(T) / N if T > 0 else -math.inf
        out.append(TnEstimate(N, beta, len(rs), level, T, k / len(rs), wilson_interval(k, len(rs)),
                              inv_gap, rate, beta**2, beta * BETA_C, finite_size_slack(N, beta, c, c1)))
    return out
