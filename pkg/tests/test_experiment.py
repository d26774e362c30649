import json
import math

import numpy as np
import pytest
from scipy.stats import binomtest

from mixbound.errors import ConfigError, InsufficientSeeds
from mixbound.experiment import (
    EXIT_HARD,
    EXIT_OK,
    EXIT_SOFT,
    ExperimentConfig,
    SweepRecord,
    exit_code,
    log_prop_bounds,
    paper_parameters,
    records_to_csv,
    records_to_json,
    run_record,
    run_sweep,
    t_n_estimator,
    wilson_interval,
)
from mixbound.rem import BETA_C


def small_config(**kw):
    base = dict(N_list=[6], beta_list=[0.5], seeds=[0, 1])
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.mark.parametrize("bad", [
    dict(beta_list=[]),
    dict(N_list=[]),
    dict(seeds=[]),
    dict(N_list=[1]),
    dict(beta_list=[-0.1]),
    dict(epsilon=0.0),
    dict(epsilon=2.0),
    dict(c=0.0),
    dict(rho=1.0),
    dict(mode="manual"),
    dict(mode="manual", zeta=0.1, p=1.0),
    dict(format="xml"),
    dict(schema_version=99),
    dict(beta_units="kelvin"),
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        small_config(**bad)


def test_config_unknown_key():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"N_list": [4], "beta_list": [0.5], "seeds": [0], "betas": [1]})


def test_config_from_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"N_list": [4], "beta_list": [0.5], "seeds": [0, 1], "epsilon": 0.25}))
    cfg = ExperimentConfig.from_json(str(path))
    assert cfg.epsilon == 0.25 and cfg.beta_value(0.5) == pytest.approx(0.5 * BETA_C)
    assert ExperimentConfig(N_list=[4], beta_list=[0.3], seeds=[0], beta_units="absolute").beta_value(0.3) == 0.3


def test_paper_parameters_closed_form():
    N, beta = 10, 0.5 * BETA_C
    par = paper_parameters(N, beta, 1.0, 1.0)
    zeta_sq = 12 * (BETA_C / beta) * math.sqrt(2 * math.log(N) / N)
    assert par.zeta**2 == pytest.approx(zeta_sq)
    r = par.p / (1 - par.p)
    assert r == pytest.approx(2 / 3 * beta**2 / (BETA_C**2 + beta**2) * zeta_sq)
    assert par.p == par.p_prime and par.d == pytest.approx(beta * (1 + par.zeta))
    # at any reachable N the low set is empty under this rule
    assert not par.in_regime
    with pytest.raises(ConfigError):
        paper_parameters(N, 0.0, 1.0, 1.0)


def test_log_prop_bounds_are_logs_of_products():
    N, beta, zeta, p = 12, 0.7, 0.3, 0.2
    lp, le = log_prop_bounds(N, beta, zeta, p, 1.0, 1.0)
    root = beta * BETA_C * math.sqrt(2 * N * math.log(N))
    direct_pi = 4 ** ((1 - 3 * p + p * p) / (p * (1 - p))) * 22 * N**4 * math.exp(2 * root + beta**2 * (1 + zeta) * N)
    direct_eta = 4 ** ((2 - 3 * p + 2 * p * p) / (p * (1 - p))) * 4 * N**2 * math.exp(4 * root + beta**2 * (1 + zeta) * N)
    assert lp == pytest.approx(math.log(direct_pi), rel=1e-12)
    assert le == pytest.approx(math.log(direct_eta), rel=1e-12)


def test_single_record_n8():
    cfg = ExperimentConfig(N_list=[8], beta_list=[0.5], seeds=[3])
    rec = run_record(cfg, 8, 0.5 * BETA_C, 3)
    assert rec.status == "ok"
    assert 0 < rec.T_eta_lower <= rec.T_eta_upper
    assert rec.verdicts["bracket_ordered"] and rec.verdicts["end_to_end_geometric"]
    assert rec.bound_values["log_T_bound_paths"] >= math.log(rec.T_eta_upper)
    assert rec.parameters["rule"] == "paper"


def test_beta_zero_record_skips_parameters():
    rec = run_record(small_config(beta_list=[0.0]), 6, 0.0, 0)
    assert rec.status == "ok" and rec.parameters["rule"] == "none"
    assert rec.lambda_N == pytest.approx(2 / 6)


def test_path_cap_skips_paths():
    rec = run_record(small_config(path_cap=4), 6, 0.5 * BETA_C, 0)
    assert rec.bound_values["paths"] == "skipped"
    assert rec.verdicts["end_to_end_geometric"] is None


def test_cap_error_recorded():
    rec = run_record(small_config(cap=4), 6, 0.5 * BETA_C, 0)
    assert rec.status.startswith("error: CapExceeded")
    assert exit_code([rec]) == EXIT_HARD


def test_sweep_order_and_determinism():
    cfg = small_config(N_list=[6, 4], beta_list=[1.0, 0.5], seeds=[1, 0])
    a, b = run_sweep(cfg), run_sweep(cfg)
    assert [r.key for r in a] == sorted(r.key for r in a)
    assert records_to_json(a, cfg) == records_to_json(b, cfg)
    assert records_to_csv(a) == records_to_csv(b)
    doc = json.loads(records_to_json(a, cfg))
    assert doc["schema_version"] == 1 and len(doc["records"]) == 8
    header = records_to_csv(a).splitlines()[0].split(",")
    assert header[0] == "schema_version" and "verdicts.bracket_ordered" in header


def test_exit_codes():
    ok = SweepRecord(4, 1.0, 0.5, 0, verdicts={"bracket_ordered": True, "upper_below_inverse_gap": True})
    soft = SweepRecord(4, 1.0, 0.5, 1, verdicts={"bracket_ordered": True, "rate_within_trend": False})
    hard = SweepRecord(4, 1.0, 0.5, 2, verdicts={"end_to_end_geometric": False})
    assert exit_code([ok]) == EXIT_OK
    assert exit_code([ok, soft]) == EXIT_SOFT
    assert exit_code([ok, soft, hard]) == EXIT_HARD


def test_wilson_interval():
    lo, hi = wilson_interval(0, 0)
    assert (lo, hi) == (0.0, 1.0)
    lo, hi = wilson_interval(45, 50)
    assert lo < 0.9 < hi
    # close to the Clopper-Pearson interval at moderate n
    cp = binomtest(45, 50).proportion_ci(method="exact")
    assert abs(lo - cp.low) < 0.03 and abs(hi - cp.high) < 0.03
    assert wilson_interval(50, 50)[1] == 1.0


def fake_records(N, beta, uppers, gap=0.1):
    return [SweepRecord(N, beta, beta / BETA_C, s, T_eta_upper=u, T_eta_lower=u / 2, lambda_N=gap)
            for s, u in enumerate(uppers)]


def test_t_n_insufficient_seeds():
    with pytest.raises(InsufficientSeeds):
        t_n_estimator(fake_records(6, 1.0, [1.0] * 10), 0.5, 1.0)


def test_t_n_quantile_and_coverage():
    ups = list(np.arange(1.0, 41.0))
    est, = t_n_estimator(fake_records(3, 1.0, ups), 0.5, 1.0)
    level = 1 - math.exp(-3)
    assert est.level == pytest.approx(level)
    assert est.T_N == np.quantile(ups, level, method="higher")
    assert est.coverage >= level
    assert est.coverage_ci[0] <= est.coverage <= est.coverage_ci[1]
    assert est.rate == pytest.approx(math.log(est.T_N) / 3)


def test_t_n_epsilon_two_is_zero():
    est, = t_n_estimator(fake_records(4, 1.0, [2.0] * 30), 2.0, 1.0)
    assert est.T_N == 0.0


def test_t_n_beta_zero_hypercube_scale():
    N = 6
    cfg = small_config(N_list=[N], beta_list=[0.0], seeds=list(range(30)))
    est, = t_n_estimator(run_sweep(cfg), 0.5, 1.0)
    # all seeds see the same chain at beta = 0; T is order N log N at rates 1/N
    assert 0.1 * N * math.log(N) < est.T_N < 10 * N * math.log(N)
    assert est.coverage == 1.0
