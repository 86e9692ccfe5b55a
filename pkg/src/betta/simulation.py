"""Monte-Carlo calibration studies on negative binomial abundance data.

Abundances are NB(size, prob) with ``P(X=k) = C(k+r-1, k) p**r (1-p)**k``
(numpy's ``negative_binomial``), so the mean is ``size*(1-prob)/prob`` and the
unobserved fraction is ``prob**size``. Zeros are dropped before estimation.

Reproducibility: every work unit (a replicate, or one dataset inside a group)
draws from its own PCG64 generator seeded by ``SeedSequence([seed, *unit])``,
so serial and parallel runs produce identical reports.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special, stats

from betta.design import DesignMatrix
from betta.errors import BettaError, EstimationError
from betta.estimators import estimate_chao, estimate_ztnb
from betta.frequency import FrequencyCountTable
from betta.inference import fit, q_test
from betta.tails import chi2_cdf, chi2_quantile

ESTIMATORS = {"ztnb-mle": estimate_ztnb, "chao-type": estimate_chao}
ALPHA = 0.05


@dataclass(frozen=True)
class NbConfig:
    size: float = 500.0
    prob: float = 0.99
    n_species: int = 5000
    seed: int = 0

    def __post_init__(self):
        if not self.size > 0:
            raise ValueError("size must be > 0")
        if not 0 < self.prob < 1:
            raise ValueError("prob must lie in (0, 1)")
        if int(self.n_species) != self.n_species or self.n_species < 1:
            raise ValueError("n_species must be a positive integer")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def pi0(self) -> float:
        """Probability that a species is unobserved."""
        return math.exp(self.size * math.log(self.prob))

    @property
    def mean(self) -> float:
        return self.size * (1.0 - self.prob) / self.prob


def rng_for(seed: int, *unit: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, unit)])))


def draw_abundances(cfg: NbConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.negative_binomial(cfg.size, cfg.prob, size=cfg.n_species)


def tally(draws: np.ndarray, sample_id: str = "sim") -> FrequencyCountTable:
    positive = draws[draws > 0]
    if positive.size == 0:
        raise EstimationError("all negative binomial draws were zero")
    j, f = np.unique(positive, return_counts=True)
    return FrequencyCountTable(tuple((int(a), int(b)) for a, b in zip(j, f)), sample_id)


def sample_truncated_nb(cfg: NbConfig, unit: tuple[int, ...] = ()) -> FrequencyCountTable:
    """One zero-truncated NB sample, tallied into a frequency table."""
    return tally(draw_abundances(cfg, rng_for(cfg.seed, *unit)))


@dataclass(frozen=True)
class StudyReport:
    study: str
    per_replicate: tuple[float, ...]
    summary: dict
    config: dict
    seed: int
    qq: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "study": self.study,
            "seed": self.seed,
            "config": self.config,
            "summary": self.summary,
        }

    def write(self, out_dir) -> list[Path]:
        """Write ``summary.json``, ``replicates.csv`` and (if any) ``qq.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "summary.json", out / "replicates.csv"]
        paths[0].write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        with paths[1].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "value"])
            for k, v in enumerate(self.per_replicate):
                w.writerow([k, repr(float(v))])
        if self.qq:
            paths.append(out / "qq.csv")
            with paths[-1].open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["theoretical", "sample"])
                for a, b in self.qq:
                    w.writerow([repr(a), repr(b)])
        return paths


def _map(func, items, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(func, items, chunksize=max(1, len(items) // (4 * workers))))
    return [func(x) for x in items]


def _normality_unit(args):
    cfg, estimator, i = args
    try:
        est = ESTIMATORS[estimator](sample_truncated_nb(cfg, (i,)))
    except BettaError as exc:
        return None, str(exc)
    return (est.c_hat - cfg.n_species) / est.se, None


def _check_estimator(estimator):
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; choose from {sorted(ESTIMATORS)}")


def _sd(x):
    return float(np.std(x, ddof=1)) if len(x) > 1 else float("nan")


def run_normality_study(
    cfg: NbConfig, replicates: int, estimator: str = "ztnb-mle", workers: int = 1
) -> StudyReport:
    """Distribution of ``(c_hat - C) / se`` over independent NB samples."""
    if replicates < 100:
        raise ValueError("replicates must be >= 100")
    _check_estimator(estimator)
    results = _map(_normality_unit, [(cfg, estimator, i) for i in range(replicates)], workers)
    values = np.array([v for v, _ in results if v is not None])
    failures = [msg for _, msg in results if msg is not None]
    if values.size == 0:
        raise EstimationError("every replicate failed")
    ordered = np.sort(values)
    theo = special.ndtri((np.arange(1, values.size + 1) - 0.5) / values.size)
    summary = {
        "n_requested": replicates,
        "n_recorded": int(values.size),
        "n_failures": len(failures),
        "failure_messages": sorted(set(failures)),
        "mean": float(values.mean()),
        "sd": _sd(values),
        "ks_distance": float(stats.kstest(values, special.ndtr).statistic),
        "rejection_rate": float(np.mean(np.abs(values) > special.ndtri(1 - ALPHA / 2))),
        "reference": "N(0,1)",
    }
    config = {**asdict(cfg), "replicates": replicates, "estimator": estimator}
    return StudyReport(
        "normality",
        tuple(float(v) for v in values),
        summary,
        config,
        cfg.seed,
        tuple(zip(map(float, theo), map(float, ordered))),
    )


def default_bypass_se(cfg: NbConfig) -> float:
    """Binomial sd of the unobserved count, a natural scale for bypass draws."""
    pi0 = cfg.pi0
    return math.sqrt(cfg.n_species * pi0 / (1.0 - pi0))


def _q_group(args):
    cfg, estimator, g, group_size, bypass_se = args
    if bypass_se is not None:
        rng = rng_for(cfg.seed, g)
        se = np.full(group_size, bypass_se)
        c_hat = rng.normal(cfg.n_species, se)
    else:
        c_hat = np.empty(group_size)
        se = np.empty(group_size)
        try:
            for i in range(group_size):
                est = ESTIMATORS[estimator](sample_truncated_nb(cfg, (g, i)))
                c_hat[i], se[i] = est.c_hat, est.se
        except BettaError as exc:
            return None, str(exc)
    try:
        model = fit((c_hat, se), DesignMatrix.intercept_only(group_size))
    except BettaError as exc:
        return None, str(exc)
    return q_test(model).statistic, None


def run_q_calibration(
    cfg: NbConfig,
    groups: int,
    group_size: int,
    estimator: str = "ztnb-mle",
    bypass: bool = False,
    bypass_se: float | None = None,
    workers: int = 1,
) -> StudyReport:
    """Null distribution of the homogeneity statistic from intercept-only fits.

    Each group holds ``group_size`` independent datasets with the same true
    richness. With ``bypass`` the estimator is skipped: ``c_hat`` is drawn from
    ``N(C, se**2)`` with known ``se``, which makes Q exactly chi-square.
    """
    if group_size < 2:
        raise ValueError("group_size must be >= 2")
    if groups < 50:
        raise ValueError("groups must be >= 50")
    _check_estimator(estimator)
    sd = (bypass_se if bypass_se is not None else default_bypass_se(cfg)) if bypass else None
    results = _map(_q_group, [(cfg, estimator, g, group_size, sd) for g in range(groups)], workers)
    values = np.array([v for v, _ in results if v is not None])
    failures = [msg for _, msg in results if msg is not None]
    if values.size == 0:
        raise EstimationError("every group failed")
    df = group_size - 1
    crit = chi2_quantile(1 - ALPHA, df)
    summary = {
        "n_requested": groups,
        "n_recorded": int(values.size),
        "n_failures": len(failures),
        "failure_messages": sorted(set(failures)),
        "mean": float(values.mean()),
        "sd": _sd(values),
        "ks_distance": float(stats.kstest(values, lambda x: chi2_cdf(x, df)).statistic),
        "critical_value": crit,
        "rejection_rate": float(np.mean(values > crit)),
        "reference": f"chi2({df})",
    }
    config = {
        **asdict(cfg),
        "groups": groups,
        "group_size": group_size,
        "estimator": "bypass" if bypass else estimator,
        "bypass_se": sd,
    }
    return StudyReport("q-calibration", tuple(float(v) for v in values), summary, config, cfg.seed)
