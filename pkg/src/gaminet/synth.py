"""Synthetic benchmark: six informative features, noise features, known interactions."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .data import Dataset, FeatureMeta, split_indices
from .model import clarity_loss, predict
from .seeding import substream
from .trainer import FitResult, TrainConfig, fit, fit_interactions, fit_main_effects

log = logging.getLogger(__name__)

DISTRIBUTIONS = ("uniform", "truncated_normal", "truncated_exponential")
TRUE_MAINS = frozenset(range(6))
TRUE_PAIRS = frozenset({(2, 3), (4, 5)})


@dataclass
class SynthConfig:
    n: int = 10000
    distribution: str = "uniform"
    seed: int = 0
    noise_sd: float = 1.0
    p_total: int = 100

    def validate(self) -> "SynthConfig":
        if self.n < 10:
            raise ValueError("n must be >= 10")
        if self.p_total < 6:
            raise ValueError("p_total must be >= 6")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {', '.join(DISTRIBUTIONS)}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        return self


def true_function(x: np.ndarray) -> np.ndarray:
    """Noise-free response; only the first six columns matter."""
    x1, x2, x3, x4, x5, x6 = (x[:, i] for i in range(6))
    u = (2 * x5 - 1) ** 2
    return (8 * (x1 - 0.5) ** 2
            + 0.1 * np.exp(-8 * x2 + 4)
            + 3 * np.sin(2 * np.pi * x3 * x4)
            + 5 * np.exp(-2 * u - 0.5 * (15 * x6 + 12 * u - 13) ** 2))


def _truncated(rng: np.random.Generator, size, draw: Callable[[int], np.ndarray]) -> np.ndarray:
    """Rejection sampling onto [0, 1]: out-of-range draws are redrawn."""
    flat = draw(int(np.prod(size)))
    bad = np.flatnonzero((flat < 0) | (flat > 1))
    while bad.size:
        flat[bad] = draw(bad.size)
        bad = bad[(flat[bad] < 0) | (flat[bad] > 1)]
    return flat.reshape(size)


def sample_features(rng: np.random.Generator, n: int, p: int, distribution: str) -> np.ndarray:
    if distribution == "uniform":
        return rng.random((n, p))
    if distribution == "truncated_normal":
        return _truncated(rng, (n, p), lambda m: rng.normal(0.5, 0.2, m))
    if distribution == "truncated_exponential":
        # rate 0.5, i.e. mean 2
        return _truncated(rng, (n, p), lambda m: rng.exponential(2.0, m))
    raise ValueError(f"distribution must be one of {', '.join(DISTRIBUTIONS)}")


def generate(config: SynthConfig) -> Dataset:
    config.validate()
    rng = substream(config.seed, "data")
    x = sample_features(rng, config.n, config.p_total, config.distribution)
    y = true_function(x) + config.noise_sd * rng.standard_normal(config.n)
    # features already live on [0, 1]; keep that as the scaling frame
    meta = [FeatureMeta(f"x{i + 1}", "numerical", 0.0, 1.0) for i in range(config.p_total)]
    return Dataset(x, y, "regression", meta)


def rmse(a, b) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class BenchReport:
    repetition: int
    data_seed: int
    train_rmse: float
    val_rmse: float
    test_rmse: float
    mains: List[int]
    interactions: List[List[int]]
    clarity: float
    wall_time: float
    mains_recovered: bool = False
    interactions_recovered: bool = False
    spurious_mains: int = 0
    lam: float = 0.0

    def __post_init__(self):
        s1, s2 = set(self.mains), {tuple(p) for p in self.interactions}
        self.mains_recovered = TRUE_MAINS <= s1
        self.interactions_recovered = s2 == TRUE_PAIRS
        self.spurious_mains = len(s1 - TRUE_MAINS)

    @property
    def recovered(self) -> bool:
        """All six true mains present, at most two spurious mains, exactly the true pairs."""
        return self.mains_recovered and self.spurious_mains <= 2 and self.interactions_recovered

    def row(self) -> dict:
        d = asdict(self)
        d["mains"] = " ".join(f"x{j + 1}" for j in self.mains)
        d["interactions"] = " ".join(f"x{j + 1}:x{k + 1}" for j, k in self.interactions)
        d["recovered"] = self.recovered
        return d


def evaluate_fit(result: FitResult, train: Dataset, val: Dataset, test: Dataset, rep: int = 0,
                 data_seed: int = 0, wall: float = 0.0) -> BenchReport:
    m = result.model
    return BenchReport(
        repetition=rep, data_seed=data_seed,
        train_rmse=rmse(predict(m, train.features)[0], train.response),
        val_rmse=rmse(predict(m, val.features)[0], val.response),
        test_rmse=rmse(predict(m, test.features)[0], test.response),
        mains=sorted(m.main_effects), interactions=[list(p) for p in sorted(m.interactions)],
        clarity=clarity_loss(m, train.features)[1], wall_time=wall, lam=result.config.clarity_lambda)


def repetition_seeds(base_seed: int, r: int):
    """(data seed, training seed) for repetition ``r``."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(99, r))
    a, b = ss.generate_state(2)
    return int(a), int(b)


def prepare_repetition(synth: SynthConfig, r: int):
    data_seed, train_seed = repetition_seeds(synth.seed, r)
    data = generate(replace(synth, seed=data_seed))
    idx = split_indices(data.n, 0.2, 0.2, rng=substream(data_seed, "split"))
    train, val, test = (data.subset(i) for i in idx)
    return data_seed, train_seed, train, val, test


def run_benchmark(synth: SynthConfig, train_config: TrainConfig, repetitions: int = 10,
                  on_report: Optional[Callable[[BenchReport, FitResult], None]] = None,
                  first: int = 0) -> List[BenchReport]:
    """Repetitions ``first .. repetitions-1``; each has its own data and training seeds."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    synth.validate()
    reports = []
    for r in range(first, repetitions):
        data_seed, train_seed, train, val, test = prepare_repetition(synth, r)
        t0 = time.perf_counter()
        result = fit(train, val, replace(train_config, seed=train_seed))
        wall = time.perf_counter() - t0
        rep = evaluate_fit(result, train, val, test, r, data_seed, wall)
        log.info("rep %d: test RMSE %.4f, mains %s, pairs %s, clarity %.2e (%.0fs)", r, rep.test_rmse,
                 rep.mains, rep.interactions, rep.clarity, wall)
        reports.append(rep)
        if on_report is not None:
            on_report(rep, result)
    return reports


def _mean_sd(values: Sequence[float]):
    arr = np.asarray(values, dtype=np.float64)
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), sd


def summarize(reports: Sequence[BenchReport]) -> dict:
    out = {"repetitions": len(reports)}
    for key in ("train_rmse", "val_rmse", "test_rmse", "clarity", "wall_time"):
        mean, sd = _mean_sd([getattr(r, key) for r in reports])
        out[key] = {"mean": mean, "sd": sd}
    out["recovered"] = sum(r.recovered for r in reports)
    out["interactions_recovered"] = sum(r.interactions_recovered for r in reports)
    out["mains_recovered"] = sum(r.mains_recovered for r in reports)
    return out


def table_rows(summary: dict, synth: SynthConfig, lam: float) -> List[str]:
    """Summary lines formatted like the RMSE table and the ablation table rows."""
    t = summary
    fmt = lambda d, p=3: f"{d['mean']:.{p}f}±{d['sd']:.{p}f}"
    return [
        f"{synth.distribution} & {synth.n} & {fmt(t['test_rmse'])}",
        f"lambda={lam:g} & {fmt(t['train_rmse'])} & {fmt(t['val_rmse'])} & {fmt(t['test_rmse'])} & "
        f"{fmt(t['clarity'], 4)}",
    ]


def write_reports(reports: Sequence[BenchReport], out_dir, synth: SynthConfig, lam: float,
                  train_config: Optional[TrainConfig] = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [r.row() for r in reports]
    if rows:
        with open(out / "repetitions.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    summary = summarize(reports) if reports else {"repetitions": 0}
    doc = {"synth": asdict(synth), "lambda": lam, "summary": summary, "repetitions": rows}
    if train_config is not None:
        doc["train_config"] = train_config.to_dict()
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
    if reports:
        with open(out / "summary.txt", "w", encoding="utf-8") as fh:
            fh.write("\n".join(table_rows(summary, synth, lam)) + "\n")
    return doc


def clarity_ablation(synth: SynthConfig, train_config: TrainConfig, lams: Sequence[float], repetitions: int = 10,
                     on_report: Optional[Callable[[BenchReport], None]] = None,
                     first: int = 0) -> List[BenchReport]:
    """Paired runs over clarity weights.

    Stage 1 does not use the clarity weight, so each repetition fits it once
    and branches into stages 2-3 per weight.  ``wall_time`` counts the shared
    stage once per report.
    """
    synth.validate()
    reports = []
    for r in range(first, repetitions):
        data_seed, train_seed, train, val, test = prepare_repetition(synth, r)
        t0 = time.perf_counter()
        stage = fit_main_effects(train, val, replace(train_config, seed=train_seed))
        shared = time.perf_counter() - t0
        for lam in lams:
            t1 = time.perf_counter()
            result = fit_interactions(stage, train, val, replace(train_config, seed=train_seed, clarity_lambda=lam))
            rep = evaluate_fit(result, train, val, test, r, data_seed, shared + time.perf_counter() - t1)
            log.info("rep %d, lambda %g: clarity %.3e, test RMSE %.4f", r, lam, rep.clarity, rep.test_rmse)
            reports.append(rep)
            if on_report is not None:
                on_report(rep)
    return reports


def ablation_summary(reports: Sequence[BenchReport]) -> dict:
    """Per-weight clarity and RMSE summaries plus the paired comparison."""
    out = {}
    for lam in sorted({r.lam for r in reports}, reverse=True):
        sub = [r for r in reports if r.lam == lam]
        out[repr(lam)] = summarize(sub)
    return out
