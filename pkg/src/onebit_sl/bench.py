"""Monte-Carlo BER experiments over SNR, detectors and search budgets."""
from __future__ import annotations

import csv
import dataclasses
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .dataset import LabelledDataset, collect_training
from .detectors import (
    detect_bernoulli,
    detect_emld,
    detect_mahalanobis,
    detect_mcd,
    detect_mmd,
    fit_bernoulli,
    fit_centroid,
    fit_gaussian,
)
from .forest import build_forest, detect_lsl
from .netsim import ChannelRealization, SystemConfig, class_decode, draw_channel, transmit

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "BerRecord",
    "DETECTORS",
    "run_experiment",
    "lmax_sweep_config",
    "emit_csv",
    "read_csv",
    "parse_config",
    "load_config",
    "count_bit_errors",
]

CSV_HEADER = ["detector", "snr_db", "errors", "bits", "ber", "dist_evals", "detect_us"]
BASE_DETECTORS = ("mcd", "mahalanobis", "emld", "mmd", "bernoulli", "lsl")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    K: int = 2
    N_r: int = 8
    L: int = 8
    hops: int = 2
    m: int = 4
    P_t: float = 1.0
    T: int = 15
    detectors: tuple = ("mcd", "mahalanobis", "bernoulli")
    emld_k: int = 5
    lsl: tuple = (32, 4, 16)  # (J, W, L_max)
    snr_grid_db: tuple = (0.0, 5.0, 10.0)
    channel_realizations: int = 10
    payload_symbols_per_realization: int = 1000
    seed: int = 0
    shrinkage_lambda: float = 0.1
    epsilon_floor: float = 1e-3
    exact_likelihood: bool = False
    lmax_grid: tuple = ()
    timing: bool = False
    workers: int = 1

    def __post_init__(self):
        errors = []
        for name in ("K", "N_r", "L", "hops", "m", "T", "emld_k", "channel_realizations",
                     "payload_symbols_per_realization", "workers"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                errors.append(f"{name} must be a positive integer (got {v!r})")
        if not errors:
            if self.N_r < self.K:
                errors.append(f"N_r must be >= K (got N_r={self.N_r}, K={self.K})")
            if self.m < 2 or self.m & (self.m - 1):
                errors.append(f"m must be a power of two >= 2 (got {self.m})")
        if not self.P_t > 0:
            errors.append(f"P_t must be positive (got {self.P_t!r})")
        if not 0.0 <= self.shrinkage_lambda <= 1.0:
            errors.append(f"shrinkage_lambda must lie in [0, 1] (got {self.shrinkage_lambda!r})")
        if not 0.0 < self.epsilon_floor < 0.5:
            errors.append(f"epsilon_floor must lie in (0, 0.5) (got {self.epsilon_floor!r})")
        if not self.detectors:
            errors.append("detectors must be non-empty")
        for name in self.detectors:
            base, _, budget = name.partition("@")
            if base not in BASE_DETECTORS or (budget and (base != "lsl" or not budget.isdigit())):
                errors.append(f"detectors: unknown detector {name!r}")
        if len(self.lsl) != 3 or any(int(v) < 1 for v in self.lsl) or int(self.lsl[0]) < 2:
            errors.append(f"lsl must be (J>=2, W>=1, L_max>=1) (got {self.lsl!r})")
        if not self.snr_grid_db:
            errors.append("snr_grid_db must be non-empty")
        if any(math.isnan(s) for s in self.snr_grid_db):
            errors.append("snr_grid_db contains NaN")
        if not errors:
            C = self.m**self.K
            budgets = [self.lsl[2]] + list(self.lmax_grid)
            budgets += [int(d.partition("@")[2]) for d in self.detectors if "@" in d]
            for b in budgets:
                if not 1 <= b <= C:
                    errors.append(f"lsl/lmax_grid: L_max {b} outside [1, {C}]")
            if self.emld_k > C * self.T:
                errors.append(f"emld_k must be <= T*m^K = {C * self.T} (got {self.emld_k})")
        if errors:
            raise ConfigError("; ".join(errors))

    def system(self, snr_db: float) -> SystemConfig:
        return SystemConfig(self.K, self.N_r, self.L, self.hops, self.m, self.P_t, snr_db)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class BerRecord:
    detector: str
    snr_db: float
    errors: int
    bits: int
    ber: float
    dist_evals: float
    detect_us: float

    def confidence_interval(self, z: float = 1.96):
        """Wilson score interval for the bit error probability."""
        n, p = self.bits, self.ber
        denom = 1 + z * z / n
        centre = (p + z * z / (2 * n)) / denom
        half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
        return max(0.0, centre - half), min(1.0, centre + half)


# ---------------------------------------------------------------- config I/O

_TUPLE_FIELDS = {"detectors": str, "lsl": int, "snr_grid_db": float, "lmax_grid": int}


def _convert(name: str, text: str):
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    if name not in fields:
        raise ConfigError(f"unknown config key {name!r}")
    try:
        if name in _TUPLE_FIELDS:
            kind = _TUPLE_FIELDS[name]
            return tuple(kind(tok.strip()) for tok in text.split(",") if tok.strip())
        kind = type(fields[name].default)
        if kind is bool:
            lowered = text.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        return kind(text.strip())
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text.strip()!r}") from None


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` starts a comment); overrides win."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        values[key.strip()] = _convert(key.strip(), value)
    for key, value in overrides.items():
        if value is None:
            continue
        values[key] = _convert(key, value) if isinstance(value, str) else value
    return ExperimentConfig(**values)


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, **overrides)


def lmax_sweep_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Bernoulli baseline plus one LSL detector per budget in ``lmax_grid``."""
    if not cfg.lmax_grid:
        raise ConfigError("lmax_grid must list at least one budget for an L_max sweep")
    return cfg.replace(detectors=("bernoulli",) + tuple(f"lsl@{b}" for b in cfg.lmax_grid))


# ---------------------------------------------------------------- experiment


def count_bit_errors(c_true, c_hat) -> int:
    """Differing message bits between class indices (m a power of two).

    With base-m class coding and Gray-labelled symbols, the binary digits of
    the class index are exactly the concatenated message bits.
    """
    diff = np.bitwise_xor(np.asarray(c_true, dtype=np.int64), np.asarray(c_hat, dtype=np.int64))
    return int(np.bitwise_count(diff).sum())


class Realization:
    """Everything fitted for one channel realization at one SNR, built lazily."""

    def __init__(self, cfg: ExperimentConfig, dataset: LabelledDataset, forest_seed):
        self.cfg = cfg
        self.dataset = dataset
        self._forest_seed = forest_seed

    @cached_property
    def centroid(self):
        return fit_centroid(self.dataset)

    @cached_property
    def gaussian(self):
        return fit_gaussian(self.dataset, self.cfg.shrinkage_lambda)

    @cached_property
    def bernoulli(self):
        return fit_bernoulli(self.dataset, self.cfg.epsilon_floor)

    @cached_property
    def forest(self):
        J, W, _ = self.cfg.lsl
        rng = np.random.default_rng(self._forest_seed)
        return build_forest(self.bernoulli.signatures, J, W, rng)


def _detect_lsl(ctx: Realization, R, budget=None):
    L_max = budget or ctx.cfg.lsl[2]
    hat, searches = detect_lsl(R, ctx.forest, ctx.bernoulli, L_max,
                               exact=ctx.cfg.exact_likelihood, return_search=True)
    return hat, float(sum(s.distance_evals for s in searches))


# name -> f(ctx, R, budget) -> (class estimates, total distance evaluations)
DETECTORS = {
    "mcd": lambda ctx, R, budget=None: (detect_mcd(R, ctx.centroid), len(R) * ctx.dataset.num_classes),
    "mahalanobis": lambda ctx, R, budget=None: (
        detect_mahalanobis(R, ctx.gaussian), len(R) * ctx.dataset.num_classes),
    "emld": lambda ctx, R, budget=None: (
        detect_emld(R, ctx.dataset, ctx.cfg.emld_k), len(R) * ctx.dataset.num_classes * ctx.dataset.T),
    "mmd": lambda ctx, R, budget=None: (
        detect_mmd(R, ctx.dataset), len(R) * ctx.dataset.num_classes * ctx.dataset.T),
    "bernoulli": lambda ctx, R, budget=None: (
        detect_bernoulli(R, ctx.bernoulli, exact=ctx.cfg.exact_likelihood), len(R) * ctx.dataset.num_classes),
    "lsl": _detect_lsl,
}


_FITTED = {"mcd": "centroid", "mahalanobis": "gaussian", "bernoulli": "bernoulli", "lsl": "forest"}


def _streams(seed: int, snr_idx: int, real_idx: int):
    # channel and payload messages are shared across the SNR grid (common
    # random numbers); noise, pilots and forest randomness are per point
    ss = np.random.SeedSequence
    return {
        "channel": np.random.default_rng(ss([seed, 0, real_idx])),
        "pilots": np.random.default_rng(ss([seed, 1, snr_idx, real_idx])),
        "messages": np.random.default_rng(ss([seed, 2, real_idx])),
        "payload": np.random.default_rng(ss([seed, 3, snr_idx, real_idx])),
        "forest": ss([seed, 4, snr_idx, real_idx]),
    }


def _run_point(cfg: ExperimentConfig, snr_idx: int, real_idx: int):
    """Counts for every detector on one (SNR, realization) pair."""
    snr = cfg.snr_grid_db[snr_idx]
    system = cfg.system(snr)
    rng = _streams(cfg.seed, snr_idx, real_idx)
    channel: ChannelRealization = draw_channel(system, rng["channel"])
    dataset = collect_training(channel, system, cfg.T, rng["pilots"], seed=cfg.seed)
    ctx = Realization(cfg, dataset, rng["forest"])

    B = cfg.payload_symbols_per_realization
    c_true = rng["messages"].integers(0, system.num_classes, size=B)
    R = transmit(channel, class_decode(c_true, cfg.K, cfg.m), rng["payload"]).reshape(B, -1)

    out = {}
    for name in cfg.detectors:
        base, _, budget = name.partition("@")
        # fit outside the timed region
        if base in _FITTED:
            getattr(ctx, _FITTED[base])
        t0 = time.perf_counter()
        c_hat, evals = DETECTORS[base](ctx, R, int(budget) if budget else None)
        elapsed = time.perf_counter() - t0
        out[name] = (count_bit_errors(c_true, c_hat), evals, elapsed)
    return out


def _run_task(args):
    return _run_point(*args)


def run_experiment(cfg: ExperimentConfig) -> list:
    """BER records for every (SNR, detector) pair, SNR-major.

    Results are a pure function of ``cfg`` (``detect_us`` is 0 unless
    ``cfg.timing``), and do not depend on ``cfg.workers``.
    """
    tasks = [(cfg, s, r) for s in range(len(cfg.snr_grid_db)) for r in range(cfg.channel_realizations)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]

    bits_per_detection = cfg.K * int(math.log2(cfg.m))
    detections = cfg.channel_realizations * cfg.payload_symbols_per_realization
    records = []
    for s, snr in enumerate(cfg.snr_grid_db):
        chunk = results[s * cfg.channel_realizations:(s + 1) * cfg.channel_realizations]
        for name in cfg.detectors:
            errors = sum(res[name][0] for res in chunk)
            evals = sum(res[name][1] for res in chunk)
            seconds = sum(res[name][2] for res in chunk)
            bits = detections * bits_per_detection
            records.append(BerRecord(
                detector=name,
                snr_db=float(snr),
                errors=errors,
                bits=bits,
                ber=errors / bits,
                dist_evals=evals / detections,
                detect_us=1e6 * seconds / detections if cfg.timing else 0.0,
            ))
    return records


# ---------------------------------------------------------------- CSV


def emit_csv(records, path) -> Path:
    """Write records atomically; no partial file is left on failure."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=".ber-", suffix=".csv", dir=path.parent or ".")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from None
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for rec in records:
                writer.writerow([rec.detector, repr(rec.snr_db), rec.errors, rec.bits,
                                 repr(rec.ber), repr(float(rec.dist_evals)), repr(float(rec.detect_us))])
        os.replace(tmp, path)
    except OSError as exc:
        os.unlink(tmp)
        raise OSError(f"cannot write {path}: {exc.strerror}") from None
    return path


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            BerRecord(row["detector"], float(row["snr_db"]), int(row["errors"]), int(row["bits"]),
                      float(row["ber"]), float(row["dist_evals"]), float(row["detect_us"]))
            for row in reader
        ]
