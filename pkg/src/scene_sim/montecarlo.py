"""Experiment orchestration: repeated-trial simulation over parameter sweeps,
streaming statistics with exact merges, and CSV persistence.

Trials are split into fixed-size jobs with pre-split random streams and merged
in job order, so results are identical no matter how many workers run them.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from . import analysis
from .channel import PathlossModel, sample_pathloss, simulate_rounds
from .core import (
    ChannelModel,
    DevicePopulation,
    RandomSource,
    RoundConfig,
    SoftLabel,
    population_from_arrays,
    weighted_average,
)
from .estimators import scene_raw
from .power import map_energies, min_rho

# Trials per scheduling job; fixed so outputs do not depend on worker count.
_JOB_TRIALS = 20_000

CSV_HEADER = (
    "S,M,snr_db,rho,model,estimator,class,mean,bias,var,var_bound,se,trials,seed"
)


class InsufficientSweep(ValueError):
    """Constant fitting needs at least three distinct S*M products."""


@dataclass
class TrialStats:
    """Streaming per-class moments (Welford form).

    ``m2`` holds the running sum of squared deviations, so
    variance = m2 / (n - 1). ``merge`` combines disjoint streams exactly:
    merging equals computing the stats of the concatenated samples.
    """

    n: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def zeros(cls, k: int) -> "TrialStats":
        return cls(0, np.zeros(k), np.zeros(k))

    @classmethod
    def from_samples(cls, x: np.ndarray) -> "TrialStats":
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mean = x.mean(axis=0)
        return cls(x.shape[0], mean, ((x - mean) ** 2).sum(axis=0))

    def update(self, x: np.ndarray) -> None:
        """Fold in a single observation."""
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + delta * (x - self.mean)

    def merge(self, other: "TrialStats") -> "TrialStats":
        if self.n == 0:
            return TrialStats(other.n, other.mean.copy(), other.m2.copy())
        if other.n == 0:
            return TrialStats(self.n, self.mean.copy(), self.m2.copy())
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.n * other.n / n)
        return TrialStats(n, mean, m2)

    @property
    def variance(self) -> np.ndarray:
        if self.n < 2:
            return np.full_like(self.mean, np.nan)
        return self.m2 / (self.n - 1)

    @property
    def std_error(self) -> np.ndarray:
        return np.sqrt(self.variance / self.n)


@dataclass(frozen=True)
class PopulationSpec:
    """How to draw a device population for an experiment.

    Large-scale gains come from the pathloss model; power caps are uniform on
    ``power_cap_range``. ``gamma_range`` draws a per-device calibration
    mismatch (None means perfectly calibrated devices).
    """

    n_devices: int = 10
    pathloss: PathlossModel = field(default_factory=PathlossModel)
    power_cap_range: tuple[float, float] = (0.5, 1.5)
    weight_rule: str = "uniform"  # "uniform" | "random"
    gamma_range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.n_devices < 1:
            raise ValueError("need at least one device")
        if self.weight_rule not in ("uniform", "random"):
            raise ValueError(f"unknown weight rule {self.weight_rule!r}")

    def draw(self, rng: RandomSource) -> DevicePopulation:
        gen = rng.generator
        n = self.n_devices
        betas = sample_pathloss(self.pathloss, n, rng)
        caps = gen.uniform(*self.power_cap_range, n)
        if self.weight_rule == "uniform":
            omegas = np.full(n, 1.0 / n)
        else:
            omegas = gen.uniform(0.1, 1.0, n)
            omegas /= omegas.sum()
        if self.gamma_range is None:
            assumed = betas
        else:
            gammas = gen.uniform(*self.gamma_range, n)
            assumed = betas / gammas
        return population_from_arrays(omegas, betas, assumed, caps)


@dataclass(frozen=True)
class LabelSpec:
    """How to draw the per-device soft labels.

    "dirichlet" draws peaked labels (small alpha mimics confident model
    outputs), "vertex" puts each device on a random one-hot corner, and
    "fixed" uses the supplied list verbatim.
    """

    kind: str = "dirichlet"
    num_classes: int = 10
    alpha: float = 0.3
    fixed: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("dirichlet", "vertex", "fixed"):
            raise ValueError(f"unknown label spec kind {self.kind!r}")
        if self.kind == "fixed" and not self.fixed:
            raise ValueError("fixed label spec needs labels")
        if self.num_classes < 2:
            raise ValueError("need K >= 2")

    def draw(self, n_devices: int, rng: RandomSource) -> list[SoftLabel]:
        gen = rng.generator
        k = self.num_classes
        if self.kind == "fixed":
            labels = [SoftLabel(np.asarray(row)) for row in self.fixed]
            if len(labels) != n_devices:
                raise ValueError(
                    f"{len(labels)} fixed labels for {n_devices} devices"
                )
            return labels
        if self.kind == "vertex":
            eye = np.eye(k)
            picks = gen.integers(0, k, n_devices)
            return [SoftLabel(eye[p]) for p in picks]
        draws = gen.dirichlet(np.full(k, self.alpha), size=n_devices)
        return [SoftLabel(row) for row in draws]


@dataclass(frozen=True)
class ExperimentSpec:
    """A full sweep: population, labels, and the (S, M) x SNR grid."""

    population: PopulationSpec = field(default_factory=PopulationSpec)
    labels: LabelSpec = field(default_factory=LabelSpec)
    sm_pairs: tuple[tuple[int, int], ...] = ((4, 4),)
    snr_db_values: tuple[float, ...] = (5.0,)
    rho_rule: str = "min_rho"  # "min_rho" | "fixed"
    rho_value: float = 1.0
    channel_model: ChannelModel = ChannelModel.SUPERPOSITION
    estimator: str = "scene"  # "scene" | "ratio" | "both"
    trials: int = 10_000
    seed: int = 0
    time_corr: float = 0.0
    space_corr: float = 0.0

    def __post_init__(self) -> None:
        if not self.sm_pairs or not self.snr_db_values:
            raise ValueError("sweep lists must be nonempty")
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if self.rho_rule not in ("min_rho", "fixed"):
            raise ValueError(f"unknown rho rule {self.rho_rule!r}")
        if self.estimator not in ("scene", "ratio", "both"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


@dataclass(frozen=True)
class ResultRow:
    """One (sweep point, estimator, class) row of the result table.

    ``var``/``se`` are None when undefined (single trial); ``var_bound`` is
    only populated for the raw self-centering estimator. ``wall_time`` is a
    diagnostic shared by all rows of a sweep point and is not serialized.
    """

    s: int
    m: int
    snr_db: float
    rho: float
    model: str
    estimator: str
    cls: int
    mean: float
    bias: float
    var: float | None
    var_bound: float | None
    se: float | None
    trials: int
    seed: int
    wall_time: float = 0.0


def _fmt(x: float | int | None) -> str:
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    if math.isnan(x):
        return ""
    return f"{x:.17g}"


def write_rows_csv(rows: Sequence[ResultRow], fp: IO[str]) -> None:
    """Serialize rows with 17 significant digits (newline = LF)."""
    fp.write(CSV_HEADER + "\n")
    for r in rows:
        fields = [
            str(r.s),
            str(r.m),
            _fmt(r.snr_db),
            _fmt(r.rho),
            r.model,
            r.estimator,
            str(r.cls),
            _fmt(r.mean),
            _fmt(r.bias),
            _fmt(r.var),
            _fmt(r.var_bound),
            _fmt(r.se),
            str(r.trials),
            str(r.seed),
        ]
        fp.write(",".join(fields) + "\n")


def _point_stats(
    spec: ExperimentSpec,
    pop: DevicePopulation,
    labels: list[SoftLabel],
    cfg: RoundConfig,
    rng: RandomSource,
    threads: int | None,
) -> dict[str, TrialStats]:
    """Run all trials of one sweep point, returning stats keyed by estimator
    variant ("scene", "scene_proj", "ratio", "ratio_proj")."""
    frame = map_energies(labels, pop, cfg.rho, include_reference=cfg.use_reference_re)
    k = cfg.num_classes
    sm = cfg.sample_count
    want_scene = spec.estimator in ("scene", "both")
    want_ratio = spec.estimator in ("ratio", "both")

    jobs = []
    remaining = spec.trials
    while remaining > 0:
        jobs.append(min(_JOB_TRIALS, remaining))
        remaining -= _JOB_TRIALS
    streams = rng.split(len(jobs))

    def run_job(args) -> dict[str, TrialStats]:
        count, stream = args
        y, y_ref = simulate_rounds(
            frame,
            pop,
            cfg,
            stream,
            trials=count,
            time_corr=spec.time_corr,
            space_corr=spec.space_corr,
        )
        out: dict[str, TrialStats] = {}
        if want_scene:
            raw = scene_raw(y, sm, cfg.rho)
            out["scene"] = TrialStats.from_samples(raw)
            clipped = np.maximum(raw, 0.0)
            totals = clipped.sum(axis=1, keepdims=True)
            proj = np.where(totals > 0, clipped / np.where(totals > 0, totals, 1.0), 1.0 / k)
            out["scene_proj"] = TrialStats.from_samples(proj)
        if want_ratio:
            if np.any(y_ref <= 0):
                raise ValueError("reference energy hit zero")
            ratios = y / y_ref[:, None]
            out["ratio"] = TrialStats.from_samples(ratios)
            totals = ratios.sum(axis=1, keepdims=True)
            if np.any(totals <= 0):
                raise ValueError("all ratio entries nonpositive in a trial")
            out["ratio_proj"] = TrialStats.from_samples(ratios / totals)
        return out

    work = list(zip(jobs, streams))
    if threads is not None and threads > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(run_job, work))
    else:
        partials = [run_job(w) for w in work]

    merged: dict[str, TrialStats] = {}
    for part in partials:
        for key, stats in part.items():
            merged[key] = merged[key].merge(stats) if key in merged else stats
    return merged


def run_experiment(spec: ExperimentSpec, threads: int | None = None) -> list[ResultRow]:
    """Run the sweep and return the result table.

    The population and labels are drawn once per experiment (large-scale
    gains are quasi-static); fading and noise are redrawn every trial.
    Deterministic given the spec, independent of ``threads``.
    """
    root = RandomSource(spec.seed)
    pop_rng, label_rng, trial_rng = root.split(3)
    pop = spec.population.draw(pop_rng)
    labels = spec.labels.draw(pop.num_devices, label_rng)
    qbar = weighted_average(labels, pop).probs
    k = labels[0].num_classes

    points = [(s, m, snr) for (s, m) in spec.sm_pairs for snr in spec.snr_db_values]
    point_streams = trial_rng.split(len(points))

    rows: list[ResultRow] = []
    for (s, m, snr_db), stream in zip(points, point_streams):
        start = time.perf_counter()
        rho = spec.rho_value if spec.rho_rule == "fixed" else min_rho(pop)
        cfg = RoundConfig(
            num_classes=k,
            reps=s,
            antennas=m,
            rho=rho,
            noise_var=analysis.calibrate_noise(rho, k, snr_db),
            channel_model=spec.channel_model,
            use_reference_re=spec.estimator in ("ratio", "both"),
        )
        try:
            stats = _point_stats(spec, pop, labels, cfg, stream, threads)
        except Exception as exc:
            raise RuntimeError(
                f"sweep point S={s}, M={m}, snr_db={snr_db} failed: {exc}"
            ) from exc
        elapsed = time.perf_counter() - start
        bound = analysis.variance_bound(pop, labels, cfg)
        for name, st in stats.items():
            variance = st.variance
            se = st.std_error
            for c in range(k):
                has_var = st.n >= 2
                rows.append(
                    ResultRow(
                        s=s,
                        m=m,
                        snr_db=snr_db,
                        rho=rho,
                        model=spec.channel_model.value,
                        estimator=name,
                        cls=c,
                        mean=float(st.mean[c]),
                        bias=float(st.mean[c] - qbar[c]),
                        var=float(variance[c]) if has_var else None,
                        var_bound=float(bound[c]) if name == "scene" else None,
                        se=float(se[c]) if has_var else None,
                        trials=st.n,
                        seed=spec.seed,
                        wall_time=elapsed,
                    )
                )
    return rows


@dataclass(frozen=True)
class MseConstantEstimate:
    """Fitted noncoherent MSE constant: mean of Var(r_c) * S * M across sweep
    points (classes averaged within each point) and its standard error."""

    c_nc: float
    se: float
    per_point: tuple[float, ...]


def estimate_mse_constants(
    spec: ExperimentSpec, threads: int | None = None
) -> MseConstantEstimate:
    """Estimate the c in Var(r_c) ~ c / (S*M) from a sweep.

    Requires at least three distinct S*M products so flatness of the fit is
    informative about the scaling law rather than a single budget.
    """
    products = {s * m for (s, m) in spec.sm_pairs}
    if len(products) < 3:
        raise InsufficientSweep(
            f"need >= 3 distinct S*M products, got {sorted(products)}"
        )
    rows = [r for r in run_experiment(spec, threads) if r.estimator == "scene"]
    by_point: dict[tuple[int, int, float], list[float]] = {}
    for r in rows:
        if r.var is None:
            continue
        by_point.setdefault((r.s, r.m, r.snr_db), []).append(r.var * r.s * r.m)
    per_point = tuple(float(np.mean(v)) for v in by_point.values())
    c_hat = float(np.mean(per_point))
    se = float(np.std(per_point, ddof=1) / math.sqrt(len(per_point))) if len(per_point) > 1 else float("nan")
    return MseConstantEstimate(c_hat, se, per_point)
