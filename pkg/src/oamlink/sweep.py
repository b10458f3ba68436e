"""Parameter sweeps, beam-waist optimization, mode-set ranking, and method benchmarks.

Drives the lower modules over grids of one link parameter at a time,
searches for the BER-minimizing beam waist with a bracketed golden-section
routine, orders candidate mode sets by averaged BER under an equal total
power budget, and times the crosstalk evaluators against the reference
integral and the Monte Carlo validator.
"""

from __future__ import annotations

import math
import statistics
import time
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from oamlink.beam import LinkGeometry, ModeSet, PointingState
from oamlink.ber import (
    PointingStats,
    average_ber,
    conditional_ber,
    grouped_channel_vectors,
)
from oamlink.crosstalk import (
    ApproximationWarning,
    Method,
    QuadratureConvergenceWarning,
    ReceiverConfig,
    crosstalk,
    crosstalk_matrix,
)
from oamlink.montecarlo import TrialConfig, simulate_ber

GOLDEN_RATIO_CONJUGATE = (math.sqrt(5.0) - 1.0) / 2.0

# Coarse scan used to seed the golden-section bracket.
PRE_GRID_POINTS = 8

QUANTITIES = ("crosstalk", "conditional-ber", "averaged-ber", "mc-ber")


class SweepAxis(str, Enum):
    """Link parameter varied along the sweep grid."""

    W0 = "w0"
    R_CH = "r_ch"
    SIGMA_THETA = "sigma_theta"
    Z = "Z"

    @classmethod
    def parse(cls, name: "SweepAxis | str") -> "SweepAxis":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower()
        for axis in cls:
            if axis.value.lower() == key:
                return axis
        valid = ", ".join(a.value for a in cls)
        raise ValueError(f"unknown sweep axis {name!r}; expected one of: {valid}")


@dataclass(frozen=True)
class Scenario:
    """Complete link configuration a sweep varies one parameter of.

    ``r_ch`` is the fixed pointing offset used by the per-offset quantities
    (crosstalk matrix, conditional BER); ``sigma_theta`` feeds the Rayleigh
    average and the Monte Carlo draw. Both are kept because a single sweep
    may request offset-conditioned and averaged quantities side by side.
    """

    geom: LinkGeometry
    rx: ReceiverConfig
    modes: ModeSet
    sigma_theta: float
    r_ch: float = 0.0
    quad_order: int = 64
    trials: int = 100_000
    seed: int = 0
    allow_degraded: bool = False

    def __post_init__(self) -> None:
        if not (self.sigma_theta > 0 and math.isfinite(self.sigma_theta)):
            raise ValueError(f"sigma_theta must be positive, got {self.sigma_theta!r}")
        if not (self.r_ch >= 0 and math.isfinite(self.r_ch)):
            raise ValueError(f"r_ch must be >= 0, got {self.r_ch!r}")

    def pointing_stats(self) -> PointingStats:
        """Jitter statistics tied to the current link distance."""
        return PointingStats(self.sigma_theta, self.geom.distance)

    def with_axis(self, axis: "SweepAxis | str", value: float) -> "Scenario":
        """Copy of this scenario with one swept parameter replaced."""
        axis = SweepAxis.parse(axis)
        value = float(value)
        if axis is SweepAxis.W0:
            return replace(self, geom=replace(self.geom, waist=value))
        if axis is SweepAxis.Z:
            return replace(self, geom=replace(self.geom, distance=value))
        if axis is SweepAxis.R_CH:
            return replace(self, r_ch=value)
        return replace(self, sigma_theta=value)


@dataclass(frozen=True)
class SweepSpec:
    """One-axis sweep request: grid, fixed scenario, methods, quantities."""

    axis: SweepAxis
    grid: tuple[float, ...]
    fixed: Scenario
    methods: tuple[Method, ...]
    quantities: tuple[str, ...] = ("averaged-ber",)

    def __init__(
        self,
        axis: "SweepAxis | str",
        grid: Sequence[float],
        fixed: Scenario,
        methods: Sequence["Method | str"],
        quantities: Sequence[str] = ("averaged-ber",),
    ) -> None:
        axis = SweepAxis.parse(axis)
        grid_t = tuple(float(g) for g in grid)
        if len(grid_t) < 1:
            raise ValueError("sweep grid must contain at least one point")
        if any(not math.isfinite(g) for g in grid_t):
            raise ValueError(f"sweep grid must be finite, got {grid_t}")
        if any(b <= a for a, b in zip(grid_t, grid_t[1:])):
            raise ValueError(f"sweep grid must be strictly increasing, got {grid_t}")
        floor = 0.0 if axis is SweepAxis.R_CH else None
        if floor is not None:
            if any(g < floor for g in grid_t):
                raise ValueError(f"{axis.value} grid values must be >= {floor}")
        elif grid_t[0] <= 0:
            raise ValueError(f"{axis.value} grid values must be positive")
        methods_t = tuple(Method.parse(m) for m in methods)
        if not methods_t:
            raise ValueError("need at least one crosstalk method")
        if len(set(methods_t)) != len(methods_t):
            raise ValueError(f"duplicate methods in {[m.value for m in methods_t]}")
        quantities_t = tuple(str(q) for q in quantities)
        unknown = [q for q in quantities_t if q not in QUANTITIES]
        if unknown:
            raise ValueError(
                f"unknown quantities {unknown}; expected a subset of {QUANTITIES}"
            )
        if not quantities_t:
            raise ValueError("need at least one output quantity")
        if len(set(quantities_t)) != len(quantities_t):
            raise ValueError(f"duplicate quantities in {quantities_t}")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "grid", grid_t)
        object.__setattr__(self, "fixed", fixed)
        object.__setattr__(self, "methods", methods_t)
        object.__setattr__(self, "quantities", quantities_t)


@dataclass(frozen=True)
class SweepRow:
    """One evaluated cell of the sweep table.

    ``quantity`` names the requested output; the crosstalk quantity expands
    to one row per (tx mode, filter mode) pair, labelled
    ``C[ell_n->ell_j]``. ``ci95`` is populated only for Monte Carlo rows.
    ``status`` is "ok", or the collected warning/error text for this cell;
    failed cells carry value NaN instead of aborting the sweep.
    """

    axis: str
    axis_value: float
    method: str
    quantity: str
    value: float
    ci95: float = math.nan
    status: str = "ok"


def mode_set_label(modes: ModeSet) -> str:
    """Canonical short name: modes comma-joined, streams separated by '|'."""
    return "|".join(",".join(str(m) for m in group) for group in modes.streams)


def _quantity_rows(
    scen: Scenario,
    method: Method,
    quantity: str,
    axis: SweepAxis,
    axis_value: float,
) -> list[SweepRow]:
    """Evaluate one (grid point, method, quantity) cell into rows."""
    payload: list[tuple[str, float, float]] = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            if quantity == "crosstalk":
                point = PointingState.from_radius(scen.r_ch)
                matrix = crosstalk_matrix(scen.geom, scen.rx, scen.modes, point, method)
                for j, ell_j in enumerate(scen.modes.filter_modes):
                    for i, ell_n in enumerate(scen.modes.tx_modes):
                        payload.append(
                            (
                                f"C[{ell_n}->{ell_j}]",
                                float(matrix.values[j, i]),
                                math.nan,
                            )
                        )
            elif quantity == "conditional-ber":
                point = PointingState.from_radius(scen.r_ch)
                matrix = crosstalk_matrix(scen.geom, scen.rx, scen.modes, point, method)
                h = grouped_channel_vectors(matrix, scen.modes.streams)
                payload.append(
                    (quantity, conditional_ber(h, scen.rx.noise_level), math.nan)
                )
            elif quantity == "averaged-ber":
                res = average_ber(
                    scen.geom,
                    scen.rx,
                    scen.modes,
                    scen.pointing_stats(),
                    method,
                    scen.quad_order,
                )
                payload.append((quantity, res.averaged, math.nan))
            else:
                cfg = TrialConfig(
                    trials=scen.trials,
                    seed=scen.seed,
                    crosstalk_method=method,
                    allow_degraded=scen.allow_degraded,
                )
                out = simulate_ber(
                    scen.geom, scen.rx, scen.modes, scen.pointing_stats(), cfg
                )
                payload.append((quantity, out.ber_hat, out.ci95_halfwidth))
        except Exception as exc:
            return [
                SweepRow(
                    axis=axis.value,
                    axis_value=axis_value,
                    method=method.value,
                    quantity=quantity,
                    value=math.nan,
                    status=f"error: {type(exc).__name__}: {exc}",
                )
            ]
    notes = "; ".join(str(w.message) for w in caught)
    status = f"warning: {notes}" if notes else "ok"
    return [
        SweepRow(
            axis=axis.value,
            axis_value=axis_value,
            method=method.value,
            quantity=name,
            value=value,
            ci95=ci,
            status=status,
        )
        for name, value, ci in payload
    ]


def run_sweep(spec: SweepSpec) -> list[SweepRow]:
    """Evaluate the requested quantities over the grid.

    Row order is deterministic: grid-major, then method, then quantity (the
    crosstalk quantity expands in coefficient-grid layout, filter-major).
    Evaluator warnings and errors are folded into each row's status column;
    no single bad point aborts the sweep. Cells are evaluated sequentially
    so the per-row warning capture, which touches the interpreter-wide
    warning state, stays race-free; parallelism lives inside the Monte
    Carlo and array layers.
    """
    rows: list[SweepRow] = []
    for value in spec.grid:
        scen = spec.fixed.with_axis(spec.axis, value)
        for method in spec.methods:
            for quantity in spec.quantities:
                rows.extend(_quantity_rows(scen, method, quantity, spec.axis, value))
    return rows


# ---------------------------------------------------------------------------
# beam-waist optimization


@dataclass(frozen=True)
class OptimizeResult:
    """Minimizer with its bracketing certificate.

    ``bracket`` holds three evaluated (w0, ber) points in ascending w0 with
    the middle value no larger than the sides; when ``boundary`` is set the
    argmin sat on an edge of the search interval and the bracket shows the
    edge triple instead of an interior certificate.
    """

    w0_opt: float
    ber_opt: float
    bracket: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    boundary: bool
    evaluations: int
    method: Method
    tol: float

    def __post_init__(self) -> None:
        xs = [p[0] for p in self.bracket]
        if not (xs[0] < xs[1] < xs[2]):
            raise ValueError(f"bracket abscissae must be ascending, got {xs}")
        if not self.boundary:
            lo, mid, hi = (p[1] for p in self.bracket)
            if not (mid <= lo and mid <= hi):
                raise ValueError(
                    f"interior bracket must have the middle value lowest, got "
                    f"{(lo, mid, hi)}"
                )


def optimize_w0(
    scenario: Scenario,
    bounds: tuple[float, float],
    tol: float,
    method: "Method | str" = Method.RADIAL_SUM,
    objective: Optional[Callable[[float], float]] = None,
) -> OptimizeResult:
    """Golden-section search for the beam waist minimizing averaged BER.

    A coarse pre-grid of PRE_GRID_POINTS equally spaced waists seeds the
    bracket; golden-section then narrows the bracketing interval below
    ``tol``. When the pre-grid argmin falls on an interval edge the result
    is flagged as a boundary minimum and no interior certificate is
    fabricated. ``objective`` replaces the averaged-BER objective (same
    signature: waist in meters to scalar), mainly for optimizer sanity
    tests on closed-form functions.
    """
    w_lo, w_hi = float(bounds[0]), float(bounds[1])
    if not (math.isfinite(w_lo) and math.isfinite(w_hi) and w_lo < w_hi):
        raise ValueError(f"need w_lo < w_hi, got {bounds!r}")
    if objective is None and w_lo <= 0:
        raise ValueError(f"beam waist bounds must be positive, got {bounds!r}")
    if not (0 < tol < (w_hi - w_lo)):
        raise ValueError(
            f"tol must be in (0, {w_hi - w_lo:g}) for these bounds, got {tol!r}"
        )
    method = Method.parse(method)
    if objective is None:
        def objective_fn(w0: float) -> float:
            geom = replace(scenario.geom, waist=w0)
            res = average_ber(
                geom,
                scenario.rx,
                scenario.modes,
                PointingStats(scenario.sigma_theta, geom.distance),
                method,
                scenario.quad_order,
            )
            return res.averaged
    else:
        objective_fn = objective

    memo: dict[float, float] = {}

    def evaluate(x: float) -> float:
        if x not in memo:
            y = float(objective_fn(x))
            if not math.isfinite(y):
                raise ValueError(f"objective returned non-finite value {y!r} at {x!r}")
            memo[x] = y
        return memo[x]

    pre = np.linspace(w_lo, w_hi, PRE_GRID_POINTS)
    pre_vals = [evaluate(float(x)) for x in pre]
    k = int(np.argmin(pre_vals))

    if k == 0 or k == PRE_GRID_POINTS - 1:
        edge = slice(0, 3) if k == 0 else slice(PRE_GRID_POINTS - 3, PRE_GRID_POINTS)
        certificate = tuple(
            (float(x), float(v)) for x, v in zip(pre[edge], pre_vals[edge])
        )
        return OptimizeResult(
            w0_opt=float(pre[k]),
            ber_opt=pre_vals[k],
            bracket=certificate,
            boundary=True,
            evaluations=len(memo),
            method=method,
            tol=float(tol),
        )

    a, b = float(pre[k - 1]), float(pre[k + 1])
    c = b - GOLDEN_RATIO_CONJUGATE * (b - a)
    d = a + GOLDEN_RATIO_CONJUGATE * (b - a)
    while (b - a) > tol:
        if evaluate(c) <= evaluate(d):
            b, d = d, c
            c = b - GOLDEN_RATIO_CONJUGATE * (b - a)
        else:
            a, c = c, d
            d = a + GOLDEN_RATIO_CONJUGATE * (b - a)

    # Certify the best evaluated point with its nearest evaluated neighbors;
    # the memo argmin rather than the final interval midpoint keeps the
    # certificate on points that were actually computed.
    ordered = sorted(memo)
    x_star = min(ordered, key=lambda x: (memo[x], x))
    i = ordered.index(x_star)
    boundary = i == 0 or i == len(ordered) - 1
    if boundary:
        triple = ordered[:3] if i == 0 else ordered[-3:]
    else:
        triple = ordered[i - 1 : i + 2]
    certificate = tuple((x, memo[x]) for x in triple)
    return OptimizeResult(
        w0_opt=x_star,
        ber_opt=memo[x_star],
        bracket=certificate,
        boundary=boundary,
        evaluations=len(memo),
        method=method,
        tol=float(tol),
    )


# ---------------------------------------------------------------------------
# mode-set ranking


@dataclass(frozen=True)
class RankedModeSet:
    """One candidate's position in the averaged-BER ordering."""

    rank: int
    label: str
    modes: ModeSet
    ber: float
    method: Method
    converged: bool


def rank_mode_sets(
    candidates: Sequence[ModeSet],
    scenario: Scenario,
    method: "Method | str" = Method.RADIAL_SUM,
) -> tuple[RankedModeSet, ...]:
    """Order candidate mode sets by Rayleigh-averaged BER, best first.

    Every candidate runs under the same scenario and the same total power
    budget: stream amplitudes carry the 1/sqrt(modes-per-stream) split and
    the coefficient normalization counts streams, so grouped and plain sets
    are directly comparable. Ties sort by label, which together with the
    deterministic evaluation makes the ranking independent of the order the
    candidates were passed in.
    """
    if not candidates:
        raise ValueError("need at least one candidate mode set")
    method = Method.parse(method)
    labels = [mode_set_label(m) for m in candidates]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate candidate mode sets: {sorted(labels)}")
    stats = scenario.pointing_stats()
    scored = []
    for label, modes in zip(labels, candidates):
        res = average_ber(
            scenario.geom, scenario.rx, modes, stats, method, scenario.quad_order
        )
        scored.append((res.averaged, label, modes, res.quad_converged))
    scored.sort(key=lambda item: (item[0], item[1]))
    return tuple(
        RankedModeSet(
            rank=i + 1,
            label=label,
            modes=modes,
            ber=ber,
            method=method,
            converged=converged,
        )
        for i, (ber, label, modes, converged) in enumerate(scored)
    )


# ---------------------------------------------------------------------------
# method benchmarks


@dataclass(frozen=True)
class BenchReport:
    """Median wall times per method with derived speedup ratios.

    ``method_times`` maps method name to the median seconds one full pass
    over the benchmark grid took; ``mc_time`` and ``analytic_ber_time``
    compare one Monte Carlo estimate against one quadrature average of the
    same quantity. Ratios are computed from the stored times, so they can
    not disagree with them.
    """

    method_times: Mapping[str, float]
    mc_time: float
    analytic_ber_time: float
    repetitions: int
    grid_size: int
    mc_trials: int

    def __post_init__(self) -> None:
        if Method.EXACT2D.value not in self.method_times:
            raise ValueError("benchmark must include the reference method exact2d")
        for name, t in self.method_times.items():
            if not (t > 0 and math.isfinite(t)):
                raise ValueError(f"non-positive wall time {t!r} for method {name}")
        for name in ("mc_time", "analytic_ber_time"):
            t = getattr(self, name)
            if not (t > 0 and math.isfinite(t)):
                raise ValueError(f"non-positive wall time {t!r} for {name}")
        if self.repetitions < 3:
            raise ValueError(f"repetitions must be >= 3, got {self.repetitions}")
        if self.grid_size < 1:
            raise ValueError(f"grid_size must be >= 1, got {self.grid_size}")

    @property
    def speedup_vs_exact(self) -> dict[str, float]:
        """exact2d time divided by each method's time (higher is faster)."""
        reference = self.method_times[Method.EXACT2D.value]
        return {
            name: reference / t
            for name, t in self.method_times.items()
            if name != Method.EXACT2D.value
        }

    @property
    def mc_over_analytic(self) -> float:
        """Monte Carlo wall time divided by the analytic average's."""
        return self.mc_time / self.analytic_ber_time


def _median_wall_time(fn: Callable[[], object], repetitions: int) -> float:
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_methods(
    scenario: Scenario,
    grid: Sequence[tuple[float, tuple[int, int]]],
    repetitions: int = 5,
    methods: Sequence["Method | str"] = (
        Method.EXACT2D,
        Method.BESSEL_INTEGRAL,
        Method.BESSEL_SUM,
    ),
    mc_trials: int = 1_000_000,
) -> BenchReport:
    """Time each evaluator over one shared coefficient grid.

    ``grid`` lists (offset radius, (tx order, filter order)) evaluation
    points; every method runs the identical list and the median of
    ``repetitions`` passes is kept. The Monte Carlo versus analytic-average
    comparison runs the estimator at ``mc_trials`` trials pinned to a
    single worker against one quadrature average with the same crosstalk
    method. Accuracy warnings are suppressed inside the timed region so
    console I/O does not leak into the wall times; the benchmark grid
    should sit inside every method's validity range regardless.
    """
    if repetitions < 3:
        raise ValueError(f"repetitions must be >= 3, got {repetitions}")
    entries = [(float(r), (int(pair[0]), int(pair[1]))) for r, pair in grid]
    if not entries:
        raise ValueError("benchmark grid must not be empty")
    if any(r <= 0 for r, _ in entries):
        raise ValueError("benchmark offsets must be positive")
    parsed = [Method.parse(m) for m in methods]
    if Method.EXACT2D not in parsed:
        raise ValueError("benchmark must include the reference method exact2d")
    n_m = scenario.modes.n_streams

    method_times: dict[str, float] = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ApproximationWarning)
        warnings.simplefilter("ignore", QuadratureConvergenceWarning)
        for method in parsed:
            def one_pass(method: Method = method) -> None:
                for r, (ell_n, ell_j) in entries:
                    crosstalk(
                        scenario.geom,
                        scenario.rx,
                        n_m,
                        ell_n,
                        ell_j,
                        PointingState.from_radius(r),
                        method,
                    )
            method_times[method.value] = _median_wall_time(one_pass, repetitions)

        stats = scenario.pointing_stats()
        cfg = TrialConfig(
            trials=mc_trials,
            seed=scenario.seed,
            crosstalk_method=Method.BESSEL_SUM,
            allow_degraded=True,
        )
        mc_time = _median_wall_time(
            lambda: simulate_ber(
                scenario.geom, scenario.rx, scenario.modes, stats, cfg, max_workers=1
            ),
            repetitions,
        )
        analytic_time = _median_wall_time(
            lambda: average_ber(
                scenario.geom,
                scenario.rx,
                scenario.modes,
                stats,
                Method.BESSEL_SUM,
                scenario.quad_order,
            ),
            repetitions,
        )

    return BenchReport(
        method_times=method_times,
        mc_time=mc_time,
        analytic_ber_time=analytic_time,
        repetitions=int(repetitions),
        grid_size=len(entries),
        mc_trials=int(mc_trials),
    )
