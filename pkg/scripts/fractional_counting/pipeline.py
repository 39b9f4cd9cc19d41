"""
Pipeline coordinator for one simulated replicate and for Monte-Carlo runs.
Manages step dependencies, execution order, per-step state and logging.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Set

import numpy as np
import pandas as pd
from tqdm import tqdm

from .config import PipelineConfig
from .estimation.audit import draw_audit_sample, erroneous_indicator, locality_indicator, run_audit
from .estimation.base import CountEstimate, FractionalCounter, ParamState, theta_total
from .estimation.benchmark import BenchmarkTargets, benchmark
from .estimation.counting import count_classifier, count_fractional, count_with_theta, classify, social_total
from .estimation.initiate import InitiationResult, ThetaContext, initiate
from .persistence import (
    RunManifest, counters_frame, pd_frame, world_frame,
    write_manifest, write_model, write_table, write_tree
)
from .rolling.baselines import (
    ResidencyState, WeightState, align_residency, carry_weights, components_from_events,
    dbe_update, moves_between, residency_update, sol_scores
)
from .rolling.ebp import apply_model, roll_state
from .rolling.labels import LabelledSet, partition_labels
from .rolling.tree import TreeModel, UpdateReport, grow_initial, roll_tree, tree_counters
from .simulation.base import (
    EventLog, Locality, PersonRecord, PopulationDataset, RecordLabel, UpdateBatch, WorldTruth, address_lookup
)
from .simulation.register import CensusResult, derive_pd, simulate_census
from .simulation.world import generate_world, step_world
from .utils.rng import make_rng

LOGGER_NAME = "fractional_counting"

TABLES = ("world", "initiation", "rolling", "counts", "audit")


class PipelineStep(Enum):
    """Enumeration of pipeline steps."""
    SIMULATE = "simulate"
    INITIATE = "initiate"
    ROLL = "roll"
    COUNT = "count"
    AUDIT = "audit"


@dataclass
class StepResult:
    """Result of a pipeline step execution."""
    step: PipelineStep
    success: bool
    duration: float
    message: str
    data: Dict[str, Any] = field(default_factory=dict)
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


@dataclass
class PipelineState:
    """Current state of one replicate's execution."""
    replicate: int = 0
    current_step: Optional[PipelineStep] = None
    completed_steps: Set[PipelineStep] = field(default_factory=set)
    failed_steps: Set[PipelineStep] = field(default_factory=set)
    step_results: Dict[PipelineStep, StepResult] = field(default_factory=dict)
    start_time: Optional[float] = None
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)


class PipelineError(Exception):
    """Base exception for pipeline errors."""
    def __init__(self, message: str, step: Optional[PipelineStep] = None, recoverable: bool = False):
        super().__init__(message)
        self.step = step
        self.recoverable = recoverable


@dataclass
class EpochData:
    """Simulated world, dataset and fresh labels of one epoch."""
    world: WorldTruth
    pd: PopulationDataset
    batch: Optional[UpdateBatch] = None
    events: Optional[EventLog] = None


@dataclass
class EpochModels:
    """Models and counters in force at one epoch."""
    placement: ParamState
    erroneous: Optional[ParamState]
    counters: List[FractionalCounter]
    labels: Optional[LabelledSet] = None
    tree: Optional[TreeModel] = None
    tree_report: Optional[UpdateReport] = None
    tree_counters: Optional[List[FractionalCounter]] = None


def setup_logging(level: int = logging.INFO) -> logging.Logger:
    """Set up the package logger once."""
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(level)

    if not logger.handlers:
        handler = logging.StreamHandler()
        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )
        handler.setFormatter(formatter)
        logger.addHandler(handler)

    return logger


class CountingPipeline:
    """
    Runs one replicate of the simulation study: generate the world and its
    registers, initiate the counters at the census, roll them through the
    epochs, count the localities with every method and audit the result.
    """

    # Step dependencies - each step depends on the completion of its dependencies
    STEP_DEPENDENCIES = {
        PipelineStep.SIMULATE: set(),
        PipelineStep.INITIATE: {PipelineStep.SIMULATE},
        PipelineStep.ROLL: {PipelineStep.INITIATE},
        PipelineStep.COUNT: {PipelineStep.ROLL},
        PipelineStep.AUDIT: {PipelineStep.ROLL},
    }

    def __init__(self, config: PipelineConfig, replicate: int = 0, keep_artifacts: bool = False):
        """
        Initialize the pipeline for one replicate.

        Args:
            config: Pipeline configuration
            replicate: Replicate id; selects the random streams
            keep_artifacts: Keep models, trees and snapshots for writing
        """
        self.config = config
        self.replicate = replicate
        self.keep_artifacts = keep_artifacts
        self.seed = config.scenario.seed
        self.state = PipelineState(replicate=replicate)
        self.logger = setup_logging()
        self.artifacts: Dict[str, Any] = {}

        self.localities: List[Locality] = []
        self.epochs: List[EpochData] = []
        self.census: Optional[CensusResult] = None
        self.initiation: Optional[InitiationResult] = None
        self.models: List[EpochModels] = []

        # Step handlers
        self._step_handlers: Dict[PipelineStep, Callable] = {
            PipelineStep.SIMULATE: self._execute_simulate_step,
            PipelineStep.INITIATE: self._execute_initiate_step,
            PipelineStep.ROLL: self._execute_roll_step,
            PipelineStep.COUNT: self._execute_count_step,
            PipelineStep.AUDIT: self._execute_audit_step,
        }

    def rng(self, stream: str, epoch: int = 0) -> np.random.Generator:
        return make_rng(self.seed, self.replicate, stream, epoch)

    def run(self, steps: Optional[List[PipelineStep]] = None) -> PipelineState:
        """
        Run the requested steps and their dependencies.

        Returns:
            Final pipeline state with the result tables
        """
        if steps is None:
            steps = list(PipelineStep)

        self.state.start_time = time.time()
        for step in self._calculate_execution_order(steps):
            if step in self.state.completed_steps:
                continue
            self._execute_step(step)
        self.logger.debug(f"Replicate {self.replicate} finished in {time.time() - self.state.start_time:.2f}s")
        return self.state

    def _calculate_execution_order(self, requested_steps: List[PipelineStep]) -> List[PipelineStep]:
        """
        Calculate the correct execution order based on step dependencies.

        Args:
            requested_steps: Steps requested to be executed

        Returns:
            Steps in correct execution order
        """
        all_required_steps = set()

        def add_dependencies(step: PipelineStep):
            if step not in all_required_steps:
                all_required_steps.add(step)
                for dep in self.STEP_DEPENDENCIES[step]:
                    add_dependencies(dep)

        for step in requested_steps:
            add_dependencies(step)

        order = list(PipelineStep)
        execution_order = []
        remaining_steps = set(all_required_steps)

        while remaining_steps:
            ready_steps = [s for s in remaining_steps if self.STEP_DEPENDENCIES[s].issubset(set(execution_order))]
            if not ready_steps:
                raise PipelineError("Circular dependency detected in pipeline steps")

            # Declaration order keeps the execution order stable
            next_step = min(ready_steps, key=order.index)
            execution_order.append(next_step)
            remaining_steps.remove(next_step)

        return execution_order

    def _execute_step(self, step: PipelineStep):
        """
        Execute a single pipeline step with error handling and timing.

        Args:
            step: Step to execute
        """
        self.state.current_step = step
        self.logger.info(f"Replicate {self.replicate}: executing step {step.value}")
        start_time = time.time()

        try:
            result = self._step_handlers[step]()
            duration = time.time() - start_time
            self.state.step_results[step] = StepResult(
                step=step,
                success=True,
                duration=duration,
                message=f"Step {step.value} completed successfully",
                data=result if isinstance(result, dict) else {},
            )
            self.state.completed_steps.add(step)
            self.logger.info(f"Step {step.value} completed in {duration:.2f}s")

        except Exception as e:
            duration = time.time() - start_time
            self.state.step_results[step] = StepResult(
                step=step,
                success=False,
                duration=duration,
                message=f"Step {step.value} failed: {str(e)}",
                errors=[str(e)],
            )
            self.state.failed_steps.add(step)
            self.logger.error(f"Step {step.value} failed after {duration:.2f}s: {e}")

            if not isinstance(e, PipelineError) or not e.recoverable:
                raise

    # Step execution methods
    def _execute_simulate_step(self) -> Dict[str, Any]:
        """Generate the world, its registers and the census, then step through the epochs."""
        s = self.config.scenario
        world = generate_world(s, self.rng("world"))
        self.localities = list(world.localities)
        pd0 = derive_pd(world, s, self.rng("register"))
        self.census = simulate_census(world, pd0, s.census_link_rate, self.rng("census"),
                                      s.census_noise_cv, s.hypercube_noise_cv)
        self.epochs = [EpochData(world, self.census.pd)]

        for t in range(1, s.epochs + 1):
            previous = self.epochs[-1]
            outcome = step_world(previous.world, previous.pd, s, self.config.dynamics, self.config.survey,
                                 self.rng("dynamics", t))
            self.epochs.append(EpochData(outcome.world, outcome.pd, outcome.batch, outcome.events))

        rows = []
        for t, data in enumerate(self.epochs):
            events = data.events
            rows.append({
                "epoch": t,
                "population_size": data.world.population_size,
                "n_records": len(data.pd),
                "n_erroneous": sum(1 for r in data.pd if not _in_scope(data.world, r)),
                "n_core": sum(1 for r in data.pd if r.core),
                "births": len(events.births) if events else 0,
                "deaths": len(events.deaths) if events else 0,
                "immigrations": len(events.immigrations) if events else 0,
                "emigrations": len(events.emigrations) if events else 0,
                "moves": len(events.moves) if events else 0,
                "refreshed": len(data.batch.refreshed) if data.batch else 0,
                "surveyed": len(data.batch.survey) if data.batch else 0,
            })
        self.state.tables["world"] = pd.DataFrame(rows)

        if self.keep_artifacts:
            for t, data in enumerate(self.epochs):
                self.artifacts[f"snapshots/world_epoch{t}.csv"] = world_frame(data.world)
                self.artifacts[f"snapshots/pd_epoch{t}.csv"] = pd_frame(data.pd, self.localities)
        return {"epochs": len(self.epochs), "n_hat": self.census.n_hat, "linked": self.census.linked}

    def _execute_initiate_step(self) -> Dict[str, Any]:
        """Fit the census-year models and initiate the counters."""
        cfg = self.config.initiation
        world0 = self.epochs[0].world
        observe = erroneous_indicator(world0)
        context = ThetaContext(
            n_hat=self.census.n_hat,
            hypercube=self.census.cell_estimates,
            observe=lambda record: observe(record) > 0.5,
            rng=self.rng("theta"),
        )
        result = initiate(self.census.pd, self.localities, self.census.n_hat, self.census.locality_estimates,
                          cfg, context)
        self.initiation = result

        tree = None
        if self.config.tree.enabled:
            tree = self._grow_tree(result)

        self.models = [EpochModels(result.placement, result.erroneous, result.counters, tree=tree,
                                   tree_counters=self._tree_counters(tree, self.census.pd, result.counters))]

        report = result.benchmark
        self.state.tables["initiation"] = pd.DataFrame([{
            "n_hat": result.n_hat,
            "n_records": len(self.census.pd),
            "n_core": self.census.linked,
            "unlinked": self.census.unlinked,
            "theta_method": result.theta.method,
            "theta_total": theta_total(result.counters),
            "separation": bool(result.placement.metadata.get("separation", False)),
            "benchmark_iterations": report.iterations if report else 0,
            "benchmark_max_violation": report.max_violation if report else 0.0,
            "national_residual": report.national_residual if report else 0.0,
            "theta_scale": report.theta_scale if report else 1.0,
            "warnings": len(result.theta.warnings),
        }])

        if self.keep_artifacts:
            extra = {"benchmark": {"iterations": report.iterations, "theta_scale": report.theta_scale,
                                   "locality_residuals": report.locality_residuals}} if report else None
            self.artifacts["models/placement_epoch0.toml"] = (result.placement, extra)
            if result.erroneous is not None:
                self.artifacts["models/erroneous_epoch0.toml"] = (result.erroneous, None)
            if tree is not None:
                self.artifacts["models/tree_epoch0.toml"] = tree
            self.artifacts["counters/counters_epoch0.csv"] = counters_frame(self.census.pd, result.counters)
        return {"theta_total": theta_total(result.counters)}

    def _grow_tree(self, result: InitiationResult) -> TreeModel:
        t = self.config.tree
        s = self.config.scenario
        records: List[PersonRecord] = [r for r in self.census.pd if r.core]
        if t.target == "erroneous" and result.theta.labels is not None:
            for r, erroneous in zip(self.census.pd, result.theta.labels):
                if not r.core:
                    records.append(replace(r, label=RecordLabel(not bool(erroneous), None, 0)))
        return grow_initial(records, t.target, s.n_covariates, s.max_sol_multiplicity, t.hoeffding_delta,
                            t.min_leaf, t.grace_period, t.max_depth, t.smoothing, t.half_life, epoch=0)

    def _tree_counters(self, tree: Optional[TreeModel], records: PopulationDataset,
                       base: List[FractionalCounter]) -> Optional[List[FractionalCounter]]:
        if tree is None:
            return None
        return tree_counters(tree, records, base)

    def _execute_roll_step(self) -> Dict[str, Any]:
        """Roll models, counters and the tree through the post-census epochs."""
        r = self.config.rolling
        t_cfg = self.config.tree
        rows = []
        for t in range(1, len(self.epochs)):
            data = self.epochs[t]
            previous = self.models[-1]
            labels = partition_labels(data.pd, data.batch)
            updated = labels.updated_records(data.pd)
            options = {"tolerance": r.newton_tolerance, "max_iter": r.newton_max_iter, "epoch": t,
                       "ridge": self.config.initiation.ridge}

            placement = roll_state(r.method, previous.placement, updated, **options)
            erroneous = previous.erroneous
            if erroneous is not None:
                erroneous = roll_state(r.method, erroneous, updated, **options)

            rng = self.rng("propagate", t) if r.propagate_draws > 0 else None
            counters = apply_model(placement, data.pd, n_draws=r.propagate_draws, rng=rng)
            if erroneous is not None:
                counters = apply_model(erroneous, data.pd, base=counters, n_draws=r.propagate_draws, rng=rng)
            else:
                counters = _carry_theta(self.epochs[t - 1].pd, previous.counters, data.pd, counters)

            if r.benchmark_every and t % r.benchmark_every == 0:
                counters = self._benchmark_epoch(t, data, counters)

            tree, report = previous.tree, None
            if tree is not None:
                fresh = {rec.id for rec in updated}
                others = [rec for rec in data.pd if rec.id not in fresh]
                tree, report = roll_tree(
                    tree, updated, others, bound=t_cfg.change_bound, eta=t_cfg.change_threshold, epoch=t,
                    mode=t_cfg.mode, min_improvement=t_cfg.min_improvement,
                    error_lower_bound=t_cfg.error_lower_bound, hoeffding_delta=t_cfg.hoeffding_delta,
                    min_leaf=t_cfg.min_leaf, grace_period=t_cfg.grace_period, max_depth=t_cfg.max_depth,
                )

            self.models.append(EpochModels(placement, erroneous, counters, labels, tree, report,
                                           self._tree_counters(tree, data.pd, counters)))
            sizes = labels.sizes()
            for state in (placement, erroneous):
                if state is None:
                    continue
                row = {
                    "epoch": t,
                    "model": state.kind,
                    "method": r.method,
                    "S": sizes["S"],
                    "B": sizes["B"],
                    "A": sizes["A"],
                    "step_norm": float(state.metadata.get("step_norm", 0.0)),
                    "trace": float(np.trace(state.sigma_hat)),
                }
                if report is not None:
                    row.update({f"tree_{k}": v for k, v in report.to_dict().items()})
                rows.append(row)

            if self.keep_artifacts:
                self.artifacts[f"models/placement_epoch{t}.toml"] = (placement, None)
                if erroneous is not None:
                    self.artifacts[f"models/erroneous_epoch{t}.toml"] = (erroneous, None)
                if tree is not None:
                    self.artifacts[f"models/tree_epoch{t}.toml"] = tree
                self.artifacts[f"counters/counters_epoch{t}.csv"] = counters_frame(data.pd, counters)

        self.state.tables["rolling"] = pd.DataFrame(rows, columns=[
            "epoch", "model", "method", "S", "B", "A", "step_norm", "trace",
            "tree_delta_eps", "tree_delta_m", "tree_accepted", "tree_edits", "tree_n_train",
            "tree_n_validation", "tree_mode",
        ])
        return {"epochs_rolled": len(self.epochs) - 1}

    def _benchmark_epoch(self, t: int, data: EpochData, counters: List[FractionalCounter]) -> List[FractionalCounter]:
        """Benchmark to fresh population estimates of epoch t."""
        s = self.config.scenario
        estimate = simulate_census(data.world, data.pd, 0.0, self.rng("census", t), s.census_noise_cv)
        placed = sum((1.0 - c.theta) * c.mu.sum() for c in counters)
        expected = sum(1.0 - c.theta for c in counters)
        share = placed / expected if expected > 0 else 1.0
        targets = BenchmarkTargets(locality=estimate.locality_estimates * share, n_hat=estimate.n_hat)
        cfg = self.config.initiation
        return benchmark(counters, data.pd, self.localities, targets, cfg.benchmark_tolerance,
                         cfg.benchmark_max_iter).counters

    def _execute_count_step(self) -> Dict[str, Any]:
        """Locality counts of every method at every epoch, next to the truth."""
        r = self.config.rolling
        m = len(self.localities)
        frames = []

        residency = ResidencyState.initial([rec.id for rec in self.epochs[0].pd], r.residency_initial,
                                           r.residency_decay, r.residency_gain, r.residency_threshold)
        dbe = np.asarray(self.census.locality_estimates, dtype=float)
        weights = self._initial_weights()

        for t, data in enumerate(self.epochs):
            models = self.models[t]
            truth = data.world.true_counts()
            if t > 0:
                residency = residency_update(align_residency(residency, [rec.id for rec in self.epochs[t - 1].pd],
                                                             r.residency_initial),
                                             sol_scores(self.epochs[t - 1].pd))
                residency = align_residency(residency, [rec.id for rec in data.pd], r.residency_initial)
                dbe = dbe_update(dbe, components_from_events(data.events, m))
                weights = self._carry_weights(weights, t)

            estimates = [
                count_classifier(data.pd, models.counters, self.localities, self.config.initiation.tie_rule),
                count_fractional(data.pd, models.counters, self.localities),
                count_fractional(data.pd, models.counters, self.localities, cluster=True),
                count_with_theta(data.pd, models.counters, self.localities, self.config.initiation.displacement_rule),
                CountEstimate("dbe", dbe.copy(), np.zeros(m)),
                self._residency_count(data, models, residency),
                CountEstimate("weights", weights.counts(m), np.zeros(m)),
            ]
            if models.tree_counters is not None:
                tree_estimate = count_with_theta(data.pd, models.tree_counters, self.localities,
                                                 self.config.initiation.displacement_rule)
                tree_estimate.method = "tree"
                estimates.append(tree_estimate)

            for estimate in estimates:
                frame = estimate.to_frame()
                frame["truth"] = [truth[i] if i >= 0 else np.nan for i in frame["locality_id"]]
                frame.insert(0, "epoch", t)
                frames.append(frame)

            totals = data.world.true_totals()
            social = [social_total(data.pd, models.counters, loc) for loc in self.localities]
            frames.append(pd.DataFrame({
                "epoch": t,
                "locality_id": np.arange(m),
                "method": "social_total",
                "estimate": [v[0] for v in social],
                "variance": [v[1] for v in social],
                "truth": totals,
            }))

        self.state.tables["counts"] = pd.concat(frames, ignore_index=True)[
            ["epoch", "method", "locality_id", "estimate", "variance", "truth"]
        ]
        return {"rows": len(self.state.tables["counts"])}

    def _residency_count(self, data: EpochData, models: EpochModels, residency: ResidencyState) -> CountEstimate:
        """Residents (index at or above the threshold) counted once at their most likely address."""
        lookup = address_lookup(self.localities)
        resident = residency.as_dict()
        estimates = np.zeros(len(self.localities))
        for record, counter in zip(data.pd, models.counters):
            if resident.get(record.id, 0.0) >= residency.threshold:
                position = int(np.argmax(classify(record, counter, self.config.initiation.tie_rule)))
                estimates[lookup[record.sol_addresses[position]]] += 1
        return CountEstimate("residency", estimates, np.zeros_like(estimates))

    def _classified_localities(self, t: int) -> Dict[int, int]:
        lookup = address_lookup(self.localities)
        tie_rule = self.config.initiation.tie_rule
        return {
            record.id: lookup[record.sol_addresses[int(np.argmax(classify(record, counter, tie_rule)))]]
            for record, counter in zip(self.epochs[t].pd, self.models[t].counters)
        }

    def _initial_weights(self) -> WeightState:
        """Census weights: locality estimate over the records classified into the locality."""
        residence = self._classified_localities(0)
        sizes = np.bincount(list(residence.values()), minlength=len(self.localities)).astype(float)
        per_record = np.divide(self.census.locality_estimates, sizes, out=np.zeros_like(sizes), where=sizes > 0)
        return WeightState({pid: float(per_record[loc]) for pid, loc in residence.items()}, residence)

    def _carry_weights(self, weights: WeightState, t: int) -> WeightState:
        """Carry weights over moves; new records take their locality's mean, deregistered ones drop out."""
        m = len(self.localities)
        current = self._classified_localities(t)
        kept = {pid: loc for pid, loc in weights.residence.items() if pid in current}
        state = WeightState({pid: weights.weights[pid] for pid in kept}, kept)
        occupied = ~np.isnan(state.locality_means(m))
        # moves into a locality holding no weights keep the mover's weight
        movers = [move for move in moves_between(kept, current) if occupied[move.destination]]
        state = carry_weights(state, movers, m)
        means = state.locality_means(m)
        fallback = float(np.nanmean(means)) if np.any(~np.isnan(means)) else 1.0
        for pid, loc in current.items():
            if pid not in state.weights:
                state.weights[pid] = fallback if np.isnan(means[loc]) else float(means[loc])
                state.residence[pid] = loc
            else:
                state.residence[pid] = loc
        return state

    def _execute_audit_step(self) -> Dict[str, Any]:
        """Audit the model-based statistic of every epoch with a fresh probability sample."""
        a = self.config.audit
        rows = []
        for t, data in enumerate(self.epochs):
            counters = self.models[t].counters
            records = list(data.pd)
            rates = {int(h): v for h, v in a.stratum_rates.items()} if a.stratum_rates else None
            size = min(a.sample_size, len(records))
            if size < 2 and not rates:
                self.logger.warning(f"Epoch {t}: audit skipped, dataset too small")
                continue
            sample = draw_audit_sample(records, a.design, size, self.rng("audit", t), rates=rates)
            if a.target == "erroneous_rate":
                observe = erroneous_indicator(data.world)
                theta_star = theta_total(counters) / len(records)
                kind = "mean"
            else:
                observe = locality_indicator(data.world, a.locality)
                theta_star = float(count_with_theta(data.pd, counters, self.localities,
                                                    self.config.initiation.displacement_rule).estimates[a.locality])
                kind = "total"
            result = run_audit(a.target, theta_star, sample, [observe(rec) for rec in sample.records], a.alpha, kind)
            rows.append({
                "scenario": self.config.scenario.name,
                "epoch": t,
                "estimator": a.target,
                "theta_star": result.theta_star,
                "theta_hat": result.theta_hat,
                "variance": result.variance,
                "mse_hat": result.mse,
                "z": result.test.z,
                "p_value": result.test.p_value,
                "reject": result.test.reject,
                "degenerate": result.test.degenerate,
                "sample_size": result.sample_size,
                "design": result.design,
            })
        self.state.tables["audit"] = pd.DataFrame(rows, columns=[
            "scenario", "epoch", "estimator", "theta_star", "theta_hat", "variance", "mse_hat", "z",
            "p_value", "reject", "degenerate", "sample_size", "design",
        ])
        return {"audits": len(rows)}


def _in_scope(world: WorldTruth, record: PersonRecord) -> bool:
    person = world.person(record.id)
    return person is not None and person.alive_in_scope


def _carry_theta(previous_pd: PopulationDataset, previous: List[FractionalCounter], current_pd: PopulationDataset,
                 counters: List[FractionalCounter]) -> List[FractionalCounter]:
    """θ by record id from the previous epoch; new records start at 0."""
    theta = {rec.id: c.theta for rec, c in zip(previous_pd, previous)}
    return [c.with_theta(theta.get(rec.id, 0.0)) for rec, c in zip(current_pd, counters)]


@dataclass
class ReplicateResult:
    """Tables of one replicate plus the artifacts it kept."""
    replicate: int
    tables: Dict[str, pd.DataFrame]
    artifacts: Dict[str, Any] = field(default_factory=dict)


def run_replicate(config: PipelineConfig, replicate: int, steps: Optional[List[PipelineStep]] = None,
                  keep_artifacts: bool = False) -> ReplicateResult:
    """Run one replicate; module-level so worker processes can pickle it."""
    pipeline = CountingPipeline(config, replicate, keep_artifacts)
    state = pipeline.run(steps)
    return ReplicateResult(replicate, state.tables, pipeline.artifacts)


def _run_replicate_quietly(args) -> ReplicateResult:
    config, replicate, steps, keep = args
    setup_logging(logging.WARNING)
    return run_replicate(config, replicate, steps, keep)


def run_replicates(config: PipelineConfig, steps: Optional[List[PipelineStep]] = None,
                   replicates: Optional[int] = None, jobs: Optional[int] = None,
                   progress: bool = True) -> List[ReplicateResult]:
    """
    Run Monte-Carlo replicates, in parallel with ``jobs > 1``.

    Results come back in replicate order whatever the number of jobs.
    Artifacts are kept for replicate 0 only.
    """
    n = config.output.replicates if replicates is None else replicates
    workers = config.output.jobs if jobs is None else jobs
    keep = config.output.write_snapshots
    tasks = [(config, i, steps, keep and i == 0) for i in range(n)]

    if workers <= 1 or n <= 1:
        results = []
        for task in tqdm(tasks, desc="replicates", disable=not progress or n <= 1):
            results.append(run_replicate(*task))
        return results

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(tqdm(pool.map(_run_replicate_quietly, tasks), total=n, desc="replicates", disable=not progress))


def merge_tables(results: List[ReplicateResult]) -> Dict[str, pd.DataFrame]:
    """Concatenate per-replicate tables in replicate order with a leading replicate column."""
    merged: Dict[str, pd.DataFrame] = {}
    for name in TABLES:
        frames = []
        for result in sorted(results, key=lambda r: r.replicate):
            if name in result.tables:
                frame = result.tables[name].copy()
                frame.insert(0, "replicate", result.replicate)
                frames.append(frame)
        if frames:
            merged[name] = pd.concat(frames, ignore_index=True)
    return merged


def write_outputs(config: PipelineConfig, results: List[ReplicateResult], out_dir: Path,
                  steps: List[PipelineStep], version: str) -> RunManifest:
    """Write merged tables, kept artifacts and the manifest."""
    out_dir = Path(out_dir)
    config_hash = config.config_hash()
    outputs: List[str] = []
    for name, frame in merge_tables(results).items():
        write_table(frame, out_dir / f"{name}.csv", config_hash)
        outputs.append(f"{name}.csv")

    for result in results:
        for relative, artifact in sorted(result.artifacts.items()):
            path = out_dir / relative
            if isinstance(artifact, pd.DataFrame):
                write_table(artifact, path, config_hash)
            elif isinstance(artifact, TreeModel):
                write_tree(artifact, path, config_hash)
            else:
                state, extra = artifact
                write_model(state, path, config_hash, extra)
            outputs.append(relative)

    manifest = RunManifest(
        scenario=config.scenario.name,
        config_hash=config_hash,
        seed=config.scenario.seed,
        replicates=len(results),
        versions={"fractional_counting": version},
        outputs=outputs,
        steps=[s.value for s in steps],
    )
    write_manifest(manifest, out_dir)
    return manifest
