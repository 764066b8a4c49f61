"""
Прогон сценария: цикл наблюдение -> режим -> решение -> шаг -> награда

Здесь же сбор имитационного датасета с фильтром по наградам и
эпохи приоритетной выборки для дообучения.
"""
import asyncio
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from src.agents.reviewer_agent import HistoricalCase
from src.bench.scenario import DecisionRecord, RunManifest, build_policy, load_run_inputs
from src.core.observation import TrafficObservation, observe
from src.core.traffic_sim import MetricsReport, StepOutcome, TrafficSimulator
from src.core.training import (
    DatasetKind,
    ExperienceBuffer,
    FilterParams,
    FineTuneRecord,
    ReasoningTrajectory,
    append_to_buffers,
    compute_reward,
    export_dataset,
    filter_trajectory,
    sample_refinement_batch,
    sampling_probabilities,
    save_buffers,
)
from src.utils.config import settings
from src.utils.logger import (
    attach_run_log,
    bench_logger,
    detach_run_log,
    log_performance,
    run_context,
    set_step,
)

METRICS_FILE = "metrics.json"
DECISIONS_FILE = "decisions.jsonl"
BUFFERS_FILE = "buffers.jsonl"
CASES_FILE = "cases.jsonl"
OUTCOMES_FILE = "outcomes.jsonl"
IMITATION_FILE = "imitation.jsonl"
REFINEMENT_FILE = "refinement.jsonl"
LATENCY_FILE = "latency.json"


class DecisionTraceRow(BaseModel):
    """Строка decisions.jsonl"""
    step: int
    intersection_id: str
    mode: str
    phase: int
    fallback_used: bool
    prompt_hash: str = ""
    response_hash: str = ""
    reward: float


class RunSummary(BaseModel):
    """Содержимое metrics.json"""
    scenario: str
    policy: str
    seed: int
    intersections: int
    decision_interval: int
    metrics: MetricsReport


@dataclass
class _OpenInterval:
    record: DecisionRecord
    step: int
    ql_t: int


@dataclass
class _OpenCase:
    step: int
    record: DecisionRecord


@dataclass
class RunResult:
    """Результат прогона в памяти"""
    summary: RunSummary
    trace: List[DecisionTraceRow] = field(default_factory=list)
    trajectories: List[ReasoningTrajectory] = field(default_factory=list)
    cases: List[HistoricalCase] = field(default_factory=list)
    outcomes: List[StepOutcome] = field(default_factory=list)
    latency: Dict[str, Dict[str, float]] = field(default_factory=dict)

    @property
    def metrics(self) -> MetricsReport:
        return self.summary.metrics

    def rewards_by_intersection(self) -> Dict[str, List[float]]:
        rewards: Dict[str, List[float]] = {}
        for row in self.trace:
            rewards.setdefault(row.intersection_id, []).append(row.reward)
        return rewards

    def buffers(self) -> Dict[str, ExperienceBuffer]:
        return append_to_buffers({}, self.trajectories)


def _close_cases(
    sim: TrafficSimulator,
    open_cases: Dict[str, _OpenCase],
    observations: Dict[str, TrafficObservation]
) -> List[HistoricalCase]:
    """Завершить открытые случаи состоянием на текущем шаге"""
    if not open_cases:
        return []
    emergencies = {ev.vehicle_id: ev for ev in sim.emergency_states()}
    closed = []
    for iid in sorted(open_cases):
        case = open_cases[iid]
        obs_next = observations[iid] if iid in observations else observe(sim, iid)
        closed.append(HistoricalCase(
            intersection_id=iid,
            step=case.step,
            obs_t=case.record.obs,
            ev_t=case.record.ev,
            action=case.record.phase,
            obs_next=obs_next,
            ev_next=emergencies.get(case.record.ev.vehicle_id),
        ))
    open_cases.clear()
    return closed


async def simulate(manifest: RunManifest, seed_offset: int = 0) -> RunResult:
    """
    Выполнить один прогон сценария

    Args:
        manifest: Манифест прогона
        seed_offset: Сдвиг seed (эпохи дообучения)

    Returns:
        RunResult с метриками, трассой решений, траекториями, случаями
        и длительностями операций
    """
    with run_context(
        run=manifest.label, scenario=Path(manifest.scenario_path).name, seed=manifest.seed + seed_offset
    ) as stats:
        result = await _simulate(manifest, seed_offset)
    result.latency = stats.summary()
    return result


async def _simulate(manifest: RunManifest, seed_offset: int) -> RunResult:
    scenario, network = load_run_inputs(manifest)
    config = manifest.simulation_config(scenario, seed_offset)
    sim = TrafficSimulator(network, config)
    policy = build_policy(manifest, seed_offset)

    result_trace: List[DecisionTraceRow] = []
    trajectories: List[ReasoningTrajectory] = []
    cases: List[HistoricalCase] = []
    outcomes: List[StepOutcome] = []
    intervals: List[_OpenInterval] = []
    open_cases: Dict[str, _OpenCase] = {}

    start_time = time.time()
    bench_logger.info(
        f"Run started | Scenario: {scenario.name} | Policy: {manifest.label} | "
        f"Seed: {config.seed} | Intersections: {len(sim.intersection_ids)}"
    )

    try:
        while not sim.finished:
            phases = None
            if sim.is_decision_point():
                set_step(sim.step_index)
                decision_start = time.time()
                records = await policy.decide(sim)
                log_performance("decision_point", time.time() - decision_start)
                observations = {r.intersection_id: r.obs for r in records if r.obs is not None}
                cases.extend(_close_cases(sim, open_cases, observations))

                phases = {r.intersection_id: r.phase for r in records}
                for record in records:
                    intervals.append(_OpenInterval(record, sim.step_index, sim.queue_length(record.intersection_id)))
                    if record.ev is not None and record.obs is not None and record.ev.lane in record.obs.lanes:
                        open_cases[record.intersection_id] = _OpenCase(sim.step_index, record)

            outcome = sim.step(phases)
            if manifest.capture_outcomes:
                outcomes.append(outcome)

            if intervals and (sim.is_decision_point() or sim.finished):
                for interval in intervals:
                    row = _close_interval(interval, outcome)
                    result_trace.append(row)
                    signature = network.intersection(row.intersection_id).type_signature
                    trajectory = _trajectory(interval, row.reward, signature)
                    if trajectory is not None:
                        trajectories.append(trajectory)
                intervals = []

        cases.extend(_close_cases(sim, open_cases, {}))
    finally:
        await policy.close()

    summary = RunSummary(
        scenario=scenario.name,
        policy=manifest.label,
        seed=config.seed,
        intersections=len(sim.intersection_ids),
        decision_interval=config.decision_interval,
        metrics=sim.metrics(),
    )
    bench_logger.info(
        f"Run finished in {time.time() - start_time:.1f}s | Decisions: {len(result_trace)} | "
        f"Trajectories: {len(trajectories)} | Cases: {len(cases)} | "
        f"Fallbacks: {sum(1 for r in result_trace if r.fallback_used)}"
    )
    return RunResult(summary, result_trace, trajectories, cases, outcomes)


def _close_interval(interval: _OpenInterval, outcome: StepOutcome) -> DecisionTraceRow:
    iid = interval.record.intersection_id
    reward = compute_reward(
        interval.ql_t, outcome.queue_length[iid], outcome.emergency_waiting.get(iid, 0.0)
    )
    agent = interval.record.agent
    return DecisionTraceRow(
        step=interval.step,
        intersection_id=iid,
        mode=interval.record.mode,
        phase=interval.record.phase,
        fallback_used=interval.record.fallback_used,
        prompt_hash=agent.prompt_hash if agent else "",
        response_hash=agent.response_hash if agent else "",
        reward=reward,
    )


def _trajectory(interval: _OpenInterval, reward: float, signature: str) -> Optional[ReasoningTrajectory]:
    """Траектория только для разобранного ответа агента"""
    agent = interval.record.agent
    if agent is None or agent.fallback_used:
        return None
    return ReasoningTrajectory(
        prompt=agent.prompt,
        response=agent.response,
        reward=reward,
        type_signature=signature,
        step=interval.step,
        intersection_id=agent.intersection_id,
        mode=agent.mode.value,
    )


def _write_jsonl(path: Path, lines: List[str]) -> Path:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def write_artifacts(result: RunResult, output_dir: Path) -> Path:
    """Записать metrics.json и журналы прогона"""
    output_dir.mkdir(parents=True, exist_ok=True)
    (output_dir / METRICS_FILE).write_text(result.summary.model_dump_json(indent=2) + "\n", encoding="utf-8")
    _write_jsonl(output_dir / DECISIONS_FILE, [row.model_dump_json() for row in result.trace])
    _write_jsonl(output_dir / CASES_FILE, [case.model_dump_json() for case in result.cases])
    save_buffers(result.buffers(), output_dir / BUFFERS_FILE)
    # длительности не детерминированы, поэтому отдельно от metrics.json
    (output_dir / LATENCY_FILE).write_text(json.dumps(result.latency, indent=2) + "\n", encoding="utf-8")
    if result.outcomes:
        _write_jsonl(
            output_dir / OUTCOMES_FILE,
            [json.dumps(outcome.to_dict(), sort_keys=True) for outcome in result.outcomes],
        )
    bench_logger.info(f"Run artifacts written to {output_dir}")
    return output_dir / METRICS_FILE


async def run(manifest: RunManifest) -> RunResult:
    """Прогон с записью артефактов и run.log в manifest.output_dir"""
    handler = attach_run_log(manifest.output_dir)
    try:
        result = await simulate(manifest)
        write_artifacts(result, Path(manifest.output_dir))
    finally:
        detach_run_log(handler)
    return result


def run_blocking(manifest: RunManifest) -> RunSummary:
    """Синхронная обертка для пула процессов"""
    return asyncio.run(run(manifest)).summary


def select_imitation(
    result: RunResult,
    params: Optional[FilterParams]
) -> Tuple[List[ReasoningTrajectory], Dict[str, int]]:
    """
    Отобрать траектории по сумме наград окна t_re решений перекрестка

    Окно начинается с самого решения. Траектории с неполным окном в конце
    прогона отбрасываются. params=None или η=−∞ отключают фильтр.

    Returns:
        (оставленные траектории, статистика kept/rejected/truncated)
    """
    stats = {"kept": 0, "rejected": 0, "truncated": 0}
    if params is None or (math.isinf(params.eta) and params.eta < 0):
        stats["kept"] = len(result.trajectories)
        return list(result.trajectories), stats

    rewards = result.rewards_by_intersection()
    positions: Dict[Tuple[str, int], int] = {}
    counters: Dict[str, int] = {}
    for row in result.trace:
        positions[(row.intersection_id, row.step)] = counters.get(row.intersection_id, 0)
        counters[row.intersection_id] = positions[(row.intersection_id, row.step)] + 1

    kept = []
    for trajectory in result.trajectories:
        start = positions[(trajectory.intersection_id, trajectory.step)]
        window = rewards[trajectory.intersection_id][start:start + params.t_re]
        if len(window) < params.t_re:
            stats["truncated"] += 1
        elif filter_trajectory(window, params):
            stats["kept"] += 1
            kept.append(trajectory)
        else:
            stats["rejected"] += 1
    return kept, stats


def _records(trajectories: List[ReasoningTrajectory]) -> List[FineTuneRecord]:
    return [FineTuneRecord(prompt=t.prompt, response=t.response, weight=t.reward) for t in trajectories]


def _export_or_empty(
    trajectories: List[ReasoningTrajectory],
    path: Path,
    kind: DatasetKind,
    clamp_negative: bool = False
) -> Path:
    if not trajectories:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("", encoding="utf-8")
        bench_logger.warning(f"No {kind.value} records to export, wrote empty {path}")
        return path
    return export_dataset(_records(trajectories), path, kind, clamp_negative)


async def collect_imitation(manifest: RunManifest, params: Optional[FilterParams]) -> Tuple[Path, Dict[str, int]]:
    """
    Прогон + отбор траекторий в imitation.jsonl (вес 1.0)

    Args:
        manifest: Манифест прогона
        params: Параметры фильтра; None отключает фильтр

    Returns:
        (путь к датасету, статистика фильтра)
    """
    result = await run(manifest)
    kept, stats = select_imitation(result, params)
    bench_logger.info(
        f"Imitation filter | Trajectories: {len(result.trajectories)} | Kept: {stats['kept']} | "
        f"Rejected: {stats['rejected']} | Truncated: {stats['truncated']}"
    )
    path = _export_or_empty(kept, Path(manifest.output_dir) / IMITATION_FILE, DatasetKind.IMITATION)
    return path, stats


async def export_refinement(
    manifest: RunManifest,
    epochs: int,
    batch_size: int,
    epsilon: Optional[float] = None,
    clamp_negative: bool = False
) -> Path:
    """
    Эпохи сбора данных для дообучения с приоритетной выборкой по типам

    Эпоха e прогоняет сценарий с seed + e и пополняет буферы; затем из
    непустых буферов (по сигнатуре) выбирается batch_size траекторий
    с вероятностями SPr.

    Returns:
        Путь к объединенному refinement.jsonl
    """
    epsilon = settings.sampling_epsilon if epsilon is None else epsilon
    output_dir = Path(manifest.output_dir)
    buffers: Dict[str, ExperienceBuffer] = {}
    combined: List[ReasoningTrajectory] = []

    for epoch in range(epochs):
        result = await simulate(manifest, seed_offset=epoch)
        write_artifacts(result, output_dir / f"epoch{epoch}")
        append_to_buffers(buffers, result.trajectories)
        save_buffers(buffers, output_dir / f"buffers_epoch{epoch}.jsonl")

        ready = [buffers[sig] for sig in sorted(buffers) if len(buffers[sig]) > 0]
        batch: List[ReasoningTrajectory] = []
        if ready:
            probs = sampling_probabilities([b.mean_reward for b in ready], epsilon)
            rng = np.random.default_rng([manifest.seed, epoch, 3])
            batch = sample_refinement_batch(ready, probs, batch_size, rng)
            bench_logger.info(
                f"Epoch {epoch} | Buffers: {len(ready)} | "
                f"SPr: {', '.join(f'{b.type_signature}={p:.4f}' for b, p in zip(ready, probs))}"
            )
        _export_or_empty(
            batch, output_dir / f"refinement_epoch{epoch}.jsonl", DatasetKind.REFINEMENT, clamp_negative
        )
        combined.extend(batch)

    return _export_or_empty(combined, output_dir / REFINEMENT_FILE, DatasetKind.REFINEMENT, clamp_negative)
