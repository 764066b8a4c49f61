"""
Сценарии, манифесты прогонов и политики управления
"""
import asyncio
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, model_validator

from src.agents.signal_agent import (
    AgentDecision,
    ReasoningMode,
    SignalAgent,
    relevant_emergency,
    select_mode,
)
from src.core.llm_client import BackendConfig, BackendKind, LLMClient
from src.core.network_model import RoadNetwork, resolve_network
from src.core.observation import TrafficObservation, observe
from src.core.rerag import RERAG
from src.core.traffic_sim import EmergencyVehicleState, SimulationConfig, TrafficSimulator
from src.core.vector_store import GuidanceRepository
from src.utils.error_handler import BackendError, ParseError, validate_model
from src.utils.logger import bench_logger, log_error


class PolicyKind(str, Enum):
    MOCK_HEURISTIC = "MockHeuristic"
    REMOTE = "Remote"
    FIXED_TIME = "FixedTime"
    RANDOM = "Random"


class Scenario(BaseModel):
    """Файл сценария .scenario.json"""
    name: str
    network: str
    simulation: SimulationConfig = SimulationConfig()
    policy: PolicyKind = PolicyKind.MOCK_HEURISTIC
    description: str = ""


def load_scenario(path: Union[str, Path]) -> Scenario:
    """
    Загрузить сценарий; относительный путь сети считается от файла сценария

    Raises:
        ParseError: Файл не читается или не JSON
        ValidationError: Поля нарушают ограничения
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ParseError(f"Cannot read scenario {path}: {e}", {"path": str(path)})
    except json.JSONDecodeError as e:
        raise ParseError(f"Malformed scenario {path}: {e.msg}", {"line": e.lineno, "column": e.colno})

    scenario = validate_model(Scenario, data, f"scenario {path}")
    if not scenario.network.startswith("builtin:") and not Path(scenario.network).is_absolute():
        scenario = scenario.model_copy(update={"network": str(path.parent / scenario.network)})
    return scenario


class RunManifest(BaseModel):
    """Полное описание одного прогона"""
    scenario_path: str
    policy: PolicyKind
    backend: BackendConfig = BackendConfig()
    output_dir: str
    seed: int
    decision_interval: Optional[int] = None
    emergency_gating: bool = True
    guidance_dir: Optional[str] = None
    capture_outcomes: bool = False

    @model_validator(mode="after")
    def _remote_policy_needs_remote_backend(self) -> "RunManifest":
        if self.policy == PolicyKind.REMOTE and self.backend.kind != BackendKind.REMOTE:
            raise ValueError("Remote policy requires a Remote backend")
        if self.policy == PolicyKind.MOCK_HEURISTIC and self.backend.kind != BackendKind.MOCK:
            raise ValueError("MockHeuristic policy requires the Mock backend")
        return self

    @property
    def label(self) -> str:
        return self.policy.value if self.emergency_gating else f"{self.policy.value}-NoGating"

    def simulation_config(self, scenario: Scenario, seed_offset: int = 0) -> SimulationConfig:
        updates: Dict[str, Any] = {"seed": self.seed + seed_offset}
        if self.decision_interval is not None:
            updates["decision_interval"] = self.decision_interval
        return validate_model(
            SimulationConfig, {**scenario.simulation.model_dump(), **updates}, "simulation config"
        )


@dataclass
class DecisionRecord:
    """Решение политики для одного перекрестка"""
    intersection_id: str
    phase: int
    mode: str
    fallback_used: bool = False
    agent: Optional[AgentDecision] = None
    obs: Optional[TrafficObservation] = None
    ev: Optional[EmergencyVehicleState] = None


class Policy(ABC):
    """Политика выбора фаз на точке решения"""

    kind: PolicyKind

    @abstractmethod
    async def decide(self, sim: TrafficSimulator) -> List[DecisionRecord]:
        """Решения для всех перекрестков, по ID"""
        pass

    async def close(self) -> None:
        return None


class FixedTimePolicy(Policy):
    """Циклическое переключение фаз на каждой точке решения"""

    kind = PolicyKind.FIXED_TIME

    async def decide(self, sim: TrafficSimulator) -> List[DecisionRecord]:
        cycle = sim.step_index // sim.config.decision_interval
        return [
            DecisionRecord(iid, cycle % sim.network.intersection(iid).phase_count + 1, self.kind.value)
            for iid in sim.intersection_ids
        ]


class RandomPolicy(Policy):
    """Равномерно случайная фаза, детерминированная seed"""

    kind = PolicyKind.RANDOM

    def __init__(self, seed: int):
        self.rng = np.random.default_rng([seed, 2])

    async def decide(self, sim: TrafficSimulator) -> List[DecisionRecord]:
        return [
            DecisionRecord(
                iid, int(self.rng.integers(1, sim.network.intersection(iid).phase_count + 1)), self.kind.value
            )
            for iid in sim.intersection_ids
        ]


class AgentPolicy(Policy):
    """LLM-агенты перекрестков с выбором режима и поиском рекомендаций"""

    def __init__(
        self,
        kind: PolicyKind,
        client: LLMClient,
        repository: Optional[GuidanceRepository] = None,
        emergency_gating: bool = True
    ):
        self.kind = kind
        self.client = client
        self.agent = SignalAgent(client)
        self.rerag = RERAG(client, repository)
        self.emergency_gating = emergency_gating

    async def _decide_one(
        self,
        sim: TrafficSimulator,
        intersection_id: str,
        emergencies: List[EmergencyVehicleState]
    ) -> DecisionRecord:
        obs = observe(sim, intersection_id)
        mode = ReasoningMode.LIGHTWEIGHT
        ev = None
        if self.emergency_gating:
            mode = select_mode(sim.network, intersection_id, emergencies)
            ev = relevant_emergency(sim.network, intersection_id, emergencies)

        guidance = []
        if mode == ReasoningMode.DEEP:
            try:
                guidance = [item for item, _ in await self.rerag.guidance_for(obs, ev)]
            except (BackendError, ParseError) as e:
                # без рекомендаций промпт получает строку "нет рекомендаций"
                log_error(bench_logger, e, {"intersection_id": intersection_id, "step": obs.step})

        decision = await self.agent.decide(obs, mode, ev, guidance)
        return DecisionRecord(
            intersection_id=intersection_id,
            phase=decision.phase,
            mode=decision.mode.value,
            fallback_used=decision.fallback_used,
            agent=decision,
            obs=obs,
            ev=ev,
        )

    async def decide(self, sim: TrafficSimulator) -> List[DecisionRecord]:
        emergencies = sim.emergency_states()
        records = await asyncio.gather(*[
            self._decide_one(sim, iid, emergencies) for iid in sim.intersection_ids
        ])
        return sorted(records, key=lambda r: r.intersection_id)

    async def close(self) -> None:
        await self.client.aclose()


def build_policy(manifest: RunManifest, seed_offset: int = 0) -> Policy:
    """Создать политику по манифесту"""
    if manifest.policy == PolicyKind.FIXED_TIME:
        return FixedTimePolicy()
    if manifest.policy == PolicyKind.RANDOM:
        return RandomPolicy(manifest.seed + seed_offset)

    repository = None
    if manifest.guidance_dir:
        repository = GuidanceRepository.load(manifest.guidance_dir)
        bench_logger.info(f"Loaded guidance repository: D={repository.size} from {manifest.guidance_dir}")
    return AgentPolicy(manifest.policy, LLMClient(manifest.backend), repository, manifest.emergency_gating)


def load_run_inputs(manifest: RunManifest) -> Tuple[Scenario, RoadNetwork]:
    """Сценарий и сеть манифеста"""
    scenario = load_scenario(manifest.scenario_path)
    return scenario, resolve_network(scenario.network)
