"""
Модуль наблюдений перекрестка и генерации промптов

Наблюдение не зависит от типа перекрестка: топология, пространство
действий, очереди (QV) и приближающиеся автомобили (AV) по трем
сегментам полосы. Промпты строятся по текстовым шаблонам из src/prompts.
"""
import hashlib
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from langchain.prompts import PromptTemplate
from pydantic import BaseModel, Field

from src.core.network_model import RoadNetwork, Shape
from src.core.traffic_sim import EmergencyVehicleState, TrafficSimulator
from src.core.vector_store import GuidanceItem

PROMPTS_DIR = Path(__file__).resolve().parent.parent / "prompts"

NO_GUIDANCE_LINE = "No guidance retrieved for the current situation."


class PromptMode(str, Enum):
    REGULAR = "Regular"
    EMERGENCY = "Emergency"


class LaneState(BaseModel):
    """Счетчики одной входящей полосы"""
    lane: str
    queued: int = Field(default=0, ge=0)
    far: int = Field(default=0, ge=0)
    mid: int = Field(default=0, ge=0)
    near: int = Field(default=0, ge=0)

    @property
    def approaching(self) -> int:
        return self.far + self.mid + self.near


class PhaseState(BaseModel):
    """Фаза в пространстве действий"""
    index: int
    movements: List[Tuple[str, str]]
    lanes: List[str]


class RoadSummary(BaseModel):
    road: str
    incoming_lanes: int


class TrafficObservation(BaseModel):
    """Представление obs_t перекрестка"""
    intersection_id: str
    shape: Shape
    step: int = 0
    roads: List[RoadSummary]
    movement_count: int
    phases: List[PhaseState]
    lanes: Dict[str, LaneState]

    @property
    def phase_count(self) -> int:
        return len(self.phases)

    def phase_totals(self, index: int) -> LaneState:
        """Суммы QV и AV по полосам фазы"""
        phase = self.phases[index - 1]
        states = [self.lanes[lane] for lane in phase.lanes]
        return LaneState(
            lane=f"phase {index}",
            queued=sum(s.queued for s in states),
            far=sum(s.far for s in states),
            mid=sum(s.mid for s in states),
            near=sum(s.near for s in states),
        )

    def pressure(self, index: int) -> int:
        """QV + AV ближнего сегмента"""
        totals = self.phase_totals(index)
        return totals.queued + totals.near

    def phases_with_lane(self, lane_id: str) -> List[int]:
        return [p.index for p in self.phases if lane_id in p.lanes]


class PromptBundle(BaseModel):
    """Готовый промпт"""
    text: str
    mode: PromptMode
    sections: List[str]

    @property
    def prompt_hash(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


def build_observation(
    network: RoadNetwork,
    intersection_id: str,
    lane_states: Dict[str, LaneState],
    step: int = 0
) -> TrafficObservation:
    """
    Собрать наблюдение из счетчиков полос

    Args:
        network: Дорожная сеть
        intersection_id: ID перекрестка
        lane_states: Счетчики по входящим полосам (отсутствующие = нули)
        step: Шаг симуляции

    Returns:
        TrafficObservation
    """
    intersection = network.intersection(intersection_id)
    phases = [
        PhaseState(
            index=phase.index,
            movements=[(m.from_lane, m.to_lane) for m in intersection.phase_movements(phase.index)],
            lanes=intersection.phase_lanes(phase.index),
        )
        for phase in intersection.phases
    ]
    return TrafficObservation(
        intersection_id=intersection_id,
        shape=intersection.shape,
        step=step,
        roads=[RoadSummary(road=r, incoming_lanes=n) for r, n in intersection.approaches],
        movement_count=len(intersection.movements),
        phases=phases,
        lanes={
            lane: lane_states.get(lane, LaneState(lane=lane))
            for lane in intersection.upstream_lanes
        },
    )


def observe(sim: TrafficSimulator, intersection_id: str) -> TrafficObservation:
    """
    Наблюдение перекрестка в текущем состоянии симуляции

    Очередь - автомобили со скоростью строго меньше v_stop, приближающиеся -
    строго больше v_stop; ровно v_stop не попадает ни туда, ни туда.
    Приближающиеся распределяются по третям полосы: near при d < L/3,
    mid при d < 2L/3, иначе far.
    """
    network = sim.network
    states: Dict[str, LaneState] = {}
    for lane_id in network.intersection(intersection_id).upstream_lanes:
        length = network.lane(lane_id).length
        counts = {"queued": 0, "far": 0, "mid": 0, "near": 0}
        for vehicle in sim.lane_vehicles(lane_id):
            if sim.is_queued(vehicle):
                counts["queued"] += 1
            elif vehicle.speed <= sim.config.v_stop:
                continue
            elif vehicle.distance < length / 3:
                counts["near"] += 1
            elif vehicle.distance < 2 * length / 3:
                counts["mid"] += 1
            else:
                counts["far"] += 1
        states[lane_id] = LaneState(lane=lane_id, **counts)
    return build_observation(network, intersection_id, states, sim.step_index)


@lru_cache(maxsize=None)
def load_template(name: str) -> PromptTemplate:
    """Загрузить шаблон промпта src/prompts/<name>.txt"""
    text = (PROMPTS_DIR / f"{name}.txt").read_text(encoding="utf-8")
    return PromptTemplate.from_template(text)


def render_topology(obs: TrafficObservation) -> str:
    roads = ", ".join(r.road for r in obs.roads)
    counts = ", ".join(str(r.incoming_lanes) for r in obs.roads)
    return (
        f"There are {len(obs.roads)} bidirectional roads connected to this intersection "
        f"(ID: {roads}), with {counts} incoming lanes respectively.\n"
        f"A total of {obs.movement_count} traffic movements are managed by "
        f"{obs.phase_count} signal phases in this intersection."
    )


def render_action_space(obs: TrafficObservation) -> str:
    return "\n".join(
        f"Phase {p.index}: " + "; ".join(f"{a} → {b}" for a, b in p.movements)
        for p in obs.phases
    )


def _counts(state: LaneState) -> str:
    return f"QV={state.queued}; AV={state.far}/{state.mid}/{state.near}"


def render_queuing(obs: TrafficObservation) -> str:
    lines = []
    for phase in obs.phases:
        cells = [f"{lane}: {_counts(obs.lanes[lane])}" for lane in phase.lanes]
        cells.append(f"Total: {_counts(obs.phase_totals(phase.index))}")
        lines.append(f"Phase {phase.index}: " + " | ".join(cells))
    return "\n".join(lines)


def render_emergency_state(ev: EmergencyVehicleState) -> str:
    return (
        f"Emergency Vehicle ID: {ev.vehicle_id}\n"
        f"Planned Route: {' → '.join(ev.planned_roads)}\n"
        f"Current Position: {ev.lane}, {ev.distance_to_stop_line:.1f}m to stop line\n"
        f"Speed: {ev.speed:.1f}m/s"
    )


def render_guidance(guidance: Sequence[GuidanceItem]) -> str:
    if not guidance:
        return NO_GUIDANCE_LINE
    return "\n\n".join(
        f"Current Possible Situation: {item.situation}\n"
        f"Recommended Action: {item.recommended_action}\n"
        f"Intended Effect: {item.intended_effect}"
        for item in guidance
    )


def render_regular_prompt(obs: TrafficObservation) -> PromptBundle:
    """Промпт облегченного рассуждения (без блоков спецтранспорта)"""
    text = load_template("regular").format(
        topology=render_topology(obs),
        action_space=render_action_space(obs),
        queuing=render_queuing(obs),
    )
    return PromptBundle(
        text=text,
        mode=PromptMode.REGULAR,
        sections=["role", "objective", "representation", "commonsense", "task", "output_format"],
    )


def render_emergency_prompt(
    obs: TrafficObservation,
    ev: EmergencyVehicleState,
    guidance: Sequence[GuidanceItem]
) -> PromptBundle:
    """
    Промпт глубокого рассуждения

    Args:
        obs: Наблюдение перекрестка
        ev: Спецтранспорт, ради которого включено глубокое рассуждение
        guidance: Найденные рекомендации в порядке убывания близости

    Returns:
        PromptBundle в режиме Emergency
    """
    text = load_template("emergency").format(
        topology=render_topology(obs),
        action_space=render_action_space(obs),
        queuing=render_queuing(obs),
        emergency_state=render_emergency_state(ev),
        guidance=render_guidance(guidance),
    )
    return PromptBundle(
        text=text,
        mode=PromptMode.EMERGENCY,
        sections=[
            "role", "objective", "representation", "emergency_state",
            "guidance", "commonsense", "task", "output_format",
        ],
    )
