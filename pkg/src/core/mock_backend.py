"""
Детерминированный бэкенд без сети

Отвечает на запросы агентов правилами, читая только текст промпта:
решение по фазе (глубокое или облегченное), обзор исторических случаев,
генерация поискового запроса. Эмбеддинги - хешированный мешок слов.
"""
import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.utils.error_handler import EmptyTextError

REVIEWER_MARKER = "[Reviewer Role]"
QUERY_MARKER = "[Query Generator Role]"

_QUEUE_CELL = re.compile(r"([^\s|:]+): QV=(\d+); AV=(\d+)/(\d+)/(\d+)")
_PHASE_LINE = re.compile(r"^Phase (\d+): (.+)$", re.MULTILINE)
_TOPOLOGY_ROADS = re.compile(r"\(ID: ([^)]*)\)")
_EV_ID = re.compile(r"^Emergency Vehicle ID: (\S+)$", re.MULTILINE)
_EV_ROUTE = re.compile(r"^Planned Route: (.*)$", re.MULTILINE)
_EV_POSITION = re.compile(r"^Current Position: (\S+), ([\d.]+)m to stop line$", re.MULTILINE)
_EV_SPEED = re.compile(r"^Speed: ([\d.]+)m/s$", re.MULTILINE)
_WORD = re.compile(r"\w+")

Counts = Tuple[int, int, int, int]


def lane_road(lane_id: str) -> str:
    """Дорога полосы по соглашению об именах <road>_<index>"""
    return lane_id.rsplit("_", 1)[0]


@dataclass
class PromptState:
    """Состояние перекрестка, восстановленное из текста промпта"""
    roads: List[str] = field(default_factory=list)
    movements: Dict[int, List[Tuple[str, str]]] = field(default_factory=dict)
    lanes: Dict[int, Dict[str, Counts]] = field(default_factory=dict)
    totals: Dict[int, Counts] = field(default_factory=dict)
    ev_id: Optional[str] = None
    ev_route: List[str] = field(default_factory=list)
    ev_lane: Optional[str] = None
    ev_distance: float = 0.0
    ev_speed: float = 0.0

    @property
    def phases(self) -> List[int]:
        return sorted(set(self.totals) | set(self.movements))

    def pressure(self, phase: int) -> int:
        queued, _, _, near = self.totals.get(phase, (0, 0, 0, 0))
        return queued + near

    def best(self, candidates: Sequence[int]) -> int:
        return min(candidates, key=lambda k: (-self.pressure(k), k))

    def lane_counts(self, lane_id: str) -> Optional[Counts]:
        for lanes in self.lanes.values():
            if lane_id in lanes:
                return lanes[lane_id]
        return None

    def phases_with_lane(self, lane_id: str) -> List[int]:
        from_movements = [k for k, moves in self.movements.items() if any(a == lane_id for a, _ in moves)]
        if from_movements:
            return sorted(from_movements)
        return sorted(k for k, lanes in self.lanes.items() if lane_id in lanes)


def parse_prompt_state(text: str) -> PromptState:
    """Разобрать топологию, фазы, очереди и состояние спецтранспорта"""
    state = PromptState()

    roads = _TOPOLOGY_ROADS.search(text)
    if roads:
        state.roads = [r.strip() for r in roads.group(1).split(",") if r.strip()]

    for match in _PHASE_LINE.finditer(text):
        phase, body = int(match.group(1)), match.group(2)
        if "QV=" in body:
            lanes: Dict[str, Counts] = {}
            for cell in _QUEUE_CELL.finditer(body):
                counts = tuple(int(cell.group(i)) for i in range(2, 6))
                if cell.group(1) == "Total":
                    state.totals[phase] = counts  # type: ignore[assignment]
                else:
                    lanes[cell.group(1)] = counts  # type: ignore[assignment]
            state.lanes[phase] = lanes
        elif "→" in body:
            state.movements[phase] = [
                (a.strip(), b.strip())
                for a, b in (pair.split("→", 1) for pair in body.split(";") if "→" in pair)
            ]

    ev_id = _EV_ID.search(text)
    position = _EV_POSITION.search(text)
    if ev_id and position:
        state.ev_id = ev_id.group(1)
        state.ev_lane = position.group(1)
        state.ev_distance = float(position.group(2))
        route = _EV_ROUTE.search(text)
        if route:
            state.ev_route = [r.strip() for r in route.group(1).split("→") if r.strip()]
        speed = _EV_SPEED.search(text)
        state.ev_speed = float(speed.group(1)) if speed else 0.0
    return state


def hashed_embedding(text: str, dim: int) -> List[float]:
    """
    Хешированный мешок слов и символьных триграмм, L2-нормированный

    Args:
        text: Непустой текст
        dim: Размерность вектора

    Returns:
        Единичный вектор длины dim
    """
    text = text.strip()
    if not text:
        raise EmptyTextError()

    features: List[str] = []
    for word in _WORD.findall(text.lower()):
        features.append(word)
        padded = f"<{word}>"
        features.extend(padded[i:i + 3] for i in range(len(padded) - 2))
    if not features:
        features = [text]

    vector = np.zeros(dim, dtype=np.float64)
    for feature in features:
        digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
        vector[int.from_bytes(digest, "big") % dim] += 1.0
    vector /= np.linalg.norm(vector)
    return vector.tolist()


class MockBackend:
    """Детерминированный бэкенд: (запрос) -> (ответ), без скрытого состояния"""

    def __init__(self, embedding_dim: int = 256):
        self.embedding_dim = embedding_dim

    def chat(self, messages: Sequence[Dict[str, str]]) -> str:
        prompt = next((m["content"] for m in reversed(messages) if m["role"] == "user"), "")
        if prompt.startswith(REVIEWER_MARKER):
            return self._review(prompt)
        if prompt.startswith(QUERY_MARKER):
            return self._query(prompt)
        return self._decide(prompt)

    def embed(self, texts: Sequence[str]) -> List[List[float]]:
        return [hashed_embedding(text, self.embedding_dim) for text in texts]

    # ------------------------------------------------------------------
    # Решение по фазе
    # ------------------------------------------------------------------

    def _decide(self, prompt: str) -> str:
        state = parse_prompt_state(prompt)
        phases = state.phases or [1]
        deep = "<traffic analysis>" in prompt

        if not deep or state.ev_lane is None:
            phase = state.best(phases)
            queued, _, _, near = state.totals.get(phase, (0, 0, 0, 0))
            explanation = (
                f"Phase {phase} has the highest queue pressure with QV={queued} "
                f"and {near} vehicles approaching near the stop line."
            )
            if deep:
                return _deep_response(
                    "No emergency vehicle state is available for this intersection.", explanation, phase
                )
            return (
                "<response>\n"
                f"  <evaluation and explanation>{explanation}</evaluation and explanation>\n"
                f"  <signal>{phase}</signal>\n"
                "</response>"
            )

        ev, lane = state.ev_id, state.ev_lane
        serving = state.phases_with_lane(lane)
        if serving:
            phase = state.best(self._own_movement_phases(state, lane) or serving)
            counts = state.lane_counts(lane) or (0, 0, 0, 0)
            analysis = (
                f"The emergency vehicle {ev} is on {lane}, {state.ev_distance:.1f} m from the stop line, "
                f"moving at {state.ev_speed:.1f} m/s. This lane has {counts[0]} queuing vehicles and "
                f"approaching vehicles distributed as {counts[1]}/{counts[2]}/{counts[3]} (far/mid/near). "
                f"Phase {phase} controls this lane."
            )
            evaluation = (
                f"{_arrival(ev, state.ev_distance, state.ev_speed)} "
                f"Phase {phase} clears the queue ahead of the emergency vehicle. "
                f"Phase {phase} has total QV={state.totals.get(phase, (0,))[0]}."
            )
            return _deep_response(analysis, evaluation, phase)

        upcoming = [road for road in state.ev_route if road in state.roads]
        if upcoming:
            road = upcoming[0]
            candidates = sorted({
                k for k, lanes in state.lanes.items() for lane_id in lanes if lane_road(lane_id) == road
            })
            if candidates:
                phase = state.best(candidates)
                analysis = (
                    f"The emergency vehicle {ev} is on {lane} and will enter this intersection from {road}."
                )
                evaluation = (
                    f"Phase {phase} discharges the queue on {road} before the emergency vehicle arrives."
                )
                return _deep_response(analysis, evaluation, phase)

        phase = state.best(phases)
        analysis = f"The emergency vehicle {ev} is on {lane} and does not use this intersection's approaches."
        evaluation = f"Phase {phase} has the highest queue pressure."
        return _deep_response(analysis, evaluation, phase)

    @staticmethod
    def _own_movement_phases(state: PromptState, lane: str) -> List[int]:
        road = lane_road(lane)
        if road not in state.ev_route:
            return []
        position = state.ev_route.index(road)
        if position + 1 >= len(state.ev_route):
            return []
        next_road = state.ev_route[position + 1]
        return sorted(
            k for k, moves in state.movements.items()
            if any(a == lane and lane_road(b) == next_road for a, b in moves)
        )

    # ------------------------------------------------------------------
    # Обзор случаев
    # ------------------------------------------------------------------

    def _review(self, prompt: str) -> str:
        section = prompt.split("[Historical Cases]", 1)[-1].split("[Task Description]", 1)[0]
        cases = [json.loads(line) for line in section.splitlines() if line.startswith("{")]

        guidance: List[Dict[str, str]] = []
        seen = set()
        for case in cases:
            category = _case_category(case)
            if category not in seen:
                seen.add(category)
                guidance.append(dict(zip(("situation", "recommended_action", "intended_effect"), category)))
        return json.dumps({"guidance": guidance}, ensure_ascii=False)

    # ------------------------------------------------------------------
    # Поисковый запрос
    # ------------------------------------------------------------------

    def _query(self, prompt: str) -> str:
        state = parse_prompt_state(prompt)
        phases = state.phases or [1]
        dominant = min(phases, key=lambda k: (-state.totals.get(k, (0,))[0], k))
        dominant_queue = state.totals.get(dominant, (0,))[0]

        distance = state.ev_distance
        band = "near" if distance <= 50 else "mid-range" if distance <= 150 else "far"
        counts = state.lane_counts(state.ev_lane or "")
        if counts is not None:
            where = (
                f"{band} from the stop line, {distance:.1f} m, "
                f"{counts[0]} queuing vehicles ahead"
            )
        else:
            where = f"not yet at this intersection, {distance:.1f} m to its current stop line"
        return (
            f"emergency vehicle approaching on lane {state.ev_lane} ({where}); "
            f"dominant queue at phase {dominant} with QV={dominant_queue}"
        )


def _deep_response(analysis: str, evaluation: str, phase: int) -> str:
    return (
        "<response>\n"
        f"  <traffic analysis>{analysis}</traffic analysis>\n"
        f"  <evaluation and explanation>{evaluation}</evaluation and explanation>\n"
        f"  <signal>{phase}</signal>\n"
        "</response>"
    )


def _arrival(ev: Optional[str], distance: float, speed: float) -> str:
    if speed < 0.1:
        return f"{ev} is stopped {distance:.1f} m before the stop line."
    return f"At current speed, {ev} will reach the stop line in {distance / speed:.1f} s."


_BLOCKED = (
    "An emergency vehicle is approaching the intersection, but its lane is still occupied by queuing vehicles.",
    "Promptly select the signal phase for the lane with the emergency vehicle.",
    "Clear the queuing vehicles in the lane with the emergency vehicle for its rapid passage.",
)
_CLEAR = (
    "An emergency vehicle is approaching the intersection on a lane with no queuing vehicles.",
    "Keep or select the signal phase that serves the emergency vehicle's lane and movement.",
    "Let the emergency vehicle cross the stop line without slowing down.",
)
_NOT_SERVED = (
    "An emergency vehicle was kept waiting because the selected phase did not serve its lane.",
    "Avoid phases that do not serve the emergency vehicle's lane while it approaches or queues.",
    "Prevent the emergency vehicle from stopping at the intersection.",
)
_UPCOMING = (
    "An emergency vehicle will reach the intersection later on its planned route.",
    "Select the phase that discharges the queue on the road the emergency vehicle will arrive on.",
    "Empty the approach before the emergency vehicle arrives.",
)


def _case_category(case: Dict[str, Any]) -> Tuple[str, str, str]:
    obs, ev = case["obs_t"], case["ev_t"]
    lane = ev["lane"]
    lanes = obs.get("lanes", {})
    if lane not in lanes:
        return _UPCOMING
    action = int(case["action"])
    phases = obs.get("phases", [])
    served = 0 < action <= len(phases) and lane in phases[action - 1]["lanes"]
    if not served:
        return _NOT_SERVED
    if lanes[lane]["queued"] > 0:
        return _BLOCKED
    return _CLEAR
