"""
Мезоскопический симулятор движения

Детерминированная пошаговая модель: пуассоновские прибытия, FIFO-очереди
на полосах, разгрузка очередей по зеленой фазе с интервалом насыщения,
спецтранспорт на заранее построенных маршрутах и накопление метрик.
"""
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Set, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.core.network_model import RoadNetwork
from src.utils.error_handler import InvalidPhaseError, NoRouteError, PreconditionError
from src.utils.logger import sim_logger


class SimulationConfig(BaseModel):
    """Параметры симуляции"""
    model_config = ConfigDict(frozen=True)

    T: int = Field(default=1800, gt=0)
    step_length: float = Field(default=1.0, gt=0.0)
    decision_interval: int = Field(default=5, ge=1)
    M: int = Field(default=6, ge=0)
    arrival_rate: float = Field(default=57.14, ge=0.0)
    seed: int = Field(default=0, ge=0)
    v_stop: float = Field(default=0.1, ge=0.0)
    saturation_headway: float = Field(default=2.0, gt=0.0)
    free_flow_speed: float = Field(default=13.9, gt=0.0)
    jam_spacing: float = Field(default=7.5, gt=0.0)


class VehicleClass(str, Enum):
    REGULAR = "Regular"
    EMERGENCY = "Emergency"


@dataclass(frozen=True)
class Route:
    """Маршрут между граничными узлами: полосы и движения на каждом перекрестке"""
    origin: str
    destination: str
    lanes: Tuple[str, ...]
    movements: Tuple[str, ...]


@dataclass
class Vehicle:
    """Транспортное средство в симуляции"""
    id: str
    vehicle_class: VehicleClass
    route: Route
    spawn_step: int
    route_index: int = 0
    distance: float = 0.0
    speed: float = 0.0
    waiting: float = 0.0
    finish_step: Optional[int] = None

    @property
    def lane(self) -> str:
        return self.route.lanes[self.route_index]

    @property
    def is_emergency(self) -> bool:
        return self.vehicle_class == VehicleClass.EMERGENCY

    @property
    def next_movement(self) -> Optional[str]:
        if self.route_index < len(self.route.movements):
            return self.route.movements[self.route_index]
        return None

    def remaining_lanes(self) -> List[str]:
        return list(self.route.lanes[self.route_index:])


class EmergencyVehicleState(BaseModel):
    """Наблюдаемое состояние спецтранспорта на шаге"""
    model_config = ConfigDict(frozen=True)

    vehicle_id: str
    planned_route: List[str]
    planned_roads: List[str]
    lane: str
    distance_to_stop_line: float
    speed: float
    next_movement: Optional[Tuple[str, str]] = None


@dataclass
class StepOutcome:
    """Результат одного шага"""
    step: int
    queue_length: Dict[str, int]
    emergency_waiting: Dict[str, float]
    discharged: Dict[str, int]
    spawned_total: int
    active_total: int
    completed_total: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class MetricsReport(BaseModel):
    """Итоговые метрики прогона"""
    ATT: float
    AWT: float
    AQL: float
    ATTE: Optional[float] = None
    AWTE: Optional[float] = None
    emergency_travel_times: Dict[str, float] = Field(default_factory=dict)
    vehicles_spawned: int = 0
    vehicles_completed: int = 0


class RouteTable:
    """
    Кратчайшие маршруты между всеми парами граничных узлов

    Граф строится на дорогах: дуга r_in -> r_out существует, если на
    перекрестке есть движение с полосы r_in на полосу r_out; вес - длина r_out.
    """

    def __init__(self, network: RoadNetwork):
        self.network = network
        boundaries = network.boundary_nodes
        if len(boundaries) < 2:
            raise NoRouteError(
                f"Network needs at least 2 boundary nodes, has {len(boundaries)}",
                {"boundary_nodes": boundaries}
            )

        graph = nx.DiGraph()
        for intersection in network.intersections:
            for movement in intersection.movements:
                r_out = network.lane_road(movement.to_lane)
                graph.add_edge(
                    network.lane_road(movement.from_lane), r_out, weight=network.road_length(r_out)
                )
        boundary_set = set(boundaries)
        for road in network.roads:
            if road.from_node in boundary_set:
                graph.add_edge(("origin", road.from_node), road.id, weight=network.road_length(road.id))
            if road.to_node in boundary_set:
                graph.add_edge(road.id, ("dest", road.to_node), weight=0.0)

        self.routes: List[Route] = []
        for origin in boundaries:
            source = ("origin", origin)
            if source not in graph:
                continue
            _, paths = nx.single_source_dijkstra(graph, source)
            for destination in boundaries:
                target = ("dest", destination)
                if destination == origin or target not in paths:
                    continue
                self.routes.append(self._route(origin, destination, paths[target][1:-1]))

        if not self.routes:
            raise NoRouteError("No boundary-to-boundary route exists in the network")

        sim_logger.debug(f"Route table built: {len(self.routes)} routes over {len(boundaries)} boundary nodes")

    def _route(self, origin: str, destination: str, roads: List[str]) -> Route:
        lanes: List[str] = []
        movements: List[str] = []
        for k, road_id in enumerate(roads):
            road_lanes = self.network.road_lanes(road_id)
            if k == len(roads) - 1:
                lanes.append(road_lanes[0])
                break
            intersection = self.network.intersection(self.network.road(road_id).to_node)
            next_road = roads[k + 1]
            for lane_id in road_lanes:
                onward = [
                    m for m in intersection.lane_movements(lane_id)
                    if self.network.lane_road(m.to_lane) == next_road
                ]
                if onward:
                    lanes.append(lane_id)
                    movements.append(onward[0].id)
                    break

        # Полоса въезда на следующую дорогу - та, с которой есть движение дальше
        for k, movement_id in enumerate(movements):
            intersection = self.network.intersection(self.network.head_intersection(lanes[k]))
            exact = [
                m.id for m in intersection.lane_movements(lanes[k]) if m.to_lane == lanes[k + 1]
            ]
            if exact:
                movements[k] = exact[0]
        return Route(origin, destination, tuple(lanes), tuple(movements))

    def sample(self, rng: np.random.Generator) -> Route:
        return self.routes[int(rng.integers(len(self.routes)))]


def spawn_arrivals(
    rng: np.random.Generator,
    config: SimulationConfig,
    routes: RouteTable,
    step: int
) -> List[Vehicle]:
    """
    Сгенерировать прибытия обычных автомобилей на шаге

    Args:
        rng: Генератор шага (детерминирован парой seed, step)
        config: Параметры симуляции
        routes: Таблица маршрутов
        step: Номер шага

    Returns:
        Новые автомобили
    """
    if step >= config.T:
        raise PreconditionError(f"Step {step} is past the horizon T={config.T}")
    mean = config.arrival_rate * config.step_length / 60.0
    count = int(rng.poisson(mean)) if mean > 0 else 0
    return [
        Vehicle(
            id=f"veh_{step}_{k}",
            vehicle_class=VehicleClass.REGULAR,
            route=routes.sample(rng),
            spawn_step=step,
        )
        for k in range(count)
    ]


def schedule_emergencies(
    rng: np.random.Generator,
    config: SimulationConfig,
    routes: RouteTable
) -> List[Tuple[int, Route]]:
    """Запланировать M выездов спецтранспорта в окне [0, T/2]"""
    if config.M == 0:
        return []
    steps = rng.integers(0, config.T // 2, size=config.M, endpoint=True)
    return [(int(s), routes.sample(rng)) for s in steps]


def average_queue_length(queue_trace: List[Dict[str, int]]) -> float:
    """Средняя длина очереди по всем (перекресток, точка решения)"""
    values = [q for snapshot in queue_trace for q in snapshot.values()]
    return float(np.mean(values)) if values else 0.0


class TrafficSimulator:
    """Симулятор одного сценария"""

    def __init__(
        self,
        network: RoadNetwork,
        config: SimulationConfig,
        routes: Optional[RouteTable] = None
    ):
        self.network = network
        self.config = config
        self.routes = routes or RouteTable(network)

        self.step_index = 0
        self.vehicles: Dict[str, Vehicle] = {}
        self.completed_total = 0
        self.lanes: Dict[str, List[Vehicle]] = {lane.id: [] for lane in network.lanes}
        self.credit: Dict[str, float] = {lane.id: 0.0 for lane in network.lanes}

        self.intersection_ids = network.intersection_ids
        self.active_phases: Dict[str, int] = {iid: 1 for iid in self.intersection_ids}
        self._phase_sets: Dict[str, List[Set[str]]] = {
            iid: [set(p.movements) for p in network.intersection(iid).phases]
            for iid in self.intersection_ids
        }
        self._head: Dict[str, Optional[str]] = {
            lane.id: network.head_intersection(lane.id) for lane in network.lanes
        }

        self.queue_trace: List[Dict[str, int]] = []
        self.interval_wte: Dict[str, float] = {iid: 0.0 for iid in self.intersection_ids}

        ev_rng = np.random.default_rng([config.seed, config.T, 1])
        self._emergencies: Dict[int, List[Tuple[str, Route]]] = {}
        for k, (spawn_step, route) in enumerate(schedule_emergencies(ev_rng, config, self.routes), start=1):
            self._emergencies.setdefault(spawn_step, []).append((f"Ambulance_{k}", route))

        sim_logger.info(
            f"Simulator ready: {len(self.intersection_ids)} intersections | "
            f"T={config.T} | rate={config.arrival_rate}/min | M={config.M} | seed={config.seed}"
        )

    @property
    def finished(self) -> bool:
        return self.step_index >= self.config.T

    @property
    def spawned_total(self) -> int:
        return len(self.vehicles)

    @property
    def active_total(self) -> int:
        return self.spawned_total - self.completed_total

    def is_decision_point(self) -> bool:
        return self.step_index % self.config.decision_interval == 0

    def lane_vehicles(self, lane_id: str) -> List[Vehicle]:
        """Автомобили на полосе от стоп-линии к началу полосы"""
        return self.lanes[lane_id]

    def is_queued(self, vehicle: Vehicle) -> bool:
        return vehicle.speed < self.config.v_stop

    def queue_length(self, intersection_id: str) -> int:
        intersection = self.network.intersection(intersection_id)
        return sum(
            1 for lane_id in intersection.upstream_lanes
            for v in self.lanes[lane_id] if self.is_queued(v)
        )

    def emergency_states(self) -> List[EmergencyVehicleState]:
        """Состояния активного спецтранспорта, по ID"""
        states = []
        for vehicle in self.vehicles.values():
            if not vehicle.is_emergency or vehicle.finish_step is not None:
                continue
            remaining = vehicle.remaining_lanes()
            head = self._head[vehicle.lane]
            next_movement = None
            if head is not None and vehicle.next_movement is not None:
                movement = self.network.intersection(head).movement(vehicle.next_movement)
                next_movement = (movement.from_lane, movement.to_lane)
            states.append(EmergencyVehicleState(
                vehicle_id=vehicle.id,
                planned_route=remaining,
                planned_roads=[self.network.lane_road(lane_id) for lane_id in remaining],
                lane=vehicle.lane,
                distance_to_stop_line=vehicle.distance,
                speed=vehicle.speed,
                next_movement=next_movement,
            ))
        return sorted(states, key=lambda s: s.vehicle_id)

    def step(self, phases: Optional[Mapping[str, int]] = None) -> StepOutcome:
        """
        Продвинуть симуляцию на один шаг

        Args:
            phases: Активная фаза по ID перекрестка; отсутствующие
                перекрестки сохраняют предыдущую фазу

        Returns:
            StepOutcome шага

        Raises:
            InvalidPhaseError: Неизвестный перекресток или индекс фазы
            PreconditionError: Горизонт T уже достигнут
        """
        if self.finished:
            raise PreconditionError(f"Simulation already reached T={self.config.T}")

        for iid, phase in (phases or {}).items():
            if iid not in self._phase_sets:
                raise InvalidPhaseError(iid, phase, {"reason": "unknown intersection"})
            if isinstance(phase, bool) or not isinstance(phase, (int, np.integer)) \
                    or not 1 <= phase <= len(self._phase_sets[iid]):
                raise InvalidPhaseError(iid, phase, {"phase_count": len(self._phase_sets[iid])})
        self.active_phases.update({iid: int(p) for iid, p in (phases or {}).items()})

        step = self.step_index
        dt = self.config.step_length

        if self.is_decision_point():
            self.queue_trace.append({iid: self.queue_length(iid) for iid in self.intersection_ids})
            self.interval_wte = {iid: 0.0 for iid in self.intersection_ids}

        self._spawn(step)
        self._move(step)
        discharged = self._discharge()

        for vehicle in self.vehicles.values():
            if vehicle.finish_step is not None or not self.is_queued(vehicle):
                continue
            vehicle.waiting += dt
            if vehicle.is_emergency:
                head = self._head[vehicle.lane]
                if head is not None:
                    self.interval_wte[head] += dt

        self.step_index += 1
        return StepOutcome(
            step=step,
            queue_length={iid: self.queue_length(iid) for iid in self.intersection_ids},
            emergency_waiting=dict(self.interval_wte),
            discharged=discharged,
            spawned_total=self.spawned_total,
            active_total=self.active_total,
            completed_total=self.completed_total,
        )

    def _spawn(self, step: int) -> None:
        rng = np.random.default_rng([self.config.seed, step])
        arrivals = spawn_arrivals(rng, self.config, self.routes, step)
        for vehicle_id, route in self._emergencies.get(step, []):
            arrivals.append(Vehicle(
                id=vehicle_id, vehicle_class=VehicleClass.EMERGENCY, route=route, spawn_step=step
            ))
        for vehicle in arrivals:
            self._enter_lane(vehicle)
            self.vehicles[vehicle.id] = vehicle
            if vehicle.is_emergency:
                sim_logger.info(f"Emergency vehicle {vehicle.id} entered at step {step} on {vehicle.lane}")

    def _enter_lane(self, vehicle: Vehicle) -> None:
        vehicle.distance = self.network.lane(vehicle.lane).length
        vehicle.speed = self.config.free_flow_speed
        self.lanes[vehicle.lane].append(vehicle)

    def _move(self, step: int) -> None:
        advance = self.config.free_flow_speed * self.config.step_length
        spacing = self.config.jam_spacing

        for lane_id, vehicles in self.lanes.items():
            if not vehicles:
                continue
            length = self.network.lane(lane_id).length
            exit_lane = self._head[lane_id] is None
            remaining: List[Vehicle] = []
            queued = 0
            for vehicle in vehicles:
                if self.is_queued(vehicle) and not exit_lane:
                    vehicle.distance = min(queued * spacing, length)
                    queued += 1
                    remaining.append(vehicle)
                    continue
                distance = vehicle.distance - advance
                if exit_lane:
                    if distance <= 0:
                        vehicle.finish_step = step + 1
                        vehicle.distance = 0.0
                        self.completed_total += 1
                        continue
                    vehicle.distance = distance
                elif distance <= queued * spacing:
                    vehicle.distance = min(queued * spacing, length)
                    vehicle.speed = 0.0
                    queued += 1
                else:
                    vehicle.distance = distance
                remaining.append(vehicle)
            self.lanes[lane_id] = remaining

    def _discharge(self) -> Dict[str, int]:
        discharged = {iid: 0 for iid in self.intersection_ids}
        gain = self.config.step_length / self.config.saturation_headway

        for lane_id, vehicles in self.lanes.items():
            head = self._head[lane_id]
            if head is None:
                continue
            green = self._phase_sets[head][self.active_phases[head] - 1]
            if not vehicles or not self.is_queued(vehicles[0]) or vehicles[0].next_movement not in green:
                self.credit[lane_id] = 0.0
                continue

            self.credit[lane_id] += gain
            while (
                self.credit[lane_id] >= 1.0
                and vehicles
                and self.is_queued(vehicles[0])
                and vehicles[0].next_movement in green
            ):
                vehicle = vehicles.pop(0)
                self.credit[lane_id] -= 1.0
                vehicle.route_index += 1
                self._enter_lane(vehicle)
                discharged[head] += 1
            if not vehicles:
                self.credit[lane_id] = 0.0
        return discharged

    def metrics(self) -> MetricsReport:
        """
        Итоговые метрики; незавершенные поездки цензурируются на горизонте

        Raises:
            PreconditionError: Симуляция еще не дошла до T
        """
        if not self.finished:
            raise PreconditionError(
                f"Metrics need a finished run: step {self.step_index} < T={self.config.T}"
            )
        dt = self.config.step_length

        def travel(vehicle: Vehicle) -> float:
            end = vehicle.finish_step if vehicle.finish_step is not None else self.config.T
            return (end - vehicle.spawn_step) * dt

        vehicles = list(self.vehicles.values())
        emergencies = sorted((v for v in vehicles if v.is_emergency), key=lambda v: v.id)

        report = MetricsReport(
            ATT=float(np.mean([travel(v) for v in vehicles])) if vehicles else 0.0,
            AWT=float(np.mean([v.waiting for v in vehicles])) if vehicles else 0.0,
            AQL=average_queue_length(self.queue_trace),
            ATTE=float(np.mean([travel(v) for v in emergencies])) if emergencies else None,
            AWTE=float(np.mean([v.waiting for v in emergencies])) if emergencies else None,
            emergency_travel_times={v.id: travel(v) for v in emergencies},
            vehicles_spawned=len(vehicles),
            vehicles_completed=self.completed_total,
        )
        sim_logger.info(
            f"Run metrics: ATT={report.ATT:.2f}s | AWT={report.AWT:.2f}s | AQL={report.AQL:.2f} | "
            f"ATTE={report.ATTE} | AWTE={report.AWTE}"
        )
        return report
