"""
Модуль статической модели дорожной сети

Сеть - ориентированный граф: узлы (перекрестки и граничные узлы), дороги
между ними, полосы дорог. Каждый перекресток описывает входящие и исходящие
полосы, разрешенные движения (полоса -> полоса) и таблицу фаз.
"""
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Set, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr
from pydantic import ValidationError as PydanticValidationError

from src.utils.error_handler import ParseError, PreconditionError, ValidationError
from src.utils.logger import sim_logger


class Shape(str, Enum):
    """Форма перекрестка"""
    CROSS = "Cross"
    TEE = "Tee"
    WYE = "Wye"
    ROUNDABOUT = "Roundabout"


class Turn(str, Enum):
    """Тип маневра"""
    THROUGH = "Through"
    LEFT = "Left"
    RIGHT = "Right"
    UTURN = "UTurn"


class NodeKind(str, Enum):
    """Тип узла графа"""
    INTERSECTION = "intersection"
    BOUNDARY = "boundary"


class Node(BaseModel):
    """Узел сети"""
    model_config = ConfigDict(frozen=True)

    id: str
    kind: NodeKind


class Road(BaseModel):
    """Направленная дорога между двумя узлами"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    id: str
    from_node: str = Field(alias="from")
    to_node: str = Field(alias="to")


class Lane(BaseModel):
    """Полоса дороги"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    id: str
    road: str
    length: float
    index_within_road: int = Field(alias="index")


class TrafficMovement(BaseModel):
    """Движение через перекресток: входящая полоса -> исходящая полоса"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    id: str
    from_lane: str = Field(alias="from")
    to_lane: str = Field(alias="to")
    turn: Turn


class SignalPhase(BaseModel):
    """Фаза светофора - набор одновременно разрешенных движений"""
    model_config = ConfigDict(frozen=True)

    index: int
    movements: List[str]


class Intersection(BaseModel):
    """Регулируемый перекресток"""
    model_config = ConfigDict(frozen=True)

    id: str
    shape: Shape
    upstream_lanes: List[str]
    downstream_lanes: List[str]
    movements: List[TrafficMovement]
    phases: List[SignalPhase]

    _movement_index: Dict[str, TrafficMovement] = PrivateAttr(default_factory=dict)
    _lane_movements: Dict[str, List[TrafficMovement]] = PrivateAttr(default_factory=dict)
    _approaches: Optional[List[Tuple[str, int]]] = PrivateAttr(default=None)

    def model_post_init(self, __context: Any) -> None:
        for movement in self.movements:
            self._movement_index[movement.id] = movement
            self._lane_movements.setdefault(movement.from_lane, []).append(movement)

    @property
    def phase_count(self) -> int:
        """Количество фаз J_i"""
        return len(self.phases)

    @property
    def approaches(self) -> List[Tuple[str, int]]:
        """Входящие дороги и число их полос в порядке объявления полос"""
        if self._approaches is None:
            raise PreconditionError(
                f"Intersection {self.id} is not attached to a road network"
            )
        return self._approaches

    @property
    def type_signature(self) -> str:
        """Канонический тип перекрестка"""
        return intersection_type_id(self)

    def movement(self, movement_id: str) -> TrafficMovement:
        return self._movement_index[movement_id]

    def lane_movements(self, lane_id: str) -> List[TrafficMovement]:
        return self._lane_movements.get(lane_id, [])

    def phase(self, index: int) -> SignalPhase:
        return self.phases[index - 1]

    def phase_movements(self, index: int) -> List[TrafficMovement]:
        return [self._movement_index[m] for m in self.phase(index).movements]

    def phase_lanes(self, index: int) -> List[str]:
        """Входящие полосы фазы в порядке первого появления"""
        lanes: List[str] = []
        for movement in self.phase_movements(index):
            if movement.from_lane not in lanes:
                lanes.append(movement.from_lane)
        return lanes

    def phases_serving(self, movement_id: str) -> List[int]:
        return [p.index for p in self.phases if movement_id in p.movements]


class RoadNetwork(BaseModel):
    """Дорожная сеть"""
    model_config = ConfigDict(frozen=True)

    nodes: List[Node]
    roads: List[Road]
    lanes: List[Lane]
    intersections: List[Intersection]

    _nodes: Dict[str, Node] = PrivateAttr(default_factory=dict)
    _roads: Dict[str, Road] = PrivateAttr(default_factory=dict)
    _lanes: Dict[str, Lane] = PrivateAttr(default_factory=dict)
    _road_lanes: Dict[str, List[str]] = PrivateAttr(default_factory=dict)
    _intersections: Dict[str, Intersection] = PrivateAttr(default_factory=dict)

    def model_post_init(self, __context: Any) -> None:
        # Индексы строятся терпимо к битым ссылкам: их находит validate_network
        self._nodes = {n.id: n for n in self.nodes}
        self._roads = {r.id: r for r in self.roads}
        self._lanes = {lane.id: lane for lane in self.lanes}
        for lane in sorted(self.lanes, key=lambda x: (x.road, x.index_within_road)):
            self._road_lanes.setdefault(lane.road, []).append(lane.id)
        self._intersections = {i.id: i for i in self.intersections}

        for intersection in self.intersections:
            counts: Dict[str, int] = {}
            for lane_id in intersection.upstream_lanes:
                lane = self._lanes.get(lane_id)
                road_id = lane.road if lane else lane_id
                counts[road_id] = counts.get(road_id, 0) + 1
            intersection._approaches = list(counts.items())

    @property
    def boundary_nodes(self) -> List[str]:
        return [n.id for n in self.nodes if n.kind == NodeKind.BOUNDARY]

    @property
    def intersection_ids(self) -> List[str]:
        return sorted(self._intersections)

    def node(self, node_id: str) -> Node:
        return self._nodes[node_id]

    def road(self, road_id: str) -> Road:
        return self._roads[road_id]

    def lane(self, lane_id: str) -> Lane:
        return self._lanes[lane_id]

    def intersection(self, intersection_id: str) -> Intersection:
        return self._intersections[intersection_id]

    def road_lanes(self, road_id: str) -> List[str]:
        """Полосы дороги по возрастанию индекса"""
        return self._road_lanes.get(road_id, [])

    def road_length(self, road_id: str) -> float:
        return max(self._lanes[lane_id].length for lane_id in self.road_lanes(road_id))

    def lane_road(self, lane_id: str) -> str:
        return self._lanes[lane_id].road

    def head_intersection(self, lane_id: str) -> Optional[str]:
        """Перекресток, стоп-линия которого завершает полосу"""
        road = self._roads[self._lanes[lane_id].road]
        if road.to_node in self._intersections:
            return road.to_node
        return None

    def is_exit_lane(self, lane_id: str) -> bool:
        return self.head_intersection(lane_id) is None


def intersection_type_id(intersection: Intersection) -> str:
    """
    Построить каноническую сигнатуру типа перекрестка

    Сигнатура = форма, отсортированные количества полос по подходам,
    число фаз J_i (не число подходов).
    Пример: "Cross:2-2-2-2:J4"

    Args:
        intersection: Перекресток, загруженный в составе сети

    Returns:
        Строка-сигнатура
    """
    counts = sorted(count for _, count in intersection.approaches)
    lanes = "-".join(str(c) for c in counts)
    return f"{intersection.shape.value}:{lanes}:J{intersection.phase_count}"


def count_intersection_types(network: RoadNetwork) -> Dict[str, int]:
    """Число перекрестков каждого типа; len(результата) = N"""
    types: Dict[str, int] = {}
    for intersection in network.intersections:
        signature = intersection.type_signature
        types[signature] = types.get(signature, 0) + 1
    return dict(sorted(types.items()))


def validate_network(network: RoadNetwork) -> None:
    """
    Проверить ссылочную целостность и покрытие движений фазами

    Args:
        network: Разобранная сеть

    Raises:
        ValidationError: Со списком всех найденных проблем в details["problems"]
    """
    problems: List[str] = []

    def unique(kind: str, ids: List[str]) -> None:
        seen: Set[str] = set()
        for item_id in ids:
            if item_id in seen:
                problems.append(f"duplicate {kind} id {item_id}")
            seen.add(item_id)

    unique("node", [n.id for n in network.nodes])
    unique("road", [r.id for r in network.roads])
    unique("lane", [lane.id for lane in network.lanes])
    unique("intersection", [i.id for i in network.intersections])

    node_ids = {n.id for n in network.nodes}
    intersection_nodes = {n.id for n in network.nodes if n.kind == NodeKind.INTERSECTION}
    road_ids = {r.id for r in network.roads}
    lanes = {lane.id: lane for lane in network.lanes}
    roads = {r.id: r for r in network.roads}

    if not network.intersections:
        problems.append("network has no intersections")

    for road in network.roads:
        for endpoint in (road.from_node, road.to_node):
            if endpoint not in node_ids:
                problems.append(f"road {road.id} references unknown node {endpoint}")

    road_indices: Dict[str, Set[int]] = {}
    for lane in network.lanes:
        if lane.road not in road_ids:
            problems.append(f"lane {lane.id} references unknown road {lane.road}")
        if not lane.length > 0:
            problems.append(f"lane {lane.id} has non-positive length {lane.length}")
        if lane.index_within_road < 1:
            problems.append(f"lane {lane.id} has index {lane.index_within_road} < 1")
        indices = road_indices.setdefault(lane.road, set())
        if lane.index_within_road in indices:
            problems.append(f"road {lane.road} has two lanes with index {lane.index_within_road}")
        indices.add(lane.index_within_road)

    for road in network.roads:
        if road.id not in road_indices:
            problems.append(f"road {road.id} has no lanes")

    declared = {i.id for i in network.intersections}
    for node_id in sorted(intersection_nodes - declared):
        problems.append(f"intersection node {node_id} has no intersection entry")

    for intersection in network.intersections:
        problems.extend(_intersection_problems(intersection, intersection_nodes, lanes, roads))

    if problems:
        raise ValidationError(
            f"{problems[0]} ({len(problems)} problem(s) in total)",
            {"problems": problems}
        )


def _intersection_problems(
    intersection: Intersection,
    intersection_nodes: Set[str],
    lanes: Dict[str, Lane],
    roads: Dict[str, Road]
) -> List[str]:
    """Проблемы одного перекрестка"""
    problems: List[str] = []
    iid = intersection.id

    if iid not in intersection_nodes:
        problems.append(f"intersection {iid} is not an intersection node")

    upstream = set(intersection.upstream_lanes)
    downstream = set(intersection.downstream_lanes)

    for lane_id in sorted(upstream & downstream):
        problems.append(f"intersection {iid}: lane {lane_id} is both upstream and downstream")

    for lane_id in intersection.upstream_lanes:
        lane = lanes.get(lane_id)
        if lane is None:
            problems.append(f"intersection {iid}: unknown upstream lane {lane_id}")
        elif lane.road in roads and roads[lane.road].to_node != iid:
            problems.append(f"intersection {iid}: upstream lane {lane_id} does not end here")

    for lane_id in intersection.downstream_lanes:
        lane = lanes.get(lane_id)
        if lane is None:
            problems.append(f"intersection {iid}: unknown downstream lane {lane_id}")
        elif lane.road in roads and roads[lane.road].from_node != iid:
            problems.append(f"intersection {iid}: downstream lane {lane_id} does not start here")

    for lane in lanes.values():
        road = roads.get(lane.road)
        if road is None:
            continue
        if road.to_node == iid and lane.id not in upstream:
            problems.append(f"intersection {iid}: entering lane {lane.id} is not listed upstream")
        if road.from_node == iid and lane.id not in downstream:
            problems.append(f"intersection {iid}: leaving lane {lane.id} is not listed downstream")

    movement_ids: Set[str] = set()
    served_lanes: Set[str] = set()
    for movement in intersection.movements:
        if movement.id in movement_ids:
            problems.append(f"intersection {iid}: duplicate movement id {movement.id}")
        movement_ids.add(movement.id)
        served_lanes.add(movement.from_lane)
        if movement.from_lane not in upstream:
            problems.append(f"intersection {iid}: movement {movement.id} starts off an upstream lane")
        if movement.to_lane not in downstream:
            problems.append(f"intersection {iid}: movement {movement.id} ends off a downstream lane")

    for lane_id in intersection.upstream_lanes:
        if lane_id not in served_lanes:
            problems.append(f"intersection {iid}: upstream lane {lane_id} has no movement")

    if len(intersection.phases) < 2:
        problems.append(f"intersection {iid}: needs at least 2 phases, has {len(intersection.phases)}")

    indices = [p.index for p in intersection.phases]
    if indices != list(range(1, len(indices) + 1)):
        problems.append(f"intersection {iid}: phase indices {indices} are not contiguous from 1")

    covered: Set[str] = set()
    for phase in intersection.phases:
        if not phase.movements:
            problems.append(f"intersection {iid}: phase {phase.index} is empty")
        for movement_id in phase.movements:
            if movement_id not in movement_ids:
                problems.append(
                    f"intersection {iid}: phase {phase.index} references undeclared movement {movement_id}"
                )
            covered.add(movement_id)

    for movement in intersection.movements:
        if movement.id not in covered:
            problems.append(f"intersection {iid}: movement {movement.id} is in no phase")

    return problems


def load_network(document: Union[str, Path, Dict[str, Any]]) -> RoadNetwork:
    """
    Загрузить и проверить сеть

    Args:
        document: Путь к .net.json, JSON-текст или уже разобранный словарь

    Returns:
        Проверенная RoadNetwork

    Raises:
        ParseError: Документ не разбирается
        ValidationError: Битые ссылки, непокрытые движения, пустые фазы
    """
    source = "<dict>"
    if isinstance(document, dict):
        data = document
    else:
        if isinstance(document, Path) or not document.lstrip().startswith("{"):
            source = str(document)
            try:
                text = Path(document).read_text(encoding="utf-8")
            except OSError as e:
                raise ParseError(f"Cannot read network file {source}: {e}", {"path": source})
        else:
            source, text = "<text>", document
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(
                f"Malformed network document {source}: {e.msg}",
                {"line": e.lineno, "column": e.colno}
            )

    try:
        network = RoadNetwork.model_validate(data)
    except PydanticValidationError as e:
        raise ParseError(
            f"Network document {source} does not match the schema",
            {"errors": [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]}
        )

    validate_network(network)

    sim_logger.info(
        f"Loaded network {source}: {len(network.intersections)} intersections, "
        f"{len(network.roads)} roads, {len(network.lanes)} lanes"
    )
    return network


def serialize_network(network: RoadNetwork) -> str:
    """Сериализовать сеть в JSON-документ .net.json"""
    return json.dumps(network.model_dump(mode="json", by_alias=True), indent=2) + "\n"


def save_network(network: RoadNetwork, path: Union[str, Path]) -> Path:
    """Записать сеть в файл"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_network(network), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Построение сетей
# ---------------------------------------------------------------------------

# Подходы по часовой стрелке: следующий подход - левый поворот для въезжающего
ARM_DIRECTIONS = ("east", "south", "west", "north")

TURN_ORDER = (Turn.THROUGH, Turn.RIGHT, Turn.LEFT, Turn.UTURN)

DEFAULT_LANES = {
    Shape.CROSS: 2,
    Shape.TEE: 2,
    Shape.WYE: 1,
    Shape.ROUNDABOUT: 1,
}

_TEE_TURNS = {
    (0, 2): Turn.THROUGH, (0, 1): Turn.LEFT,
    (2, 0): Turn.THROUGH, (2, 1): Turn.RIGHT,
    (1, 2): Turn.LEFT, (1, 0): Turn.RIGHT,
}


def _arm_turn(shape: Shape, arm_count: int, src: int, dst: int) -> Optional[Turn]:
    """
    Маневр с подхода src на подход dst

    Подходы перечислены по часовой стрелке, поэтому смещение 1 - левый
    поворот, смещение arm_count - 1 - правый, независимо от стороны движения.
    У T-образного перекрестка подход 1 - ножка, напротив отсутствующего.
    """
    offset = (dst - src) % arm_count
    if shape == Shape.CROSS:
        return {0: Turn.UTURN, 1: Turn.LEFT, 2: Turn.THROUGH, 3: Turn.RIGHT}[offset]
    if shape == Shape.ROUNDABOUT:
        return {1: Turn.LEFT, 2: Turn.THROUGH, 3: Turn.RIGHT}.get(offset)
    if shape == Shape.WYE:
        return {1: Turn.LEFT, 2: Turn.RIGHT}.get(offset)
    return _TEE_TURNS.get((src, dst))


def _lane_turns(turns: Set[Turn], lane_count: int) -> List[List[Turn]]:
    """
    Распределить маневры подхода по полосам

    Полоса 1 - левые повороты и развороты, последняя - правые и прямо,
    средние - прямо. Каждая полоса получает хотя бы один маневр.
    """
    ordered = [t for t in TURN_ORDER if t in turns]
    if lane_count == 1:
        return [ordered]

    left_side = [t for t in (Turn.LEFT, Turn.UTURN) if t in turns]
    through = [Turn.THROUGH] if Turn.THROUGH in turns else []
    right = [Turn.RIGHT] if Turn.RIGHT in turns else []

    lanes: List[List[Turn]] = []
    for j in range(1, lane_count + 1):
        if j == 1:
            serve = left_side or through or right
        elif j == lane_count:
            serve = (through + right) or left_side
        else:
            serve = through or left_side[:1] or right
        lanes.append(serve)
    return lanes


@dataclass
class _IntersectionSpec:
    node_id: str
    shape: Shape
    lanes: int
    directions: List[str]


class NetworkBuilder:
    """Сборщик сетей из перекрестков четырех форм"""

    def __init__(self, lane_length: float = 300.0):
        self.lane_length = lane_length
        self._specs: Dict[str, _IntersectionSpec] = {}
        self._links: Dict[Tuple[str, str], Tuple[str, str]] = {}
        self._link_order: List[Tuple[Tuple[str, str], Tuple[str, str]]] = []

    def add_intersection(
        self,
        node_id: str,
        shape: Shape,
        lanes_per_approach: Optional[int] = None,
        missing: str = "south"
    ) -> "NetworkBuilder":
        """
        Добавить перекресток

        Args:
            node_id: ID узла
            shape: Форма
            lanes_per_approach: Полос на каждом входящем подходе
            missing: Отсутствующее направление для трехлучевых форм
        """
        if node_id in self._specs:
            raise PreconditionError(f"Intersection {node_id} already added")
        lanes = lanes_per_approach or DEFAULT_LANES[shape]
        if shape in (Shape.CROSS, Shape.ROUNDABOUT):
            directions = list(ARM_DIRECTIONS)
        else:
            start = ARM_DIRECTIONS.index(missing) + 1
            directions = [ARM_DIRECTIONS[(start + k) % 4] for k in range(3)]
        self._specs[node_id] = _IntersectionSpec(node_id, shape, lanes, directions)
        return self

    def connect(self, a: str, direction_a: str, b: str, direction_b: str) -> "NetworkBuilder":
        """Соединить подход direction_a узла a с подходом direction_b узла b парой дорог"""
        for node_id, direction in ((a, direction_a), (b, direction_b)):
            if direction not in self._specs[node_id].directions:
                raise PreconditionError(f"Intersection {node_id} has no {direction} arm")
            if (node_id, direction) in self._links:
                raise PreconditionError(f"Arm {direction} of {node_id} is already connected")
        self._links[(a, direction_a)] = (b, direction_b)
        self._links[(b, direction_b)] = (a, direction_a)
        self._link_order.append(((a, direction_a), (b, direction_b)))
        return self

    def build(self) -> RoadNetwork:
        """Собрать и проверить сеть"""
        nodes = [Node(id=s.node_id, kind=NodeKind.INTERSECTION) for s in self._specs.values()]
        roads: List[Road] = []
        lanes: List[Lane] = []
        road_lane_count: Dict[str, int] = {}
        # (узел, направление) -> (входящая дорога, исходящая дорога)
        arm_roads: Dict[Tuple[str, str], Tuple[str, str]] = {}

        def add_road(road_id: str, src: str, dst: str, lane_count: int) -> None:
            roads.append(Road(id=road_id, from_node=src, to_node=dst))
            road_lane_count[road_id] = lane_count
            for j in range(1, lane_count + 1):
                lanes.append(Lane(
                    id=f"{road_id}_{j}", road=road_id, length=self.lane_length, index_within_road=j
                ))

        counter = 1
        for (a, da), (b, db) in self._link_order:
            forward, backward = f"road#{counter}", f"-road#{counter}"
            add_road(forward, a, b, self._specs[b].lanes)
            add_road(backward, b, a, self._specs[a].lanes)
            arm_roads[(b, db)] = (forward, backward)
            arm_roads[(a, da)] = (backward, forward)
            counter += 1

        boundary = 1
        for spec in self._specs.values():
            for direction in spec.directions:
                if (spec.node_id, direction) in arm_roads:
                    continue
                boundary_id = f"B{boundary}"
                boundary += 1
                nodes.append(Node(id=boundary_id, kind=NodeKind.BOUNDARY))
                incoming, outgoing = f"road#{counter}", f"-road#{counter}"
                add_road(incoming, boundary_id, spec.node_id, spec.lanes)
                add_road(outgoing, spec.node_id, boundary_id, spec.lanes)
                arm_roads[(spec.node_id, direction)] = (incoming, outgoing)
                counter += 1

        intersections = [
            self._build_intersection(spec, arm_roads, road_lane_count)
            for spec in self._specs.values()
        ]
        network = RoadNetwork(nodes=nodes, roads=roads, lanes=lanes, intersections=intersections)
        validate_network(network)
        return network

    def _build_intersection(
        self,
        spec: _IntersectionSpec,
        arm_roads: Dict[Tuple[str, str], Tuple[str, str]],
        road_lane_count: Dict[str, int]
    ) -> Intersection:
        arms = [arm_roads[(spec.node_id, d)] for d in spec.directions]
        arm_count = len(arms)

        upstream = [f"{arms[k][0]}_{j}" for k in range(arm_count) for j in range(1, spec.lanes + 1)]
        downstream = [
            f"{arms[k][1]}_{j}"
            for k in range(arm_count)
            for j in range(1, road_lane_count[arms[k][1]] + 1)
        ]

        movements: List[TrafficMovement] = []
        # (подход, полоса) -> ID движений
        lane_moves: Dict[Tuple[int, int], List[str]] = {}
        lane_turn_table: Dict[Tuple[int, int], List[Turn]] = {}

        for k in range(arm_count):
            destinations: Dict[Turn, int] = {}
            for m in range(arm_count):
                turn = _arm_turn(spec.shape, arm_count, k, m)
                if turn is not None:
                    destinations[turn] = m
            for j, turns in enumerate(_lane_turns(set(destinations), spec.lanes), start=1):
                from_lane = f"{arms[k][0]}_{j}"
                lane_turn_table[(k, j)] = turns
                for turn in turns:
                    out_road = arms[destinations[turn]][1]
                    to_lane = f"{out_road}_{min(j, road_lane_count[out_road])}"
                    movement = TrafficMovement(
                        id=f"{from_lane}->{to_lane}", from_lane=from_lane, to_lane=to_lane, turn=turn
                    )
                    movements.append(movement)
                    lane_moves.setdefault((k, j), []).append(movement.id)

        groups = _phase_groups(spec.shape, arm_count, spec.lanes, lane_turn_table)
        phases = [
            SignalPhase(index=p, movements=[m for lane in group for m in lane_moves[lane]])
            for p, group in enumerate(groups, start=1)
        ]
        return Intersection(
            id=spec.node_id,
            shape=spec.shape,
            upstream_lanes=upstream,
            downstream_lanes=downstream,
            movements=movements,
            phases=phases,
        )


def _phase_groups(
    shape: Shape,
    arm_count: int,
    lane_count: int,
    lane_turns: Dict[Tuple[int, int], List[Turn]]
) -> List[List[Tuple[int, int]]]:
    """Таблица фаз как списки целых полос (подход, индекс полосы)"""
    all_lanes = range(1, lane_count + 1)

    if shape == Shape.CROSS:
        if lane_count == 1:
            return [[(0, 1), (2, 1)], [(1, 1), (3, 1)]]
        straight = range(2, lane_count + 1)
        return [
            [(0, j) for j in straight] + [(2, j) for j in straight],
            [(0, 1), (2, 1)],
            [(1, j) for j in straight] + [(3, j) for j in straight],
            [(1, 1), (3, 1)],
        ]

    if shape == Shape.TEE:
        main_through = [(0, j) for j in all_lanes if Turn.LEFT not in lane_turns[(0, j)]]
        return [
            main_through + [(2, j) for j in all_lanes],
            [(0, j) for j in all_lanes],
            [(1, j) for j in all_lanes],
        ]

    # Круговое движение и Y-перекресток: одна фаза на подход
    return [[(k, j) for j in all_lanes] for k in range(arm_count)]


def builtin_templates(lanes_per_approach: Optional[int] = None) -> Dict[Shape, RoadNetwork]:
    """
    Каталог шаблонов перекрестков четырех форм

    Каждый шаблон - изолированный перекресток "I1" с граничными узлами
    на всех подходах; дороги подходов road#1..road#n, исходящие -road#k.

    Args:
        lanes_per_approach: Полос на подход (по умолчанию - типовое для формы)

    Returns:
        Словарь форма -> сеть из одного перекрестка
    """
    templates = {}
    for shape in Shape:
        builder = NetworkBuilder().add_intersection("I1", shape, lanes_per_approach)
        templates[shape] = builder.build()
    return templates


def heterogeneous_grid(
    rows: int,
    cols: int,
    roundabouts: int = 0,
    lane_length: float = 300.0
) -> RoadNetwork:
    """
    Решетка с перекрестками разных форм

    Верхний и нижний ряды чередуют T/Y/T-перекрестки (последний столбец -
    крестообразный), внутренние ряды крестообразные. Кольца примыкают с
    востока к последнему столбцу рядов 0..roundabouts-1.
    """
    if rows < 2 or cols < 1 or roundabouts > rows:
        raise PreconditionError(f"Unsupported grid {rows}x{cols} with {roundabouts} roundabouts")

    edge_pattern = (Shape.TEE, Shape.WYE, Shape.TEE)
    builder = NetworkBuilder(lane_length=lane_length)

    def node_id(r: int, c: int) -> str:
        return f"I{r:02d}{c:02d}"

    for r in range(rows):
        for c in range(cols):
            edge_row = r in (0, rows - 1)
            shape = edge_pattern[c % 3] if edge_row and c != cols - 1 else Shape.CROSS
            builder.add_intersection(node_id(r, c), shape, missing="north" if r == 0 else "south")

    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                builder.connect(node_id(r, c), "east", node_id(r, c + 1), "west")
            if r + 1 < rows:
                builder.connect(node_id(r, c), "south", node_id(r + 1, c), "north")

    for k in range(roundabouts):
        ring = f"R{k + 1:02d}"
        builder.add_intersection(ring, Shape.ROUNDABOUT)
        builder.connect(node_id(k, cols - 1), "east", ring, "west")

    return builder.build()


BUILTIN_NETWORKS: Dict[str, Callable[[], RoadNetwork]] = {
    "cross": lambda: builtin_templates()[Shape.CROSS],
    "tee": lambda: builtin_templates()[Shape.TEE],
    "wye": lambda: builtin_templates()[Shape.WYE],
    "roundabout": lambda: builtin_templates()[Shape.ROUNDABOUT],
    "jinan_like": lambda: heterogeneous_grid(4, 4, roundabouts=1),
    "hangzhou_like": lambda: heterogeneous_grid(4, 4, roundabouts=3),
    "yizhuang_like": lambda: heterogeneous_grid(12, 14, roundabouts=9),
}


def resolve_network(reference: Union[str, Path]) -> RoadNetwork:
    """
    Загрузить сеть по ссылке из сценария

    Args:
        reference: "builtin:<имя>" или путь к .net.json

    Returns:
        Проверенная сеть
    """
    reference = str(reference)
    if reference.startswith("builtin:"):
        name = reference.split(":", 1)[1]
        if name not in BUILTIN_NETWORKS:
            raise ValidationError(
                f"Unknown built-in network {name!r}",
                {"available": sorted(BUILTIN_NETWORKS)}
            )
        return BUILTIN_NETWORKS[name]()
    return load_network(Path(reference))
