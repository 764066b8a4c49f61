"""
Общие фикстуры тестов
"""
import json
import sys
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).parent.parent))

from src.core.llm_client import BackendConfig, BackendKind, LLMClient
from src.core.network_model import Shape, builtin_templates
from src.core.observation import LaneState, build_observation
from src.core.traffic_sim import EmergencyVehicleState
from src.core.vector_store import GuidanceItem
from tests.test_cases import SAMPLE_EMERGENCY, SAMPLE_GUIDANCE, SAMPLE_LANE_COUNTS


@pytest.fixture
def cross_network():
    """Крестообразный перекресток I1 с двумя полосами на подход"""
    return builtin_templates()[Shape.CROSS]


@pytest.fixture
def sample_obs(cross_network):
    states = {
        lane: LaneState(lane=lane, queued=q, far=f, mid=m, near=n)
        for lane, (q, f, m, n) in SAMPLE_LANE_COUNTS.items()
    }
    return build_observation(cross_network, "I1", states)


@pytest.fixture
def sample_ev():
    return EmergencyVehicleState(
        planned_route=[f"{road}_1" for road in SAMPLE_EMERGENCY["planned_roads"][2:]],
        **SAMPLE_EMERGENCY,
    )


@pytest.fixture
def sample_guidance():
    return GuidanceItem(**SAMPLE_GUIDANCE)


@pytest.fixture
def mock_client():
    return LLMClient(BackendConfig(kind=BackendKind.MOCK))


@pytest.fixture
def write_scenario(tmp_path):
    """Фабрика файлов сценария во временной директории"""

    def _write(network: str = "builtin:cross", name: str = "test", **simulation) -> Path:
        path = tmp_path / f"{name}.scenario.json"
        path.write_text(json.dumps({
            "name": name,
            "network": network,
            "simulation": simulation,
        }), encoding="utf-8")
        return path

    return _write
