"""
Тесты стенда: сценарии, прогоны, отбор траекторий, сравнение политик, CLI
"""
import json
import sys
import time
from pathlib import Path

import pandas as pd
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from src.agents.query_agent import QueryAgent
from src.bench.guidance_builder import build_guidance
from src.bench.reports import build_report, check_comparable, compare, relative_delta
from src.bench.runner import (
    CASES_FILE,
    DECISIONS_FILE,
    LATENCY_FILE,
    METRICS_FILE,
    REFINEMENT_FILE,
    collect_imitation,
    export_refinement,
    run,
    select_imitation,
    simulate,
)
from src.bench.scenario import PolicyKind, RunManifest, load_scenario
from src.core.llm_client import BackendConfig, LLMClient
from src.core.network_model import save_network
from src.core.training import FilterParams, filter_trajectory
from src.core.vector_store import EmbeddingVector, GuidanceItem, GuidanceRepository
from src.main import main
from src.utils.config import settings
from src.utils.error_handler import (
    ParseError,
    PreconditionError,
    ScenarioMismatchError,
    TransportError,
    ValidationError,
    validate_model,
)
from src.utils.logger import RUN_LOG_FILE

SCENARIOS_DIR = Path(__file__).parent.parent / "data" / "scenarios"


def _manifest(scenario: Path, policy: PolicyKind, out: Path, **overrides) -> RunManifest:
    data = {"scenario_path": str(scenario), "policy": policy, "output_dir": str(out), "seed": 7}
    data.update(overrides)
    return validate_model(RunManifest, data, "test manifest")


def _lines(path: Path) -> list:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


def _write_guidance(directory: Path) -> Path:
    """Репозиторий из одной рекомендации с размерностью бэкенда по умолчанию"""
    item = GuidanceItem(id="g0001", situation="s", recommended_action="a", intended_effect="e")
    vector = EmbeddingVector(values=[1.0] + [0.0] * (BackendConfig().embedding_dim - 1))
    GuidanceRepository(items=[item], vectors=[vector]).save(directory)
    return directory


class TestScenario:
    """Тесты сценариев и манифестов"""

    def test_relative_network_path(self, cross_network, write_scenario, tmp_path):
        save_network(cross_network, tmp_path / "cross.net.json")
        scenario = load_scenario(write_scenario(network="cross.net.json", T=60))

        assert scenario.network == str(tmp_path / "cross.net.json")
        assert scenario.simulation.T == 60

    def test_builtin_network_kept(self, write_scenario):
        assert load_scenario(write_scenario()).network == "builtin:cross"

    def test_malformed_scenario(self, tmp_path):
        path = tmp_path / "bad.scenario.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(ParseError):
            load_scenario(path)

    def test_invalid_simulation_field(self, write_scenario):
        with pytest.raises(ValidationError):
            load_scenario(write_scenario(T=0))

    def test_shipped_scenarios_load(self):
        paths = sorted(SCENARIOS_DIR.glob("*.scenario.json"))
        assert paths
        for path in paths:
            assert load_scenario(path).simulation.T == 1800

    def test_remote_policy_needs_remote_backend(self, write_scenario, tmp_path):
        with pytest.raises(ValidationError):
            _manifest(write_scenario(), PolicyKind.REMOTE, tmp_path)

    def test_label(self, write_scenario, tmp_path):
        manifest = _manifest(write_scenario(), PolicyKind.MOCK_HEURISTIC, tmp_path, emergency_gating=False)
        assert manifest.label == "MockHeuristic-NoGating"

    def test_decision_interval_override(self, write_scenario, tmp_path):
        path = write_scenario(T=60, decision_interval=5)
        manifest = _manifest(path, PolicyKind.FIXED_TIME, tmp_path, decision_interval=1)
        config = manifest.simulation_config(load_scenario(path), seed_offset=2)

        assert config.decision_interval == 1
        assert config.seed == 9


class TestRun:
    """Тесты одного прогона"""

    @pytest.mark.asyncio
    async def test_fixed_time_is_reproducible(self, write_scenario, tmp_path):
        path = write_scenario(T=300, M=0, arrival_rate=30.0)
        await run(_manifest(path, PolicyKind.FIXED_TIME, tmp_path / "a"))
        await run(_manifest(path, PolicyKind.FIXED_TIME, tmp_path / "b"))

        first = (tmp_path / "a" / METRICS_FILE).read_bytes()
        assert first == (tmp_path / "b" / METRICS_FILE).read_bytes()
        assert json.loads(first)["policy"] == "FixedTime"

    @pytest.mark.asyncio
    async def test_decision_every_step(self, write_scenario, tmp_path):
        path = write_scenario(T=40, M=0, arrival_rate=20.0)
        result = await simulate(_manifest(path, PolicyKind.FIXED_TIME, tmp_path, decision_interval=1))

        assert len(result.trace) == 40
        assert [row.phase for row in result.trace[:6]] == [1, 2, 3, 4, 1, 2]
        assert result.summary.decision_interval == 1

    @pytest.mark.asyncio
    async def test_random_policy_seeded(self, write_scenario, tmp_path):
        path = write_scenario(T=100, M=0, arrival_rate=20.0)
        first = await simulate(_manifest(path, PolicyKind.RANDOM, tmp_path))
        second = await simulate(_manifest(path, PolicyKind.RANDOM, tmp_path))
        assert [r.phase for r in first.trace] == [r.phase for r in second.trace]

    @pytest.mark.asyncio
    async def test_heuristic_run_artifacts(self, write_scenario, tmp_path):
        path = write_scenario(T=300, M=2, arrival_rate=30.0)
        result = await run(_manifest(path, PolicyKind.MOCK_HEURISTIC, tmp_path, capture_outcomes=True))

        assert len(result.trace) == 60
        assert len(result.trajectories) == sum(1 for r in result.trace if not r.fallback_used)
        assert all(t.type_signature == "Cross:2-2-2-2:J4" for t in result.trajectories)
        assert len(_lines(tmp_path / DECISIONS_FILE)) == 60
        assert len(_lines(tmp_path / CASES_FILE)) == len(result.cases)
        assert len(result.outcomes) == 300
        assert result.metrics.ATTE is not None

        latency = json.loads((tmp_path / LATENCY_FILE).read_text(encoding="utf-8"))
        assert latency["decision_point"]["count"] == 60
        assert latency["signal_decision"]["count"] == 60
        records = _lines(tmp_path / RUN_LOG_FILE)
        in_run = [r for r in records if r.get("scenario") == path.name]
        assert in_run
        assert {r["run"] for r in in_run} == {"MockHeuristic"}

    @pytest.mark.asyncio
    async def test_cases_pair_consecutive_decisions(self, write_scenario, tmp_path):
        path = write_scenario(T=300, M=3, arrival_rate=30.0)
        result = await simulate(_manifest(path, PolicyKind.MOCK_HEURISTIC, tmp_path))

        for case in result.cases:
            assert case.ev_t.lane in case.obs_t.lanes
            assert case.obs_next.step in (case.step + 5, 300)

    @pytest.mark.asyncio
    async def test_no_gating_never_deep(self, write_scenario, tmp_path):
        path = write_scenario(T=200, M=3, arrival_rate=30.0)
        result = await simulate(
            _manifest(path, PolicyKind.MOCK_HEURISTIC, tmp_path, emergency_gating=False)
        )
        assert {row.mode for row in result.trace} == {"Lightweight"}
        assert result.summary.policy == "MockHeuristic-NoGating"

    @pytest.mark.asyncio
    async def test_heterogeneous_network_run(self, write_scenario, tmp_path):
        path = write_scenario(network="builtin:jinan_like", T=300, M=6, arrival_rate=57.14)
        result = await run(_manifest(path, PolicyKind.MOCK_HEURISTIC, tmp_path))

        assert result.summary.intersections == 17
        assert len(result.trace) == 60 * 17
        assert len({t.type_signature for t in result.trajectories}) == 4
        assert json.loads((tmp_path / METRICS_FILE).read_text(encoding="utf-8"))["intersections"] == 17

    @pytest.mark.slow
    @pytest.mark.asyncio
    async def test_large_network_run(self, write_scenario, tmp_path):
        path = write_scenario(network="builtin:yizhuang_like", T=100, M=6, arrival_rate=350.88)
        result = await run(_manifest(path, PolicyKind.MOCK_HEURISTIC, tmp_path))

        assert result.summary.intersections == 177
        assert len(result.trace) == 20 * 177
        assert result.metrics.AQL >= 0.0

    @pytest.mark.asyncio
    async def test_backend_down_during_emergency(self, mocker, write_scenario, tmp_path):
        path = write_scenario(T=200, M=3, arrival_rate=30.0)
        guidance_dir = _write_guidance(tmp_path / "guidance")
        mocker.patch.object(LLMClient, "chat", mocker.AsyncMock(side_effect=TransportError("down")))

        result = await simulate(
            _manifest(path, PolicyKind.MOCK_HEURISTIC, tmp_path / "out", guidance_dir=str(guidance_dir))
        )

        assert len(result.trace) == 40
        assert "Deep" in {row.mode for row in result.trace}
        assert all(row.fallback_used for row in result.trace)
        assert not result.trajectories

    @pytest.mark.asyncio
    async def test_empty_query_keeps_deep_reasoning(self, mocker, write_scenario, tmp_path):
        path = write_scenario(T=200, M=3, arrival_rate=30.0)
        guidance_dir = _write_guidance(tmp_path / "guidance")
        generate_query = mocker.patch.object(
            QueryAgent, "generate_query", mocker.AsyncMock(side_effect=ParseError("empty query"))
        )

        result = await simulate(
            _manifest(path, PolicyKind.MOCK_HEURISTIC, tmp_path / "out", guidance_dir=str(guidance_dir))
        )

        deep = [row for row in result.trace if row.mode == "Deep"]
        assert deep
        assert not any(row.fallback_used for row in deep)
        assert generate_query.await_count == len(deep)


class TestImitation:
    """Тесты отбора траекторий для имитационного датасета"""

    @pytest.mark.asyncio
    async def test_selection_matches_replay(self, write_scenario, tmp_path):
        path = write_scenario(T=300, M=2, arrival_rate=40.0)
        result = await simulate(_manifest(path, PolicyKind.MOCK_HEURISTIC, tmp_path))
        params = FilterParams(t_re=3, eta=0.5)

        kept, stats = select_imitation(result, params)

        expected = []
        for trajectory in result.trajectories:
            rows = [r for r in result.trace if r.intersection_id == trajectory.intersection_id]
            start = [r.step for r in rows].index(trajectory.step)
            window = [r.reward for r in rows[start:start + 3]]
            if len(window) == 3 and filter_trajectory(window, params):
                expected.append(trajectory)
        assert kept == expected
        assert stats["kept"] + stats["rejected"] + stats["truncated"] == len(result.trajectories)
        assert stats["truncated"] == 2

    @pytest.mark.asyncio
    async def test_no_filter_keeps_all(self, write_scenario, tmp_path):
        path = write_scenario(T=100, M=1, arrival_rate=30.0)
        out, stats = await collect_imitation(_manifest(path, PolicyKind.MOCK_HEURISTIC, tmp_path), None)

        records = _lines(out)
        assert len(records) == stats["kept"] == 20
        assert {r["weight"] for r in records} == {1.0}

    @pytest.mark.asyncio
    async def test_unreachable_threshold_writes_empty_file(self, write_scenario, tmp_path):
        path = write_scenario(T=100, M=0, arrival_rate=30.0)
        out, stats = await collect_imitation(
            _manifest(path, PolicyKind.MOCK_HEURISTIC, tmp_path), FilterParams(t_re=1, eta=1e9)
        )
        assert out.read_text(encoding="utf-8") == ""
        assert stats["kept"] == 0


class TestRefinement:
    """Тесты эпох приоритетной выборки"""

    @pytest.mark.asyncio
    async def test_epochs(self, write_scenario, tmp_path):
        path = write_scenario(T=100, M=1, arrival_rate=30.0)
        out = await export_refinement(_manifest(path, PolicyKind.MOCK_HEURISTIC, tmp_path), epochs=2, batch_size=8)

        assert out == tmp_path / REFINEMENT_FILE
        assert len(_lines(out)) == 16
        for epoch in range(2):
            assert (tmp_path / f"epoch{epoch}" / METRICS_FILE).exists()
            assert len(_lines(tmp_path / f"refinement_epoch{epoch}.jsonl")) == 8
        assert len(_lines(tmp_path / "buffers_epoch1.jsonl")) == 40

    @pytest.mark.asyncio
    async def test_clamped_weights(self, write_scenario, tmp_path):
        path = write_scenario(T=100, M=1, arrival_rate=60.0)
        out = await export_refinement(
            _manifest(path, PolicyKind.MOCK_HEURISTIC, tmp_path), epochs=1, batch_size=30, clamp_negative=True
        )
        assert all(r["weight"] >= 0.0 for r in _lines(out))


class TestCompare:
    """Тесты сравнения политик"""

    def test_relative_delta(self):
        assert relative_delta(90.0, 100.0) == pytest.approx(-0.1)
        assert relative_delta(5.0, 0.0) is None
        assert relative_delta(None, 3.0) is None

    def test_mismatched_seeds(self, write_scenario, tmp_path):
        path = write_scenario()
        manifests = [
            _manifest(path, PolicyKind.FIXED_TIME, tmp_path, seed=1),
            _manifest(path, PolicyKind.RANDOM, tmp_path, seed=2),
        ]
        with pytest.raises(ScenarioMismatchError):
            check_comparable(manifests)

    def test_single_manifest(self, write_scenario, tmp_path):
        with pytest.raises(PreconditionError):
            check_comparable([_manifest(write_scenario(), PolicyKind.FIXED_TIME, tmp_path)])

    def test_duplicate_labels(self, write_scenario, tmp_path):
        path = write_scenario()
        with pytest.raises(PreconditionError):
            check_comparable([_manifest(path, PolicyKind.RANDOM, tmp_path)] * 2)

    @pytest.mark.asyncio
    async def test_comparison_table(self, write_scenario, tmp_path):
        path = write_scenario(T=300, M=2, arrival_rate=30.0)
        manifests = [
            _manifest(path, kind, tmp_path / kind.value)
            for kind in (PolicyKind.FIXED_TIME, PolicyKind.RANDOM, PolicyKind.MOCK_HEURISTIC)
        ]
        report = await compare(manifests, "FixedTime", tmp_path / "comparison")

        frame = pd.read_csv(tmp_path / "comparison" / "comparison.csv")
        assert list(frame.columns) == ["policy", "ATT", "AWT", "AQL", "ATTE", "AWTE", "Ambulance_1", "Ambulance_2"]
        assert list(frame["policy"]) == ["FixedTime", "Random", "MockHeuristic"]
        assert report.rows[0].deltas["ATT"] == 0.0

        rebuilt = build_report([row.summary for row in report.rows], "FixedTime")
        assert rebuilt == report
        saved = json.loads((tmp_path / "comparison" / "comparison.json").read_text(encoding="utf-8"))
        assert saved["baseline"] == "FixedTime"

    @pytest.mark.slow
    @pytest.mark.asyncio
    async def test_heuristic_beats_fixed_time_for_emergencies(self, mock_client, tmp_path):
        path = SCENARIOS_DIR / "jinan1.scenario.json"
        await run(_manifest(path, PolicyKind.MOCK_HEURISTIC, tmp_path / "history", seed=1))
        await build_guidance(tmp_path / "history" / CASES_FILE, mock_client, tmp_path / "guidance")
        manifests = [
            _manifest(path, PolicyKind.FIXED_TIME, tmp_path / "fixed", seed=0),
            _manifest(
                path, PolicyKind.MOCK_HEURISTIC, tmp_path / "heuristic", seed=0,
                guidance_dir=str(tmp_path / "guidance"),
            ),
        ]
        start_time = time.time()
        report = await compare(manifests, "FixedTime", tmp_path / "comparison")
        elapsed = time.time() - start_time
        fixed, heuristic = (row.summary.metrics for row in report.rows)

        assert heuristic.AWTE <= 0.5 * fixed.AWTE
        assert elapsed < 300
        assert heuristic.ATT <= 1.05 * fixed.ATT
        assert report.rows[1].deltas["ATT"] < 0


class TestCli:
    """Тесты командной строки"""

    def test_run(self, write_scenario, tmp_path, capsys):
        path = write_scenario(T=60, M=0, arrival_rate=20.0)
        code = main(["run", "--scenario", str(path), "--policy", "FixedTime", "--out", str(tmp_path / "out")])

        assert code == 0
        assert (tmp_path / "out" / METRICS_FILE).exists()
        assert "ATT=" in capsys.readouterr().out

    def test_unknown_policy(self, write_scenario, tmp_path, capsys):
        code = main(["run", "--scenario", str(write_scenario()), "--policy", "Greedy", "--out", str(tmp_path)])

        assert code == 2
        assert "Greedy" in capsys.readouterr().err

    def test_collect_needs_window(self, write_scenario, tmp_path):
        code = main(["collect", "--scenario", str(write_scenario(T=20)), "--out", str(tmp_path)])
        assert code == 2

    def test_missing_scenario(self, tmp_path):
        assert main(["run", "--scenario", str(tmp_path / "absent.json")]) == 2

    def test_remote_without_url(self, write_scenario, tmp_path, monkeypatch):
        monkeypatch.setattr(settings, "llm_base_url", "")
        code = main(["run", "--scenario", str(write_scenario()), "--policy", "Remote", "--out", str(tmp_path)])
        assert code == 2
