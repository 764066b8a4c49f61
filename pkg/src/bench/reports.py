"""
Сравнение политик на одном сценарии и seed
"""
import asyncio
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
from pydantic import BaseModel

from src.bench.runner import RunSummary, run, run_blocking
from src.bench.scenario import RunManifest
from src.utils.error_handler import PreconditionError, ScenarioMismatchError
from src.utils.logger import bench_logger

METRIC_COLUMNS = ("ATT", "AWT", "AQL", "ATTE", "AWTE")
COMPARISON_CSV = "comparison.csv"
COMPARISON_JSON = "comparison.json"


class ComparisonRow(BaseModel):
    policy: str
    summary: RunSummary
    deltas: Dict[str, Optional[float]]


class ComparisonReport(BaseModel):
    """Строки по политикам и относительные отклонения от базовой"""
    scenario: str
    seed: int
    baseline: str
    rows: List[ComparisonRow]


def relative_delta(value: Optional[float], baseline: Optional[float]) -> Optional[float]:
    """(value − baseline) / baseline; None, если база не определена или равна 0"""
    if value is None or baseline is None or baseline == 0:
        return None
    return (value - baseline) / baseline


def check_comparable(manifests: Sequence[RunManifest]) -> None:
    """
    Raises:
        PreconditionError: Меньше двух манифестов или повтор метки политики
        ScenarioMismatchError: Разные сценарии, seed или интервал решений
    """
    if len(manifests) < 2:
        raise PreconditionError(f"compare needs at least 2 manifests, got {len(manifests)}")

    first = manifests[0]
    for manifest in manifests[1:]:
        key = (Path(manifest.scenario_path).resolve(), manifest.seed, manifest.decision_interval)
        expected = (Path(first.scenario_path).resolve(), first.seed, first.decision_interval)
        if key != expected:
            raise ScenarioMismatchError(
                f"{manifest.label} runs {manifest.scenario_path} seed {manifest.seed}, "
                f"{first.label} runs {first.scenario_path} seed {first.seed}",
                {"expected": [str(v) for v in expected], "actual": [str(v) for v in key]}
            )

    labels = [m.label for m in manifests]
    if len(set(labels)) != len(labels):
        raise PreconditionError(f"Duplicate policy labels in comparison: {labels}")


def build_report(summaries: Sequence[RunSummary], baseline: str) -> ComparisonReport:
    """Собрать отчет по готовым итогам прогонов"""
    by_label = {s.policy: s for s in summaries}
    if baseline not in by_label:
        raise PreconditionError(f"Baseline {baseline} is not among {sorted(by_label)}")

    base_metrics = by_label[baseline].metrics
    rows = []
    for summary in summaries:
        deltas = {
            name: relative_delta(getattr(summary.metrics, name), getattr(base_metrics, name))
            for name in METRIC_COLUMNS
        }
        rows.append(ComparisonRow(policy=summary.policy, summary=summary, deltas=deltas))

    return ComparisonReport(
        scenario=summaries[0].scenario, seed=summaries[0].seed, baseline=baseline, rows=rows
    )


def report_frame(report: ComparisonReport) -> pd.DataFrame:
    """Таблица для comparison.csv: метрики и время поездки каждого спецтранспорта"""
    records = []
    for row in report.rows:
        metrics = row.summary.metrics
        record = {"policy": row.policy}
        record.update({name: getattr(metrics, name) for name in METRIC_COLUMNS})
        record.update(metrics.emergency_travel_times)
        records.append(record)

    frame = pd.DataFrame.from_records(records)
    ev_columns = sorted(c for c in frame.columns if c != "policy" and c not in METRIC_COLUMNS)
    return frame[["policy", *METRIC_COLUMNS, *ev_columns]]


async def compare(
    manifests: Sequence[RunManifest],
    baseline: str,
    output_dir: Path,
    workers: int = 1
) -> ComparisonReport:
    """
    Прогнать политики и записать comparison.csv / comparison.json

    Args:
        manifests: Манифесты одного сценария и seed
        baseline: Метка базовой политики
        output_dir: Директория отчета
        workers: Число процессов; 1 - последовательно

    Returns:
        ComparisonReport
    """
    check_comparable(manifests)

    if workers > 1:
        loop = asyncio.get_running_loop()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = await asyncio.gather(*[
                loop.run_in_executor(pool, run_blocking, manifest) for manifest in manifests
            ])
    else:
        summaries = [(await run(manifest)).summary for manifest in manifests]

    report = build_report(list(summaries), baseline)

    output_dir.mkdir(parents=True, exist_ok=True)
    report_frame(report).to_csv(output_dir / COMPARISON_CSV, index=False, na_rep="")
    (output_dir / COMPARISON_JSON).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")

    for row in report.rows:
        bench_logger.info(
            f"{row.policy}: ATT={row.summary.metrics.ATT:.2f} | AWT={row.summary.metrics.AWT:.2f} | "
            f"AQL={row.summary.metrics.AQL:.2f} | AWTE={row.summary.metrics.AWTE} | "
            f"dATT={row.deltas['ATT']}"
        )
    bench_logger.info(f"Comparison written to {output_dir}")
    return report
