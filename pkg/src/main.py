"""
Точка входа CLI: run | collect | build-guidance | compare | export
"""
import argparse
import asyncio
import math
import sys
from pathlib import Path
from typing import List, Optional

# Добавить корневую директорию в путь
sys.path.append(str(Path(__file__).parent.parent))

from src.bench.guidance_builder import build_guidance
from src.bench.reports import compare
from src.bench.runner import collect_imitation, export_refinement, run
from src.bench.scenario import PolicyKind, RunManifest, load_scenario
from src.core.llm_client import BackendConfig, BackendKind, LLMClient
from src.core.training import FilterParams
from src.utils.config import settings
from src.utils.error_handler import RegTscException, ValidationError, handle_exception, validate_model
from src.utils.logger import main_logger, set_level


def parse_policy(value: str) -> PolicyKind:
    for kind in PolicyKind:
        if value.lower() == kind.value.lower():
            return kind
    raise ValidationError(
        f"Unknown policy {value!r}", {"allowed": [k.value for k in PolicyKind]}
    )


def _add_run_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", required=True, help="Путь к .scenario.json")
    parser.add_argument("--policy", help="MockHeuristic | Remote | FixedTime | Random")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--decision-interval", type=int, help="Шагов между решениями")
    parser.add_argument("--fidelity", action="store_true", help="Решение на каждом шаге (интервал 1)")
    parser.add_argument("--no-gating", action="store_true", help="Всегда легкий режим рассуждения")
    parser.add_argument("--guidance", help="Директория репозитория рекомендаций")
    parser.add_argument("--capture-outcomes", action="store_true", help="Писать outcomes.jsonl")


def _add_backend_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", default=None, help="mock | remote (по умолчанию из настроек)")
    parser.add_argument("--base-url", default=None, help="URL OpenAI-совместимого сервера")
    parser.add_argument("--out", default=None, help="Директория результатов")
    parser.add_argument("--log-level", default=None, help="DEBUG | INFO | WARNING | ERROR")


def build_parser() -> argparse.ArgumentParser:
    """Парсер аргументов командной строки"""
    parser = argparse.ArgumentParser(
        prog="regtsc",
        description="Emergency-aware LLM traffic signal control lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="Прогнать сценарий и записать метрики")
    _add_run_arguments(run_parser)
    _add_backend_arguments(run_parser)

    collect_parser = sub.add_parser("collect", help="Собрать имитационный датасет")
    _add_run_arguments(collect_parser)
    _add_backend_arguments(collect_parser)
    collect_parser.add_argument("--t-re", type=int, help="Длина окна наград (обязательна с фильтром)")
    collect_parser.add_argument("--eta", type=float, default=0.5, help="Порог суммы наград")
    collect_parser.add_argument("--no-filter", action="store_true", help="Отключить фильтр")

    guidance_parser = sub.add_parser("build-guidance", help="Построить репозиторий рекомендаций")
    guidance_parser.add_argument("--cases", required=True, help="Путь к cases.jsonl")
    _add_backend_arguments(guidance_parser)

    compare_parser = sub.add_parser("compare", help="Сравнить политики на одном сценарии")
    compare_parser.add_argument("--scenario", required=True)
    compare_parser.add_argument("--seed", type=int, default=0)
    compare_parser.add_argument(
        "--policies", default="FixedTime,Random,MockHeuristic", help="Список политик через запятую"
    )
    compare_parser.add_argument("--baseline", default="FixedTime")
    compare_parser.add_argument("--workers", type=int, default=1)
    compare_parser.add_argument("--decision-interval", type=int)
    compare_parser.add_argument("--fidelity", action="store_true")
    compare_parser.add_argument("--no-gating", action="store_true")
    compare_parser.add_argument("--guidance")
    _add_backend_arguments(compare_parser)

    export_parser = sub.add_parser("export", help="Эпохи приоритетной выборки для дообучения")
    _add_run_arguments(export_parser)
    _add_backend_arguments(export_parser)
    export_parser.add_argument("--epochs", type=int, required=True, help="Число эпох")
    export_parser.add_argument("--batch-size", type=int, default=64)
    export_parser.add_argument("--epsilon", type=float, default=None)
    export_parser.add_argument("--clamp-negative", action="store_true", help="Обрезать отрицательные веса")

    return parser


def _backend(args: argparse.Namespace, policy: Optional[PolicyKind] = None) -> BackendConfig:
    kind = args.backend
    if policy == PolicyKind.REMOTE:
        kind = kind or BackendKind.REMOTE.value
    elif policy is not None:
        # Эвристика и базовые политики не ходят во внешний сервер
        kind = BackendKind.MOCK.value
    overrides = {"base_url": args.base_url} if args.base_url else {}
    return BackendConfig.from_settings(kind, **overrides)


def _output_dir(args: argparse.Namespace, scenario_name: str, label: str) -> str:
    if args.out:
        return args.out
    return str(Path(settings.output_dir) / scenario_name / label)


def _decision_interval(args: argparse.Namespace) -> Optional[int]:
    return 1 if args.fidelity else args.decision_interval


def _manifest(
    args: argparse.Namespace,
    policy: Optional[PolicyKind] = None,
    out: Optional[str] = None
) -> RunManifest:
    scenario = load_scenario(args.scenario)
    if policy is None:
        policy = parse_policy(args.policy) if args.policy else scenario.policy
    gating = not args.no_gating
    label = policy.value if gating else f"{policy.value}-NoGating"
    data = {
        "scenario_path": args.scenario,
        "policy": policy,
        "backend": _backend(args, policy),
        "output_dir": out or _output_dir(args, scenario.name, label),
        "seed": args.seed,
        "decision_interval": _decision_interval(args),
        "emergency_gating": gating,
        "guidance_dir": args.guidance,
        "capture_outcomes": getattr(args, "capture_outcomes", False),
    }
    return validate_model(RunManifest, data, "run manifest")


async def _dispatch(args: argparse.Namespace) -> None:
    if args.command == "run":
        result = await run(_manifest(args))
        metrics = result.metrics
        print(
            f"ATT={metrics.ATT:.2f} AWT={metrics.AWT:.2f} AQL={metrics.AQL:.2f} "
            f"ATTE={metrics.ATTE} AWTE={metrics.AWTE}"
        )

    elif args.command == "collect":
        params = None
        if not args.no_filter and not (math.isinf(args.eta) and args.eta < 0):
            if args.t_re is None:
                raise ValidationError("--t-re is required unless --no-filter is given")
            params = validate_model(FilterParams, {"t_re": args.t_re, "eta": args.eta}, "filter parameters")
        path, stats = await collect_imitation(_manifest(args), params)
        print(f"{path}: kept {stats['kept']}, rejected {stats['rejected']}, truncated {stats['truncated']}")

    elif args.command == "build-guidance":
        client = LLMClient(_backend(args))
        try:
            out = args.out or str(Path(settings.output_dir) / "guidance")
            repository = await build_guidance(args.cases, client, out)
        finally:
            await client.aclose()
        print(f"{out}: {repository.size} guidance items")

    elif args.command == "compare":
        scenario = load_scenario(args.scenario)
        out = Path(args.out or Path(settings.output_dir) / scenario.name / "comparison")
        manifests: List[RunManifest] = []
        for name in [p.strip() for p in args.policies.split(",") if p.strip()]:
            policy = parse_policy(name)
            label = policy.value if not args.no_gating else f"{policy.value}-NoGating"
            manifests.append(_manifest(args, policy, str(out / label)))
        report = await compare(manifests, args.baseline, out, args.workers)
        print(f"{out}: {len(report.rows)} policies compared against {report.baseline}")

    elif args.command == "export":
        path = await export_refinement(
            _manifest(args), args.epochs, args.batch_size, args.epsilon, args.clamp_negative
        )
        print(f"{path}: refinement dataset over {args.epochs} epochs")


def main(argv: Optional[List[str]] = None) -> int:
    """Главная функция"""
    args = build_parser().parse_args(argv)

    set_level(args.log_level or settings.log_level)
    main_logger.info(f"Command: {args.command} | Environment: {settings.app_env}")

    try:
        asyncio.run(_dispatch(args))
    except RegTscException as e:
        handle_exception(e, {"command": args.command})
        print(e.get_user_message(), file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        main_logger.info("Interrupted")
        return 130
    except Exception as e:
        error = handle_exception(e, {"command": args.command})
        print(error.get_user_message(), file=sys.stderr)
        return error.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
