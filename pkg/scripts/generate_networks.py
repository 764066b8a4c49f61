"""
Скрипт генерации встроенных сетей в data/networks/*.net.json
"""
import sys
import argparse
from pathlib import Path

# Добавить корневую директорию в путь
sys.path.append(str(Path(__file__).parent.parent))

from src.core.network_model import BUILTIN_NETWORKS, count_intersection_types, save_network
from src.utils.error_handler import RegTscException
from src.utils.logger import main_logger


def generate(output_dir: Path, names: list) -> bool:
    """Записать выбранные встроенные сети"""
    main_logger.info("=" * 60)
    main_logger.info("NETWORK GENERATION")
    main_logger.info("=" * 60)

    try:
        for name in names:
            network = BUILTIN_NETWORKS[name]()
            path = save_network(network, output_dir / f"{name}.net.json")
            main_logger.info(
                f"{name}: {len(network.intersections)} intersections | "
                f"{len(network.roads)} roads | {len(network.lanes)} lanes -> {path}"
            )
            for signature, count in sorted(count_intersection_types(network).items()):
                main_logger.info(f"  - {signature}: {count}")

        main_logger.info("=" * 60)
        return True

    except RegTscException as e:
        main_logger.error(f"Network generation failed: {e.get_user_message()}")
        return False


def main():
    """Главная функция"""
    parser = argparse.ArgumentParser(description="Write built-in road networks as .net.json")
    parser.add_argument("--out", default=str(Path(__file__).parent.parent / "data" / "networks"))
    parser.add_argument("names", nargs="*", default=sorted(BUILTIN_NETWORKS))
    args = parser.parse_args()

    unknown = [n for n in args.names if n not in BUILTIN_NETWORKS]
    if unknown:
        parser.error(f"unknown networks: {', '.join(unknown)}; available: {', '.join(sorted(BUILTIN_NETWORKS))}")

    if not generate(Path(args.out), args.names):
        sys.exit(1)


if __name__ == "__main__":
    main()
