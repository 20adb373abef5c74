import logging
import sys
from typing import List, Optional

from srk.api.commands import CliParser, init_commands
from srk.config.constants import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION
from srk.config.settings import config
from srk.core.errors import StepFailureError, UnknownNameError, ValidationError

# Настройка логирования (stdout остаётся под CSV/JSON)
logging.basicConfig(
    level=config.LOG_LEVEL,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    stream=sys.stderr,
)

logger = logging.getLogger(__name__)


def create_parser() -> CliParser:
    parser = CliParser(prog="srk", description="Stochastic Runge-Kutta methods for single-integrand SDEs")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Регистрация подкоманд
    init_commands(subparsers)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = create_parser().parse_args(argv)
        return args.handler(args)
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else EXIT_OK
    except (ValidationError, UnknownNameError) as e:
        logger.error(f"{e}")
        return EXIT_VALIDATION
    except StepFailureError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        return 130


if __name__ == '__main__':
    sys.exit(main())
