#!/usr/bin/env python3
"""
🏯 HRCenterNet - command-line entry point

Exit codes: 0 success, 2 usage error, 3 missing or corrupt input file,
4 config parse failure, 1 anything else.
"""

import sys
from typing import List, Optional

import click
from rich.console import Console

from .cli import cli
from .core.errors import (
    ConfigError,
    ConfigMismatchError,
    FormatError,
    HRCenterNetError,
    InputFileError,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_CONFIG = 4

_stderr = Console(stderr=True, highlight=False)


def _fail(code: int, message: str) -> int:
    _stderr.print(f"❌ {message}", markup=False, soft_wrap=True)
    return code


def dispatch(argv: Optional[List[str]] = None) -> int:
    """Run the CLI and map failures to exit codes without calling sys.exit"""
    try:
        result = cli.main(args=argv, prog_name="hrcenternet", standalone_mode=False)
    except click.UsageError as e:
        if e.ctx is not None:
            _stderr.print(e.ctx.get_usage(), markup=False)
        return _fail(EXIT_USAGE, e.format_message())
    except click.ClickException as e:
        return _fail(e.exit_code, e.format_message())
    except click.Abort:
        return _fail(EXIT_FAILURE, "aborted")
    except (InputFileError, FormatError, ConfigMismatchError) as e:
        return _fail(EXIT_INPUT, str(e))
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    except HRCenterNetError as e:
        return _fail(EXIT_FAILURE, str(e))
    return result if isinstance(result, int) else EXIT_OK


def main():
    """Main entry point for the CLI"""
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
