#!env python3
# See the NOTICE file distributed with this work for additional information
# regarding copyright ownership.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Command-line tools running the experiment steps.

Exit codes: 0 success, 2 usage or configuration error, 3 input/output error,
4 numeric failure, 5 mismatched utterance sets.
"""

__all__ = [
    "EXIT_OK",
    "EXIT_USAGE",
    "EXIT_IO",
    "EXIT_NUMERIC",
    "EXIT_MISMATCH",
    "setup_logging",
    "base_parser",
    "exit_code",
    "run_command",
]

import argparse
import logging
from typing import Callable, List, Optional

from ..checkpoint import CheckpointError
from ..corpus import CorpusParseError
from ..experiment import ConfigError
from ..features import PipelineError
from ..metrics import DataMismatchError
from ..nn import VocabularyError
from ..tensor import ContractError, NumericError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_MISMATCH = 5

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

logger = logging.getLogger(__name__)


def setup_logging(verbose: bool = False) -> None:
    """Logs to stderr at INFO, or DEBUG when verbose."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, force=True)


def base_parser(description: Optional[str]) -> argparse.ArgumentParser:
    """Parser with the options shared by every command."""
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("--config", type=str, help="Experiment configuration (JSON)")
    parser.add_argument("--seed", type=int, help="Override the seed of the configuration")
    parser.add_argument("-v", "--verbose", action="store_true", help="Show debug messages")
    return parser


def exit_code(error: Exception) -> int:
    """Exit code for an exception raised by a command."""
    if isinstance(error, DataMismatchError):
        return EXIT_MISMATCH
    if isinstance(error, (CheckpointError, CorpusParseError, OSError)):
        return EXIT_IO
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    if isinstance(error, (ConfigError, ContractError, PipelineError, VocabularyError, ValueError)):
        return EXIT_USAGE
    raise error


def run_command(
    parser: argparse.ArgumentParser,
    action: Callable[[argparse.Namespace], None],
    argv: Optional[List[str]] = None,
) -> int:
    """Parses the arguments, runs the action and turns known errors into exit codes."""
    try:
        args = parser.parse_args(argv)
    except SystemExit as ex:
        return int(ex.code or 0)
    setup_logging(args.verbose)
    try:
        action(args)
    except Exception as ex:  # pylint: disable=broad-exception-caught
        code = exit_code(ex)
        logger.error(f"{type(ex).__name__}: {ex}")
        return code
    return EXIT_OK
