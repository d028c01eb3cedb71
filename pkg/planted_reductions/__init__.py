import sys

from .cli import CLI, run_command


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


__all__ = ["CLI", "main", "run_command"]
