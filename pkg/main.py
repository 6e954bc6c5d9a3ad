"""
Focused KV-cache compression engine - Entry Point

Training-free KV-cache compression for chunked autoregressive video
generation: per-head KV budgets from offline head importance, per-query-frame
history selection, and packed variable-length attention over what is kept.

Usage:
    python main.py <command> [flags]
    python main.py --help
"""

import sys

from cli import dispatch


def main():
    """Entry point for the CLI."""
    if sys.platform == 'win32':
        import io
        sys.stdout = io.TextIOWrapper(sys.stdout.buffer, encoding='utf-8', line_buffering=True)

    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
