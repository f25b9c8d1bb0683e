"""Serve a saved oracle matcher over the newline-delimited JSON matcher protocol.

    python -m leica.serve_matcher MODELS_DIR/matcher.bin

Pairs with ``leica score --matcher-cmd``; any process speaking the same
protocol can stand in for it.
"""

from __future__ import annotations

import sys

from .semantic import serve
from .synthworld import OracleMatcher


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m leica.serve_matcher MATCHER_FILE", file=sys.stderr)
        return 2
    serve(OracleMatcher.load(argv[0]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
