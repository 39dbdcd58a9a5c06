#!/usr/bin/env python3

r"""
Secoco Suite Launcher

One entry-point for the corpus, training and decoding tools.

Examples:
  python secoco_suite.py ?
  python secoco_suite.py synth --seed 7
  python secoco_suite.py train --mode secoco --out runs/secoco
  python secoco_suite.py train --mode base --out runs/base
  python secoco_suite.py train --mode base+synthetic --out runs/base_syn
  python secoco_suite.py translate --checkpoint runs/secoco/best.ckpt --input noisy.txt --mode edit --show-edits
  python secoco_suite.py eval --checkpoint runs/secoco/best.ckpt --baseline base=runs/base/best.ckpt --worst-k 20

Notes:
  - Settings come from data/secoco_settings.json unless --config is given.
  - Any setting can be overridden as --<section>.<field> VALUE.
  - SECOCO_LOG=quiet|info|debug controls console verbosity.
"""

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

TOOLS = {
    "synth": "Generate noisy parallel corpora with edit traces and vocabularies",
    "vocab": "Rebuild vocabulary files from train.jsonl",
    "train": "Train a model (--mode secoco | base | base+synthetic)",
    "translate": "Translate a text file (--mode e2e | edit, --show-edits)",
    "eval": "BLEU, edit metrics and latency report",
}


def _print_help():
    print("Secoco Suite")
    print()
    print("Usage:")
    print("  python secoco_suite.py <tool> [tool-args...]")
    print()
    print("Tools:")
    for name, text in TOOLS.items():
        print(f"  {name:<12} {text}")
    print()
    print("Examples:")
    print("  python secoco_suite.py synth --seed 7")
    print("  python secoco_suite.py train --mode secoco --out runs/secoco --train.max_steps 2000")
    print("  python secoco_suite.py translate --checkpoint runs/secoco/best.ckpt --input noisy.txt --mode edit --show-edits")
    print("  python secoco_suite.py eval --checkpoint runs/secoco/best.ckpt --baseline base=runs/base/best.ckpt")
    print()


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("?", "help", "-h", "--help"):
        _print_help()
        return 0

    tool = argv[0].lower()
    if tool not in TOOLS:
        print(f"Unknown command: {tool}")
        print()
        _print_help()
        return 2

    from secoco.cli import main as cli_main
    return int(cli_main([tool] + argv[1:]))


if __name__ == "__main__":
    raise SystemExit(main())
