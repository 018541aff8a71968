#!/usr/bin/env python3
"""
Command-line entry point for the planning-enhanced dialog policy.

    python pedp.py gen-data --out runs/data --n-dialogs 200 --seed 1
    python pedp.py train --corpus runs/data/corpus.jsonl --out runs/pedp --seed 1 --seed 2
    python pedp.py eval-interactive --checkpoint runs/pedp/checkpoint_seed1.zip --episodes 500 --seed 1
"""

import logging

from pedp_policy.cli import main

logging.basicConfig(level=logging.INFO, datefmt='%Y-%m-%dT%H:%M:%S',
                    format='%(asctime)s [%(levelname)s] %(message)s')

if __name__ == "__main__":
    raise SystemExit(main())
