#!/usr/bin/env python3
"""
CXR-Net - Main Entry Point

Usage:
    python main.py synth --n 500 --size 64 --covid-fraction 0.4 --seed 7 --out data/phantoms.cxb
    python main.py <command> --help

See cxr_net/cli.py for the full command list.
"""

import sys

from cxr_net.cli import main

if __name__ == "__main__":
    sys.exit(main())
