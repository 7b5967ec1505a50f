#!/usr/bin/env python
# vim: set encoding=utf-8

"""
Entry point of the wavelet diffusion planner toolkit.

    bin/wavediff.py gen-data --env pointmass --policy scripted_noisy --out data.jsonl
    bin/wavediff.py train --config config/train/default.cfg --data data.jsonl --out run/

"""

# pylint: disable=wrong-import-position,wrong-import-order
import sys
import os

MYDIR = os.path.abspath(os.path.dirname(os.path.dirname(__file__)))
sys.path.append("%s/lib/" % MYDIR)

import cli
from globals import setup_logging

# pylint: enable=wrong-import-position,wrong-import-order

if __name__ == "__main__":
    setup_logging()
    sys.exit(cli.run(sys.argv[1:]))
