"""
Star-network large-deviations toolkit - Main Entry Point

Usage:
    python main.py --config configs/fig4_rate.json rate
    python main.py --config configs/mm1.json simulate --out results/mm1
    python main.py --config configs/fig4_optimize.json optimize --threads 4
    python main.py example-fig4 --values 0.05 0.25 0.45
    python main.py --help
"""

import os
import sys

# Add src to path
sys.path.insert(0, os.path.dirname(__file__))

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
