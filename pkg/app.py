"""
TimeCal entry point.

    python app.py simulate --model ex1 --seed 42
    python app.py pipeline --preset desk --seed 1 --output-dir runs/desk
"""

import sys
import warnings

from dotenv import load_dotenv

from src.cli import main

# Load environment variables
load_dotenv()

# Suppress numpy's floating point warnings; overflow is reported as SimulationError
warnings.filterwarnings("ignore", category=RuntimeWarning)

if __name__ == "__main__":
    sys.exit(main())
