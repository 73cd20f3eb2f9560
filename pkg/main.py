"""Entry point for the Gat style-transfer pipeline."""

import sys

from src.gat_transfer.main import main

if __name__ == "__main__":
    sys.exit(main())
