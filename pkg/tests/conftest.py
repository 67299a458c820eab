import sys
from pathlib import Path

# reference_sim and oracle_traces live next to the tests, not in the package
sys.path.insert(0, str(Path(__file__).parent))
