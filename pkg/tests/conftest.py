import sys
from pathlib import Path

# Allow `import oracles` from any test module regardless of invocation dir.
sys.path.insert(0, str(Path(__file__).resolve().parent))
