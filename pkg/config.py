import os
from dotenv import load_dotenv

load_dotenv()

# Artifact schema, bumped whenever a CSV/JSON column changes meaning
SCHEMA_VERSION = "1.0"

# Parallelism (the --workers flag wins over this)
DISCLAB_WORKERS = int(os.getenv("DISCLAB_WORKERS", "1"))

# Output locations
OUTPUT_DIR = os.getenv("DISCLAB_OUTPUT_DIR", "results")
FIXTURES_DIR = os.getenv("DISCLAB_FIXTURES_DIR", "fixtures")

LOG_LEVEL = os.getenv("DISCLAB_LOG_LEVEL", "INFO")

# Task partition sizes. These fix how Monte-Carlo and enumeration work is cut
# into streams, so they must not depend on the worker count.
MC_CHUNK = int(os.getenv("DISCLAB_MC_CHUNK", "4096"))
ENUM_CHUNK = int(os.getenv("DISCLAB_ENUM_CHUNK", "2048"))

# Default Coulomb-gas chain settings
CHAIN_BURN_IN = int(os.getenv("DISCLAB_CHAIN_BURN_IN", "2000"))
CHAIN_SWEEPS = int(os.getenv("DISCLAB_CHAIN_SWEEPS", "10000"))
CHAIN_THIN = int(os.getenv("DISCLAB_CHAIN_THIN", "10"))
CHAIN_CHAINS = int(os.getenv("DISCLAB_CHAIN_CHAINS", "4"))
