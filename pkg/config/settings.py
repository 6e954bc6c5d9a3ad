"""
Configuration settings for the focused KV-cache compression engine.

This module contains all configuration constants and environment variables.
Keep engine defaults centralized here.

Note: per-run parameters (shape, budgets, scoring weights) live in the JSON
RunConfig loaded by config.run_config; these constants are its defaults.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# =============================================================================
# ENVIRONMENT VARIABLES
# =============================================================================

# Load environment variables from .env file
load_dotenv()

# Default RunConfig path used when a command is given no --config
DEFAULT_CONFIG_PATH = os.getenv("FOCUSED_KV_CONFIG")

# Structured event log location (one JSON object per line)
LOG_DIR = Path(os.getenv("FOCUSED_KV_LOG_DIR", str(Path(__file__).resolve().parents[1] / "logs")))
EVENT_LOG_ENABLED = os.getenv("FOCUSED_KV_EVENT_LOG", "1") != "0"

# =============================================================================
# REFERENCE MODEL SHAPE (packed-attention cost analysis constants)
# =============================================================================

REFERENCE_NUM_LAYERS = 30
REFERENCE_HEADS_PER_LAYER = 12
REFERENCE_CHUNK_FRAMES = 3
REFERENCE_TOKENS_PER_FRAME = 1560
REFERENCE_HEAD_DIM = 128
REFERENCE_DENSE_WINDOW = 21

# BF16 storage; only ever used as a byte count, never for arithmetic
BYTES_PER_ELEMENT = 2
BYTES_PER_MIB = 1048576

# =============================================================================
# BUDGET ALLOCATION
# =============================================================================

DEFAULT_B_MIN = 4
DEFAULT_B_MAX = 12
DEFAULT_GAMMA = 2.0

# Budget ablation: b_max walks down from this value in fixed steps
ABLATION_B_MAX_START = 15
ABLATION_B_MAX_STEP = 3
ABLATION_LAMBDA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)

# =============================================================================
# HISTORY SCORING
# =============================================================================

DEFAULT_LAMBDA = 0.5
DEFAULT_GROUPS = 4
DEFAULT_EPSILON = 1e-6

# Frame 0 acts as the anchor unless the RunConfig says otherwise
DEFAULT_ANCHORS = (0,)

# =============================================================================
# ROTARY EMBEDDING
# =============================================================================

DEFAULT_ROPE_BASE = 10000.0

# =============================================================================
# HEAD IMPORTANCE HARNESS
# =============================================================================

DEFAULT_CFG_SCALE = 1.0
DEFAULT_WINDOW_LENGTH = 3
DEFAULT_NUM_WINDOWS = 2
DEFAULT_TIMESTEPS = (0.2, 0.4, 0.6, 0.8)
DEFAULT_SCORE_PERTURBATION = 0.1
DEFAULT_HIST_BINS = 20

# =============================================================================
# SYNTHETIC STREAM
# =============================================================================

DEFAULT_SEED = 0
REDUNDANCY_MODES = ("iid", "duplicate", "static-region")
DEFAULT_REDUNDANCY_PERIOD = 2

# =============================================================================
# VERIFICATION SUITES
# =============================================================================

EQUIVALENCE_TOLERANCE = 1e-5
ROPE_TOLERANCE = 1e-6
DEFAULT_VERIFY_INSTANCES = 1000
