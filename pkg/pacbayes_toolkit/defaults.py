"""Default configuration values for the PAC-Bayes toolkit.

All extractable constants live here. Users override values
via ``local/config.py`` (see ``config.py`` for the merge logic).

Naming conventions
------------------
- UPPER_CASE  → scalar or dict that downstream code reads directly
- Dicts       → merged with local overrides (local keys added/replaced)
- Scalars     → replaced wholesale by local overrides
"""

# ── Numerical tolerances ─────────────────────────────────────────────────

# A trial counts as a violation only if true loss exceeds the bound by more than this
VIOLATION_TOLERANCE = 1e-12

# Exact identities (Langford decomposition, recombined report values)
IDENTITY_TOLERANCE = 1e-10

# Expectation inequalities are accepted within this many standard errors
SE_MULTIPLIER = 3.0

# Chernoff-table rows are flagged above ceiling + this many binomial SEs
CHERNOFF_FLAG_SE = 4.0

# Confidence level of the exact-binomial upper limit on violation rates
CONFIDENCE_LEVEL = 0.999

# ── Divergence kernels (divergence.py) ───────────────────────────────────

GAMMA_GRID_MIN = -30.0
GAMMA_GRID_MAX = 30.0
GAMMA_GRID_POINTS = 2001

# ── Occam optimiser (bounds.py) ──────────────────────────────────────────

OCCAM_LAMBDA_CAP = 1e6
OCCAM_LAMBDA_FLOOR = 0.5 + 1e-9
OCCAM_COARSE_GRID_POINTS = 400
OCCAM_GOLDEN_TOL = 1e-10

# Grid used by posterior / grid-bound commands when none is given
DEFAULT_LAMBDA_GRID = [1.0, 2.0, 4.0]

# ── Monte-Carlo sizes ────────────────────────────────────────────────────

# Draws per vectorised MC chunk (bounds peak memory of the model code)
MC_CHUNK_SIZE = 4096

# Draws in the fresh loss estimate used for a certified training bound
FINAL_MC_DRAWS = 100_000

# Draws per trace checkpoint during SGD
CHECKPOINT_MC_DRAWS = 256

# ── Training defaults (training.py) ──────────────────────────────────────

TRAINING = {
    "lambda": 1.0,
    "delta": 0.05,
    "alpha": None,
    "eta0": 0.1,
    "kappa": 0.5,
    "minibatch": 32,
    "mc_per_step": 4,
    "steps": 1000,
    "checkpoint_every": 10,
}

# ── Simulation budgets (worlds.py, validity.py, resampling.py) ───────────

# |H| * |S| above this is rejected before any trial runs
MAX_ENUMERATION_CELLS = 1_000_000

# Exact-mode sample enumeration is allowed when |S|^N is at most this
MAX_EXACT_SAMPLES = 1_000_000

# Trials per validity experiment when neither config nor --trials gives one
DEFAULT_TRIALS = 2000

# Default desk scale for generated worlds and experiments
DESK_SCALE = {
    "max_hypotheses": 50,
    "max_situations": 20,
    "max_n": 200,
    "max_trials": 5000,
}

# Random-world generator parameters
WORLD_DEFAULTS = {
    "n_hypotheses": 20,
    "n_situations": 10,
    "l_max": 1.0,
    "dirichlet_concentration": 1.0,
}

# ── Results / persistence (results.py, cli.py) ───────────────────────────

RESULTS_DIR = "results"
MANIFEST_FILE = "manifest.json"
BOUND_REPORT_JSON = "bound_report.json"
BOUND_REPORT_CSV = "bound_report.csv"
VALIDITY_REPORT_JSON = "validity_report.json"
TRIALS_CSV = "trials.csv"
POSTERIOR_JSON = "posterior.json"
THETA_JSON = "theta.json"
TRACE_CSV = "trace.csv"
FAILURE_JSON = "failure.json"
RESAMPLING_JSON = "resampling_report.json"
SUMMARY_TXT = "summary.txt"

# Parallel trial workers; None means available cores
DEFAULT_JOBS = None
