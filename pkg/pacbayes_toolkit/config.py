"""Settings: ``defaults.py`` plus optional ``local/config.py`` overrides.

Every UPPERCASE name in ``pacbayes_toolkit.defaults`` becomes a module
attribute here.  If ``local/config.py`` exists its UPPERCASE names are laid
on top: dicts (``TRAINING``, ``WORLD_DEFAULTS``) are merged key by key, any
other value replaces the default.  The merged values are range-checked once,
so a bad override fails at import rather than deep inside a run.

No imports from other pacbayes_toolkit modules; everything else imports this
one first.
"""

import importlib
import logging

from pacbayes_toolkit import defaults as _defaults

logger = logging.getLogger(__name__)

_this = importlib.import_module(__name__)

# Names replaced or merged by local/config.py, in the order applied.
OVERRIDDEN: list[str] = []


def _merge_overrides(local_module) -> list[str]:
    applied = []
    for attr in sorted(a for a in dir(local_module) if a.isupper()):
        value = getattr(local_module, attr)
        default = getattr(_this, attr, None)
        if isinstance(default, dict) and isinstance(value, dict):
            unknown = set(value) - set(default)
            if unknown:
                logger.warning(f"local/config.py adds unknown {attr} keys: {sorted(unknown)}")
            value = {**default, **value}
        elif default is None and not hasattr(_defaults, attr):
            logger.warning(f"local/config.py sets {attr}, which no default defines")
        setattr(_this, attr, value)
        applied.append(attr)
    return applied


def _check_ranges() -> None:
    if not 0.0 < _this.CONFIDENCE_LEVEL < 1.0:
        raise ValueError(f"CONFIDENCE_LEVEL must lie in (0, 1), got {_this.CONFIDENCE_LEVEL}")
    for name in ("SE_MULTIPLIER", "CHERNOFF_FLAG_SE", "MC_CHUNK_SIZE", "FINAL_MC_DRAWS", "CHECKPOINT_MC_DRAWS"):
        if not getattr(_this, name) > 0:
            raise ValueError(f"{name} must be > 0, got {getattr(_this, name)}")
    if not _this.GAMMA_GRID_MIN < _this.GAMMA_GRID_MAX or _this.GAMMA_GRID_POINTS < 2:
        raise ValueError(
            f"gamma grid needs min < max and >= 2 points, got "
            f"[{_this.GAMMA_GRID_MIN}, {_this.GAMMA_GRID_MAX}] x {_this.GAMMA_GRID_POINTS}"
        )


# ── Defaults, then local overrides ───────────────────────────────────────

for _attr in dir(_defaults):
    if _attr.isupper():
        setattr(_this, _attr, getattr(_defaults, _attr))

try:
    from local import config as _local_cfg  # type: ignore[import-not-found]
except ImportError:
    pass
else:
    OVERRIDDEN = _merge_overrides(_local_cfg)
    logger.info(f"Loaded local config overrides from local/config.py: {', '.join(OVERRIDDEN) or 'none'}")

_check_ranges()


# ── Convenience helpers ──────────────────────────────────────────────────

def gamma_grid_spec() -> tuple[float, float, int]:
    """Return (min, max, points) of the γ grid used by the sup-γ check."""
    return _this.GAMMA_GRID_MIN, _this.GAMMA_GRID_MAX, _this.GAMMA_GRID_POINTS
