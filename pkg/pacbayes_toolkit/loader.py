"""Discover ``local/`` extension modules and report what they registered.

Every ``.py`` file in ``local/`` except ``__init__.py`` and ``config.py``
(read by ``pacbayes_toolkit.config``) is imported once per process.  Importing
runs the modules' ``@bound_calculator`` / ``@validity_trial`` decorators; the
names the two registries gained are logged and returned.
"""

import importlib
import logging
import os
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

LOCAL_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "local")
SKIP_FILES = frozenset({"__init__.py", "config.py"})

_loaded = False


@dataclass
class LoadedExtensions:
    modules: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)
    bounds: list[str] = field(default_factory=list)
    trials: list[str] = field(default_factory=list)


def _registered_names() -> tuple[set[str], set[str]]:
    from pacbayes_toolkit.bounds import list_bounds
    from pacbayes_toolkit.validity import list_validity_trials

    return {name for name, _ in list_bounds()}, {name for name, _ in list_validity_trials()}


def extension_modules(local_dir: str) -> list[str]:
    """Module names under ``local.`` that ``load_extensions`` would import, in order."""
    if not os.path.isdir(local_dir):
        return []
    return [
        f"local.{filename[:-3]}"
        for filename in sorted(os.listdir(local_dir))
        if filename.endswith(".py") and filename not in SKIP_FILES
    ]


def load_extensions(local_dir: str | None = None) -> LoadedExtensions:
    """Import the extension modules once; later calls return an empty result."""
    global _loaded
    result = LoadedExtensions()
    if _loaded:
        return result
    _loaded = True

    names = extension_modules(local_dir or LOCAL_DIR)
    if not names:
        return result

    bounds_before, trials_before = _registered_names()
    for module_name in names:
        try:
            importlib.import_module(module_name)
        except Exception as e:
            result.failed[module_name] = str(e)
            logger.warning(f"Failed to load extension {module_name}: {e}")
            continue
        result.modules.append(module_name)
        logger.info(f"Loaded extension: {module_name}")

    bounds_after, trials_after = _registered_names()
    result.bounds = sorted(bounds_after - bounds_before)
    result.trials = sorted(trials_after - trials_before)
    if result.bounds or result.trials:
        logger.info(
            f"Extensions registered {len(result.bounds)} bound calculator(s) {result.bounds} "
            f"and {len(result.trials)} validity trial(s) {result.trials}"
        )
    return result
