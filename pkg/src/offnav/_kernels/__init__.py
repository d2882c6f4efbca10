"""Kernel backend selection.

The compiled extension is used when importable; set OFFNAV_PURE_PYTHON=1 to
force the numpy fallback. `BACKEND` names the active backend.
"""

import os

from . import pure

if os.environ.get("OFFNAV_PURE_PYTHON", "").strip() not in ("", "0"):
    impl = pure
else:
    try:
        from . import _speedups as impl  # type: ignore[no-redef]
    except ImportError:
        impl = pure

BACKEND = impl.BACKEND_NAME

terrain_heights = impl.terrain_heights
fuse_points = impl.fuse_points
extract_patches = impl.extract_patches
rollout_batch = impl.rollout_batch

# profile ids and the analytic bump shape are backend-independent
PROFILE_COSINE = pure.PROFILE_COSINE
PROFILE_TRAPEZOID = pure.PROFILE_TRAPEZOID
PROFILE_STEP = pure.PROFILE_STEP
bump_profile = pure.bump_profile
