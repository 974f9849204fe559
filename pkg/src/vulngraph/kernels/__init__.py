"""Edge-kernel backend selection.

The compiled extension is preferred when it imported cleanly; the
pure-Python module is the fallback and the reference for equivalence
tests.  Set ``VULNGRAPH_KERNEL=python`` (or ``compiled``) to force a
backend before first import.
"""

from __future__ import annotations

import logging
import os

from . import pure

log = logging.getLogger(__name__)

_forced = os.environ.get("VULNGRAPH_KERNEL", "").strip().lower()

_impl = None
if _forced not in ("", "python", "compiled"):
    raise RuntimeError(f"VULNGRAPH_KERNEL must be 'python' or 'compiled', got {_forced!r}")
if _forced != "python":
    try:
        from . import _fast as _impl  # type: ignore[no-redef]
    except ImportError:
        if _forced == "compiled":
            raise
        log.info("compiled kernels unavailable, using pure-Python fallback")
        _impl = None
if _impl is None:
    _impl = pure

BACKEND: str = _impl.BACKEND

sigmoid = _impl.sigmoid
pair_score = _impl.pair_score
cluster_score = _impl.cluster_score
cluster_match_score = _impl.cluster_match_score
time_score = _impl.time_score
activation_value = _impl.activation_value
edge_loss = _impl.edge_loss
train_epochs = _impl.train_epochs


def available_backends() -> dict[str, object]:
    """Importable backend modules keyed by name (for tests and benchmarks)."""
    backends: dict[str, object] = {"python": pure}
    try:
        from . import _fast

        backends["compiled"] = _fast
    except ImportError:
        pass
    return backends
