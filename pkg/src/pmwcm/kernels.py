"""Backend selection for the numerical core.

The compiled extension ``pmwcm._ckernels`` is used when it was built;
otherwise the numpy twin in ``pmwcm._pykernels`` takes over.  Setting the
environment variable ``PMWCM_PURE_PYTHON=1`` forces the fallback.
"""
import os

from pmwcm import _pykernels

HUBER = _pykernels.HUBER
LOGISTIC = _pykernels.LOGISTIC
LINEAR = _pykernels.LINEAR
CONSTANT = _pykernels.CONSTANT

try:
    if os.environ.get("PMWCM_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from pmwcm import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

point_losses = _impl.point_losses
link_derivs = _impl.link_derivs
objective = _impl.objective
pgd = _impl.pgd
net_values = _impl.net_values
mw_reweight = _impl.mw_reweight
sample_index = _impl.sample_index


def backends():
    """Return the importable backend modules keyed by name."""
    found = {"python": _pykernels}
    try:
        from pmwcm import _ckernels
        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
