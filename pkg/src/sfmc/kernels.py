"""Backend selection for the entrywise objective kernels.

The compiled extension is used when importable; setting the environment
variable ``SFMC_PURE_PYTHON`` to a non-empty value other than ``0`` forces
the numpy fallback.

The loss kernels and the logistic value-gradient-curvature kernel dispatch
to the compiled code. The logistic value and value-gradient kernels stay in
numpy: they are dominated by exp/log, where numpy's vectorized
transcendental functions beat a scalar C loop (see
benchmarks/bench_kernels.py).
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SFMC_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # pragma: no cover - depends on build
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

loss_value = _impl.loss_value
loss_terms = _impl.loss_terms
logistic_value = _kernels_py.logistic_value
logistic_terms = _impl.logistic_terms
logistic_grad = _kernels_py.logistic_grad


def objective(x, w, m, theta, eta, code, delta):
    return logistic_value(w, theta) + loss_value(x, w, m, eta, code, delta)


def terms(x, w, m, theta, eta, code, delta):
    """Objective plus entrywise gradients and curvatures for both blocks."""
    lv, gm, cm = loss_terms(x, w, m, eta, code, delta)
    tv, gt, ct = logistic_terms(w, theta)
    return lv + tv, gm, gt, cm, ct

QUADRATIC = _kernels_py.QUADRATIC
HUBER = _kernels_py.HUBER
GAUSSIAN = _kernels_py.GAUSSIAN
POISSON = _kernels_py.POISSON
BERNOULLI = _kernels_py.BERNOULLI


def get_backend(name=None):
    """Return a kernel module by name (``"python"`` or ``"compiled"``)."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError("unknown backend %r" % name)
