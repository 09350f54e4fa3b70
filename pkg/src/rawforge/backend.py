"""Selects the compiled kernel core when available, else the numpy fallback.

Set ``RAWFORGE_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import logging
import os

import numpy as np

from . import _core_py

log = logging.getLogger(__name__)

_impl = _core_py
NAME = "python"
if os.environ.get("RAWFORGE_BACKEND", "").lower() != "python":
    try:
        from . import _core as _compiled  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on build
        log.debug("compiled core unavailable; using numpy fallback")
    else:
        _impl = _compiled
        NAME = "compiled"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _cmap(cmap):
    return np.ascontiguousarray(cmap, dtype=np.intp)


def render_lr(x_hr, kernels, s, phase, cmap, n_rows, n_cols, impl=None):
    impl = impl or _impl
    return impl.render_lr(_f64(x_hr), _f64(kernels), int(s), int(phase), _cmap(cmap), int(n_rows), int(n_cols))


def render_lr_adjoint(x_hr, kernels, g, s, phase, cmap, need_grad_x=True, impl=None):
    impl = impl or _impl
    return impl.render_lr_adjoint(_f64(x_hr), _f64(kernels), _f64(g), int(s), int(phase), _cmap(cmap),
                                  bool(need_grad_x))


def warp_bilinear(img, G, out_h, out_w, impl=None):
    impl = impl or _impl
    out, mask = impl.warp_bilinear(_f64(img), _f64(G), int(out_h), int(out_w))
    return np.asarray(out), np.asarray(mask, dtype=bool)


def warp_bilinear_vjp(img, G, upstream, impl=None):
    impl = impl or _impl
    return np.asarray(impl.warp_bilinear_vjp(_f64(img), _f64(G), _f64(upstream)))


def implementations():
    """Available backends by name, for benchmarks and cross-checks."""
    impls = {"python": _core_py}
    try:
        from . import _core  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover
        pass
    else:
        impls["compiled"] = _core
    return impls
