"""Central finite-difference checking of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import GradTape, Tensor


class NonFiniteProbe(FloatingPointError):
    def __init__(self, tensor_index: int, coord: tuple[int, ...], value: float):
        super().__init__(f"f is not finite ({value}) when probing tensor {tensor_index} at {coord}")
        self.tensor_index = tensor_index
        self.coord = coord


@dataclass
class GradcheckResult:
    max_rel_error: float
    worst_tensor: int
    worst_coord: tuple[int, ...]
    n_checked: int


def _scalar(f, point) -> float:
    out = f(*point)
    return float(out.data.sum()) if isinstance(out, Tensor) else float(out)


def finite_diff_gradcheck(f: Callable[..., Tensor], point: Sequence[Tensor], eps: float = 1e-5,
                          max_coords: int | None = None, seed: int = 0) -> GradcheckResult:
    """Compare reverse-mode gradients of scalar ``f(*point)`` against central differences.

    The error per coordinate is ``|analytic - fd| / max(1, |fd|)`` and the
    maximum over coordinates is reported. ``max_coords`` limits the number of
    probed coordinates per tensor (chosen with ``seed``); None probes all.
    """
    point = list(point)
    saved = [t.requires_grad for t in point]
    for t in point:
        t.requires_grad = True
    try:
        with GradTape() as tape:
            out = f(*point)
        analytic = tape.gradient(out, point)
    finally:
        for t, flag in zip(point, saved):
            t.requires_grad = flag
    if out.size != 1:
        raise ValueError(f"finite_diff_gradcheck: f must be scalar-valued, got shape {out.shape}")

    rng = np.random.default_rng(seed)
    worst = (0.0, -1, ())
    n = 0
    for ti, t in enumerate(point):
        if not t.data.flags.c_contiguous or not t.data.flags.writeable:
            t.data = np.array(t.data, order="C")
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for k in idx:
            orig = flat[k]
            flat[k] = orig + eps
            fp = _scalar(f, point)
            flat[k] = orig - eps
            fm = _scalar(f, point)
            flat[k] = orig
            coord = tuple(int(c) for c in np.unravel_index(k, t.shape))
            for v in (fp, fm):
                if not np.isfinite(v):
                    raise NonFiniteProbe(ti, coord, v)
            fd = (fp - fm) / (2 * eps)
            err = abs(analytic[ti].reshape(-1)[k] - fd) / max(1.0, abs(fd))
            n += 1
            if err > worst[0] or worst[1] < 0:
                worst = (err, ti, coord)
    return GradcheckResult(worst[0], worst[1], worst[2], n)
