"""Central finite-difference comparison against analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4
    message: str = ""

    @property
    def worst(self) -> tuple[str, float]:
        if not self.errors:
            return ("", float("inf"))
        name = max(self.errors, key=lambda k: self.errors[k])
        return name, self.errors[name]

    @property
    def max_error(self) -> float:
        return self.worst[1]

    @property
    def passed(self) -> bool:
        return not self.message and bool(self.errors) and self.max_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """||a - n|| / max(||a||, ||n||, floor).

    The floor keeps finite-difference roundoff on a gradient that is
    analytically ~0 from reading as a 100% error.
    """
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), floor)
    if scale == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / scale


def gradient_check(objective, params, step=1e-5, tolerance=1e-4, max_coords=None, seed=0) -> GradCheckReport:
    """Compare analytic gradients with central differences for every tensor in ``params``.

    ``objective(compute_grad)`` must return the scalar loss at the current
    parameter values; when ``compute_grad`` is true it must also leave the
    analytic gradient in each tensor's ``grads`` (zeroing them first).
    Tensors larger than ``max_coords`` are checked on a random coordinate
    sample of that size (at least 100).
    """
    report = GradCheckReport(tolerance=tolerance)
    rng = np.random.default_rng(seed)
    base = objective(True)
    if not np.isfinite(base):
        report.message = f"non-finite loss {base}"
        return report
    analytic = {p.name: p.grads.copy() for p in params}
    for p in params:
        flat = p.values.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max(max_coords, 100):
            coords = np.sort(rng.choice(flat.size, size=max(max_coords, 100), replace=False))
        numeric = np.empty(coords.size)
        for k, idx in enumerate(coords):
            orig = flat[idx]
            flat[idx] = orig + step
            plus = objective(False)
            flat[idx] = orig - step
            minus = objective(False)
            flat[idx] = orig
            if not (np.isfinite(plus) and np.isfinite(minus)):
                report.message = f"non-finite loss while perturbing {p.name}"
                return report
            numeric[k] = (plus - minus) / (2.0 * step)
        report.errors[p.name] = relative_error(analytic[p.name].reshape(-1)[coords], numeric)
    objective(True)
    return report


def check_layer(layer, x, step=1e-5, tolerance=1e-4, seed=0) -> GradCheckReport:
    """Check a layer or block on a random linear readout ``sum(out * proj)``.

    The input is checked alongside the parameters as a pseudo-tensor named
    ``<layer>.input``. Dropout masks are held fixed after the first draw.
    """
    from .layers import TRAIN, frozen_dropout
    from .tensor import ParamTensor

    inp = ParamTensor(f"{layer.name}.input", x)
    layers = getattr(layer, "layers", [layer])
    params = [inp] + list(layer.parameters())
    proj = np.random.default_rng([seed, 5]).normal(size=layer.forward(inp.values, TRAIN).shape)

    def objective(compute_grad):
        out = layer.forward(inp.values, TRAIN)
        if compute_grad:
            for p in params:
                p.zero_grad()
            inp.grads += layer.backward(proj)
        return float(np.sum(out * proj))

    with frozen_dropout(layers):
        return gradient_check(objective, params, step, tolerance, seed=seed)
