"""Result container shared by the fitters and the pipeline."""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


@dataclass
class FitReport:
    """Estimates, tuning values and diagnostics of a fit.

    Only the fields relevant to the producing routine are filled; the rest
    stay ``None``.
    """

    method: str
    ranks: Optional[tuple] = None
    model: object = None  # FactorModel
    params: object = None  # ParamPair
    mu: Optional[float] = None
    gamma: Optional[float] = None
    eta: Optional[float] = None
    k: Optional[int] = None
    sigma2: Optional[float] = None
    sigma2_naive: Optional[float] = None
    phi: Optional[float] = None
    objective_trace: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    warnings: list = field(default_factory=list)
    grad_norm: Optional[float] = None
    svd: Optional[tuple] = None  # (u, s, vt) of the stacked estimate, MCP only
    ic_records: Optional[list] = None
    rank_estimate: object = None
    eta_selection: object = None
    std_err_m: Optional[np.ndarray] = None
    std_err_theta: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    @property
    def objective(self):
        return self.objective_trace[-1] if self.objective_trace else None

    def with_updates(self, **kw):
        return replace(self, **kw)

    def summary(self):
        """Scalar fields as an ordered dict of printable values."""
        out = {"method": self.method}
        if self.ranks is not None:
            out["d_s"], out["d_m"], out["d_theta"] = (int(r) for r in self.ranks)
        for key in ("mu", "gamma", "eta", "k", "sigma2", "sigma2_naive", "phi"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        if self.objective_trace:
            out["objective_start"] = self.objective_trace[0]
            out["objective_final"] = self.objective_trace[-1]
        out["n_iter"] = self.n_iter
        out["converged"] = self.converged
        if self.grad_norm is not None:
            out["grad_norm"] = self.grad_norm
        out.update(self.extra)
        return out
