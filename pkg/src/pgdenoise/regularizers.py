"""Statistical residual regularizers: energy-based NLL and Fisher-score losses.

Both models score residuals r (noisy observation minus the physics-guided
prediction) conditioned on the problem's normalized inputs. The energy-based
model learns a scalar energy F whose normalized exponential is a density; its
partition sum runs over a uniform candidate grid spanning the residual batch.
The Fisher model learns a log-density surrogate u and penalizes the squared
score du/dr at the observations, anchored by the same grid-based NLL fit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError
from .network import Mlp

log = logging.getLogger(__name__)


@dataclass
class EbmModel:
    """Energy network F(context, r) with grid-based partition settings."""

    net: Mlp
    grid_size: int = 128
    grid_margin: float = 0.5  # extra span on each side, as a fraction of max-min


@dataclass
class FisherModel:
    """Log-density surrogate u(context, r) with squared-score weighting."""

    net: Mlp
    grid_size: int = 128
    grid_margin: float = 0.5
    score_weight: float = 0.1

    def __post_init__(self):
        if self.score_weight <= 0:
            raise ConfigurationError("score_weight must be positive")


def residual_grid(residual_values: np.ndarray, grid_size: int, margin: float):
    """Uniform candidate grid spanning the residual batch, with margin.

    A degenerate batch (max == min) widens to a symmetric +-1 window around
    the single value.
    """
    if residual_values.size == 0:
        raise ConfigurationError("residual batch must be nonempty")
    lo = float(np.min(residual_values))
    hi = float(np.max(residual_values))
    if hi == lo:
        log.warning("degenerate residual grid (all values %.3g); widening to +-1", lo)
        lo, hi = lo - 1.0, hi + 1.0
    else:
        span = hi - lo
        lo -= margin * span
        hi += margin * span
    grid = np.linspace(lo, hi, grid_size)
    return grid, grid[1] - grid[0]


def _energy_on_grid(net: Mlp, params, context: np.ndarray, grid: np.ndarray):
    """Evaluate the energy at every (row context, grid value) pair -> (n, M)."""
    n = context.shape[0]
    m = grid.size
    ctx_rep = np.repeat(context, m, axis=0)
    r_rep = np.tile(grid, n)
    cols = [ctx_rep[:, j] for j in range(ctx_rep.shape[1])] + [r_rep]
    flat = net.forward_cols(cols, params=params)
    return flat.reshape(n, m)


def _logsumexp_rows(f):
    """Row-wise log-sum-exp of an (n, M) payload, stabilized by a constant shift."""
    shift = ad._value(f).max(axis=1)
    return ad.log(ad.exp(f - shift[:, None]).sum(axis=1)) + shift


def ebm_log_partition(model: EbmModel, context, residual_values, params=None):
    """Per-row log Z where Z(ctx) = sum_j exp(F(ctx, r_j)) dr over the grid."""
    grid, dr = residual_grid(np.asarray(residual_values, dtype=np.float64),
                             model.grid_size, model.grid_margin)
    f_grid = _energy_on_grid(model.net, params, context, grid)
    return _logsumexp_rows(f_grid) + np.log(dr), grid, dr


def ebm_partition(model: EbmModel, context, residual_values, params=None):
    """Per-context partition estimate Z (exponentiated stabilized sum)."""
    log_z, _, _ = ebm_log_partition(model, context, residual_values, params)
    return np.exp(ad._value(log_z))


def ebm_nll(model: EbmModel, context, residuals, params=None, joint_grid: bool = False):
    """Mean of log Z(context) - F(context, r) over the batch.

    ``joint_grid`` switches the partition sum to run over all (context, grid)
    pairs jointly instead of per-context.
    """
    r_values = ad._value(residuals)
    context = np.asarray(context, dtype=np.float64)
    if context.shape[0] != r_values.shape[0]:
        raise ConfigurationError("context and residual batch sizes differ")
    log_z, _, _ = ebm_log_partition(model, context, r_values, params)
    if joint_grid:
        flat = log_z.reshape(1, -1) if isinstance(log_z, ad.Var) else log_z.reshape(1, -1)
        log_z = _logsumexp_rows(flat).reshape(-1) - np.log(r_values.shape[0])
    cols = [context[:, j] for j in range(context.shape[1])] + [residuals]
    f_obs = model.net.forward_cols(cols, params=params)
    per_row = log_z - f_obs
    return per_row.mean()


def fisher_loss(model: FisherModel, context, residuals, params=None):
    """Squared-score term at the observations plus a grid NLL fit term.

    Returns (total, score_term, fit_term) where
    total = score_weight * score_term + fit_term. Minimizing the squared
    score drives observed residuals toward stationary points of the learned
    log-density; the fit term pins the density to the batch and rules out
    the constant-u degenerate solution.
    """
    r_values = ad._value(residuals)
    context = np.asarray(context, dtype=np.float64)
    if context.shape[0] != r_values.shape[0]:
        raise ConfigurationError("context and residual batch sizes differ")
    ctx_cols = [context[:, j] for j in range(context.shape[1])]

    def f(cols):
        return model.net.forward_cols(cols, params=params)

    out = ad.dual2_eval(f, ctx_cols + [residuals], seeds=[len(ctx_cols)])
    score = out.grad[0]
    score_term = (score * score).mean()

    log_z, _, _ = ebm_log_partition(
        EbmModel(model.net, model.grid_size, model.grid_margin),
        context,
        r_values,
        params,
    )
    fit_term = (log_z - out.val).mean()
    total = model.score_weight * score_term + fit_term
    return total, score_term, fit_term


def make_reg_net(
    n_context: int,
    input_norm: tuple[np.ndarray, np.ndarray],
    seed: int = 0,
    hidden: tuple[int, ...] = (24, 24, 24, 24),
) -> Mlp:
    """Default regularizer network: four tanh hidden layers of 24 units."""
    sizes = [n_context + 1, *hidden, 1]
    return Mlp.create(sizes, "tanh", seed=seed, input_norm=input_norm)
