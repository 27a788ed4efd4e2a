"""Adaptive per-term loss weights."""
import logging
from typing import Callable, Optional, Sequence

import numpy as np

from schemas import FixedWeights, LossGradientWeights, MiniMaxWeights

logger = logging.getLogger(__name__)

_TINY = np.finfo(np.float64).tiny


def update_loss_gradients(
    weights: np.ndarray, gradients: Sequence[np.ndarray], gamma: float, clamp_eps: float = 1e-7
) -> np.ndarray:
    """α_i <- (1-γ)·α_i + γ / (mean|∇C_i| + clamp_eps); terms with non-finite gradients keep their weight."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(gradients) != weights.size:
        raise ValueError(f"Expected {weights.size} gradient vectors, got {len(gradients)}")
    lengths = {np.asarray(g).size for g in gradients}
    if len(lengths) > 1:
        raise ValueError(f"Gradient vectors differ in length: {sorted(lengths)}")
    updated = weights.copy()
    for i, grad in enumerate(gradients):
        magnitude = float(np.mean(np.abs(grad))) if np.asarray(grad).size else 0.0
        if not np.isfinite(magnitude):
            logger.warning(f"Ignoring non-finite gradient for term {i} in weight update")
            continue
        candidate = max(1.0 / (magnitude + clamp_eps), _TINY)
        updated[i] = (1 - gamma) * weights[i] + gamma * candidate
    return updated


def update_minimax(weights: np.ndarray, losses: Sequence[float], learning_rates: Sequence[float]) -> np.ndarray:
    """α_i <- α_i + lr_i · C_i; non-finite losses are skipped and weights stay positive."""
    weights = np.asarray(weights, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    rates = np.asarray(learning_rates, dtype=np.float64)
    finite = np.isfinite(losses)
    if not finite.all():
        logger.warning(f"Ignoring non-finite losses for terms {np.flatnonzero(~finite).tolist()} in weight update")
    step = np.where(finite, rates * np.where(finite, losses, 0.0), 0.0)
    return np.maximum(weights + step, _TINY)


class WeightScheme:
    """Current weights plus the cadence on which they change."""

    kind = "fixed"
    needs_gradients = False
    update_every = 1

    def __init__(self, initial: np.ndarray):
        self.weights = np.asarray(initial, dtype=np.float64).copy()

    def due(self, iteration: int) -> bool:
        return iteration > 0 and iteration % self.update_every == 0

    def step(
        self,
        iteration: int,
        term_losses: np.ndarray,
        term_gradients: Optional[Callable[[], list[np.ndarray]]] = None,
    ) -> bool:
        """Apply the update for ``iteration``; True when the weights changed."""
        return False


class LossGradientScheme(WeightScheme):
    kind = "lossgrad"
    needs_gradients = True

    def __init__(self, initial: np.ndarray, config: LossGradientWeights):
        super().__init__(initial)
        self.gamma = config.gamma
        self.update_every = config.update_every
        self.clamp_eps = config.clamp_eps

    def step(self, iteration, term_losses, term_gradients=None) -> bool:
        if not self.due(iteration) or term_gradients is None:
            return False
        self.weights = update_loss_gradients(self.weights, term_gradients(), self.gamma, self.clamp_eps)
        return True


class MiniMaxScheme(WeightScheme):
    kind = "minimax"

    def __init__(self, initial: np.ndarray, config: MiniMaxWeights, boundary_mask: Sequence[bool]):
        super().__init__(initial)
        self.update_every = config.update_every
        self.learning_rates = np.where(np.asarray(boundary_mask, dtype=bool), config.lr_bc, config.lr_pde)

    def step(self, iteration, term_losses, term_gradients=None) -> bool:
        if not self.due(iteration):
            return False
        self.weights = update_minimax(self.weights, term_losses, self.learning_rates)
        return True


def build_weight_scheme(config, boundary_mask: Sequence[bool]) -> WeightScheme:
    """Scheme for terms in program order; ``boundary_mask`` marks boundary terms."""
    count = len(boundary_mask)
    if isinstance(config, FixedWeights):
        initial = np.ones(count) if config.weights is None else np.asarray(config.weights, dtype=np.float64)
        if initial.size != count:
            raise ValueError(f"Fixed weights need {count} values, got {initial.size}")
        return WeightScheme(initial)
    if isinstance(config, LossGradientWeights):
        return LossGradientScheme(np.ones(count), config)
    if isinstance(config, MiniMaxWeights):
        return MiniMaxScheme(np.ones(count), config, boundary_mask)
    raise ValueError(f"Unknown weight scheme {config!r}")
