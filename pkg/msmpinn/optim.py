from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import _exceptions as exc


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0)


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float = 1e-3,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> Tuple[np.ndarray, AdamState]:
    """Apply one bias-corrected Adam update.

    Inputs are left untouched; new arrays are returned.

    :param params: Flat parameter vector
    :type params: np.ndarray

    :param grads: Gradient of the loss at ``params``
    :type grads: np.ndarray

    :param state: Moments and step counter before the update
    :type state: msmpinn.optim.AdamState

    :param lr: Learning rate
    :type lr: float

    :param betas: Decay rates of the first and second moments
    :type betas: (float, float)

    :param eps: Denominator offset
    :type eps: float

    :returns: Updated parameters and state
    :rtype: (np.ndarray, msmpinn.optim.AdamState)
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape:
        raise exc.DimensionMismatchError(params.size, grads.size, "gradient")
    if state.first_moment.shape != params.shape:
        raise exc.DimensionMismatchError(params.size,
                                         state.first_moment.size,
                                         "Adam state")
    beta1, beta2 = betas
    step = state.step + 1
    m = beta1 * state.first_moment + (1.0 - beta1) * grads
    v = beta2 * state.second_moment + (1.0 - beta2) * (grads * grads)
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m, v, step)
