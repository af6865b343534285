from typing import Iterable, Optional, Sequence

import numpy as np


class ConfigurationError(ValueError):
    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


class UnknownKeysError(ConfigurationError):
    def __init__(self, section: str, keys: Iterable[str]):
        self.section = section
        self.unknown_keys = sorted(keys)
        super().__init__(
            f"Unknown keys in [{section}]: {self.unknown_keys}"
        )


class UnknownProblemError(ConfigurationError):
    def __init__(self, name: str, valid: Sequence[str]):
        self.name = name
        super().__init__(
            f"Unknown problem '{name}', must be one of {list(valid)}"
        )


class ContractError(ValueError):
    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


class DimensionMismatchError(ContractError):
    def __init__(self, expected: int, observed: int, what: str = "input"):
        self.expected = expected
        self.observed = observed
        super().__init__(
            f"Expected {what} of dimension {expected}, got {observed}."
        )


class NumericError(ArithmeticError):
    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


class NonFiniteValueError(NumericError):
    def __init__(
        self,
        where: str,
        index: Optional[int] = None,
        point: Optional[np.ndarray] = None,
        slice_index: Optional[int] = None,
    ):
        self.where = where
        self.index = index
        self.point = point
        self.slice_index = slice_index
        msg = f"Non-finite value encountered in {where}"
        if index is not None:
            msg += f" at point {index}"
        if point is not None:
            msg += f" {np.asarray(point).tolist()}"
        if slice_index is not None:
            msg += f" (slice {slice_index})"
        super().__init__(msg + ".")


class TrainingDivergedError(NumericError):
    def __init__(self, phase: str, epoch: int, loss: float,
                 grad_norm: float):
        self.phase = phase
        self.epoch = epoch
        self.loss = loss
        self.grad_norm = grad_norm
        super().__init__(
            f"Training of {phase} diverged at epoch {epoch}: "
            f"loss={loss}, grad_norm={grad_norm}"
        )


class AcceptanceRateError(NumericError):
    def __init__(self, rate: float, proposals: int):
        self.rate = rate
        self.proposals = proposals
        super().__init__(
            f"Rejection sampler acceptance rate {rate:.3g} after "
            f"{proposals} proposals is below 1e-4. The density is too "
            "concentrated for rejection sampling; a Metropolis-Hastings "
            "sampler would be needed."
        )


class CollocationSetExhaustedError(NumericError):
    def __init__(self, name: str = "S"):
        self.name = name
        super().__init__(
            f"Collocation set exhausted: no alive points left in {name}."
        )


class EmptySliceError(NumericError):
    def __init__(self, slice_index: int):
        self.slice_index = slice_index
        super().__init__(
            f"Slice {slice_index} has no uniform points; the slice "
            "integral estimate is undefined."
        )


class EmptyPointSetError(NumericError):
    def __init__(self, what: str):
        self.what = what
        super().__init__(f"No usable points left for {what}.")


class ZeroReferenceNormError(NumericError):
    def __init__(self):
        super().__init__(
            "Reference solution has zero norm on the evaluation lattice."
        )
