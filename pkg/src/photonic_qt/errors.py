"""Exception hierarchy shared across the package."""


class PhotonicQTError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(PhotonicQTError, ValueError):
    pass


class DimensionMismatchError(PhotonicQTError, ValueError):
    pass


class CapacityError(PhotonicQTError, ValueError):
    """Raised when a vector is too short to fill the requested parameters."""


class NumericalIntegrityError(PhotonicQTError, ArithmeticError):
    pass


class HeraldingStarvationError(PhotonicQTError, RuntimeError):
    """No heralded events survive brightness and transmission losses."""

    def __init__(self, n_samp: int, beta: float, transmittance: float, n_photons: int):
        self.n_samp = n_samp
        self.beta = beta
        self.transmittance = transmittance
        self.n_photons = n_photons
        super().__init__(
            f"0 of {n_samp} shots heralded: beta={beta}, T={transmittance}, "
            f"N={n_photons} gives success rate (beta*T)^N={(beta * transmittance) ** n_photons:.3e}"
        )


class DivergenceError(PhotonicQTError, FloatingPointError):
    def __init__(self, epoch: int, value: float):
        self.epoch = epoch
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")


class OptimizerAbort(PhotonicQTError, RuntimeError):
    """The objective returned a non-finite value; carries the best point seen."""

    def __init__(self, x_best, f_best, nfev: int):
        self.x_best = x_best
        self.f_best = f_best
        self.nfev = nfev
        super().__init__(f"objective returned a non-finite value after {nfev} evaluations")


class IDXFormatError(PhotonicQTError, ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")
