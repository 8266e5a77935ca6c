"""Exception hierarchy shared by every sdeselect module."""


class SDESelectError(Exception):
    """Base class for all sdeselect failures"""


class GridError(SDESelectError, ValueError):
    """Grid or array shape mismatch, or an index outside the grid"""


class LinkError(SDESelectError, ValueError):
    """A covariate link function is undefined at an observed value"""


class ModelMismatchError(SDESelectError, ValueError):
    """Two models cannot be compared (diffusion, arity or mask mismatch)"""


class PriorError(SDESelectError, ValueError):
    """Invalid prior specification"""


class ConfigError(SDESelectError, ValueError):
    """Invalid or missing experiment configuration"""


class StoreError(SDESelectError):
    """An output file or directory could not be written"""


class SeriesFormatError(SDESelectError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message, row)
        self.message = message
        self.row = row

    def __str__(self):
        if self.row is None:
            return self.message
        return f"row {self.row}: {self.message}"


class SimulationError(SDESelectError):
    def __init__(self, message, step):
        super().__init__(message, step)
        self.message = message
        self.step = step

    def __str__(self):
        return f"{self.message} (step {self.step})"


class DiffusionFloorError(SDESelectError):
    def __init__(self, value, index):
        super().__init__(value, index)
        self.value = value
        self.index = index

    def __str__(self):
        return f"diffusion {self.value!r} below floor at grid index {self.index}"


class OptimizationError(SDESelectError):
    """No finite objective value could be reached"""


class DegenerateFitError(SDESelectError):
    """The data carry no information for the requested fit"""


class IndividualError(SDESelectError):
    def __init__(self, index, cause):
        super().__init__(index, cause)
        self.index = index
        self.cause = cause

    def __str__(self):
        return f"individual {self.index}: {self.cause}"


class ReplicateError(SDESelectError):
    def __init__(self, replicate, cause):
        super().__init__(replicate, cause)
        self.replicate = replicate
        self.cause = cause

    def __str__(self):
        return f"replicate {self.replicate}: {self.cause}"
