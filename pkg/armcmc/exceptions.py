from typing import Any, Dict, List, Union
from typing import Optional as _Optional

logger = None

def set_logger(log):
    global logger
    logger = log


class ArmcmcBaseException(Exception):
    def __init__(self, message: str,
                 nested: _Optional[Union[Exception, List[Exception]]] = None, log=None):
        """Initializes exception object

        Args:
            message (str): error message
            nested (_Optional[Union[Exception, List[Exception]]]): Nested exception(s). Defaults to None.
            log (logger): if not None, logs the exception to the given logger
        """
        self.message = message
        if isinstance(nested, Exception):
            nested = [nested]
        self.nested = nested or []
        if nested:
            message = f"{message}: {', '.join(map(str, nested))}"
        Exception.__init__(self, message)
        if log is not None:
            if not hasattr(log, 'error'):
                log = logger
            if log is not None:
                log.error(message)
        self.logged = log is not None

class ConfigError(ArmcmcBaseException):
    pass

class ConfigValidationError(ConfigError):
    pass

class DataError(ArmcmcBaseException):
    pass

class ParameterError(ArmcmcBaseException, ValueError):
    pass

class SamplerError(ArmcmcBaseException):
    pass

class UnreachableReliabilityError(SamplerError, ValueError):
    pass

class ConvergenceError(SamplerError):
    def __init__(self, message, last_iterate: float, iterations: int = 0, log=None):
        self.last_iterate = last_iterate
        self.iterations = iterations
        super().__init__(f"{message} (last iterate {last_iterate:.3f} after {iterations} iterations)", log=log)

class ZeroDensityError(SamplerError):
    pass

class ProposalError(SamplerError):
    pass

class RecursionStepError(ArmcmcBaseException):
    pass

class ModelError(ArmcmcBaseException):
    pass

class PredictionError(ModelError):
    def __init__(self, message, sample_index: _Optional[int] = None, log=None):
        self.sample_index = sample_index
        if sample_index is not None:
            message = f"{message} (posterior sample #{sample_index})"
        super().__init__(message, log=log)

class LinearizationError(ModelError, ValueError):
    pass

class SimulationError(ArmcmcBaseException):
    pass

class SingularDynamicsError(SimulationError):
    pass

class BaselineError(ArmcmcBaseException):
    pass

class RlsUpdateError(BaselineError):
    def __init__(self, message, state: Any, log=None):
        self.state = state
        super().__init__(message, log=log)

class ParticleDegeneracyError(BaselineError):
    def __init__(self, message, diagnostics: Dict[str, Any], log=None):
        self.diagnostics = dict(diagnostics)
        details = ", ".join(f"{key}={value}" for key, value in self.diagnostics.items())
        super().__init__(f"{message} ({details})" if details else message, log=log)

class MetricsError(ArmcmcBaseException):
    pass

class ExperimentError(ArmcmcBaseException):
    def __init__(self, message, pack_index: _Optional[int] = None, nested=None, log=None):
        self.pack_index = pack_index
        if pack_index is not None:
            message = f"{message} at pack {pack_index}"
        super().__init__(message, nested=nested, log=log)
