"""Domain types shared by the estimators: observations, data packs, posterior
ensembles, noise models and the parametric model interface."""
import abc
import collections.abc
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from .exceptions import DataError, ParameterError


def _frozen_array(values, dtype=float, ndim: Optional[int] = None, name: str = "array") -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    if ndim is not None and array.ndim != ndim:
        raise DataError(f"{name}: expected {ndim} dimension(s), got shape {array.shape}")
    array.flags.writeable = False
    return array


def as_param_vector(values, dim: Optional[int] = None) -> np.ndarray:
    """Converts values to a 1-D float parameter vector, checking that all components are finite"""
    theta = np.atleast_1d(np.asarray(values, dtype=float))
    if theta.ndim != 1:
        raise ParameterError(f"parameter vector must be 1-D, got shape {theta.shape}")
    if dim is not None and theta.shape[0] != dim:
        raise ParameterError(f"parameter vector must have {dim} components, got {theta.shape[0]}")
    if not np.all(np.isfinite(theta)):
        raise ParameterError(f"parameter vector has non-finite components: {theta}")
    return theta


@dataclass(frozen=True)
class Observation:
    input: np.ndarray
    output: np.ndarray
    time_index: int

    def __post_init__(self):
        object.__setattr__(self, "input", _frozen_array(np.atleast_1d(self.input), ndim=1, name="input"))
        object.__setattr__(self, "output", _frozen_array(np.atleast_1d(self.output), ndim=1, name="output"))
        if self.time_index < 0:
            raise DataError(f"negative time index {self.time_index}")


class ObservationStream(collections.abc.Sequence):
    """An ordered run of observations held as column arrays.

    inputs is (N, m), outputs is (N, K), time_index is (N,) and strictly increasing.
    Indexing with an integer gives an Observation, slicing gives another stream.
    """
    def __init__(self, inputs, outputs, time_index=None,
                 input_names: Optional[Sequence[str]] = None,
                 output_names: Optional[Sequence[str]] = None):
        inputs = np.asarray(inputs, dtype=float)
        outputs = np.asarray(outputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        if outputs.ndim == 1:
            outputs = outputs[:, None]
        if inputs.shape[0] != outputs.shape[0]:
            raise DataError(f"{inputs.shape[0]} inputs but {outputs.shape[0]} outputs")
        if time_index is None:
            time_index = np.arange(inputs.shape[0])
        time_index = np.asarray(time_index, dtype=np.int64)
        if time_index.shape != (inputs.shape[0],):
            raise DataError("time_index must have one entry per observation")
        if len(time_index) and time_index[0] < 0:
            raise DataError("time indices must be non-negative")
        if np.any(np.diff(time_index) <= 0):
            raise DataError("time indices must be strictly increasing within a stream")
        self.inputs = _frozen_array(inputs, ndim=2)
        self.outputs = _frozen_array(outputs, ndim=2)
        self.time_index = _frozen_array(time_index, dtype=np.int64, ndim=1)
        self.input_names = list(input_names or [f"in{i+1}" for i in range(inputs.shape[1])])
        self.output_names = list(output_names or [f"out{i+1}" for i in range(outputs.shape[1])])
        if len(self.input_names) != inputs.shape[1] or len(self.output_names) != outputs.shape[1]:
            raise DataError("column names do not match the data dimensions")

    @classmethod
    def from_observations(cls, observations: Iterable[Observation], **kw) -> "ObservationStream":
        observations = list(observations)
        if not observations:
            return cls(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0, dtype=np.int64), **kw)
        inputs = np.stack([obs.input for obs in observations])
        outputs = np.stack([obs.output for obs in observations])
        return cls(inputs, outputs, [obs.time_index for obs in observations], **kw)

    def __len__(self):
        return self.inputs.shape[0]

    def __getitem__(self, item):
        if isinstance(item, slice):
            return ObservationStream(self.inputs[item], self.outputs[item], self.time_index[item],
                                     self.input_names, self.output_names)
        return Observation(self.inputs[item], self.outputs[item], int(self.time_index[item]))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(dict(time_index=self.time_index))
        for i, name in enumerate(self.input_names):
            frame[name] = self.inputs[:, i]
        for i, name in enumerate(self.output_names):
            frame[name] = self.outputs[:, i]
        return frame


def read_stream_csv(path: str, input_columns: Optional[Sequence[str]] = None,
                    output_columns: Optional[Sequence[str]] = None) -> ObservationStream:
    """Reads an observation stream from CSV.

    The file has a time_index column plus input and output columns. If column names
    are not given, inputs are the in* columns and outputs the out* columns.
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as exc:
        raise DataError(f"can't read observations from {path}", nested=exc)
    if "time_index" not in frame.columns:
        raise DataError(f"{path}: missing time_index column")
    if input_columns is None:
        input_columns = [col for col in frame.columns if col.startswith("in")]
    if output_columns is None:
        output_columns = [col for col in frame.columns if col.startswith("out")]
    missing = [col for col in list(input_columns) + list(output_columns) if col not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
    if not input_columns or not output_columns:
        raise DataError(f"{path}: no input or output columns")
    return ObservationStream(frame[list(input_columns)].to_numpy(), frame[list(output_columns)].to_numpy(),
                             frame["time_index"].to_numpy(), input_columns, output_columns)


def write_stream_csv(stream: ObservationStream, path: str):
    stream.to_frame().to_csv(path, index=False, float_format="%.17g")


@dataclass(frozen=True)
class DataPack:
    """N_s consecutive observations processed in one algorithm step"""
    inputs: np.ndarray
    outputs: np.ndarray
    time_index: np.ndarray
    index: int

    def __post_init__(self):
        object.__setattr__(self, "inputs", _frozen_array(self.inputs, ndim=2, name="inputs"))
        object.__setattr__(self, "outputs", _frozen_array(self.outputs, ndim=2, name="outputs"))
        object.__setattr__(self, "time_index", _frozen_array(self.time_index, dtype=np.int64, ndim=1, name="time_index"))
        size = self.time_index.shape[0]
        if size == 0:
            raise DataError("empty data pack")
        if self.inputs.shape[0] != size or self.outputs.shape[0] != size:
            raise DataError("data pack arrays have inconsistent lengths")
        if np.any(np.diff(self.time_index) != 1):
            raise DataError(f"time indices of pack {self.index} are not contiguous")
        if self.index < 0:
            raise DataError(f"negative pack index {self.index}")

    def __len__(self):
        return self.time_index.shape[0]

    @property
    def size(self) -> int:
        return len(self)

    @property
    def observations(self) -> List[Observation]:
        return [Observation(x, y, int(t)) for x, y, t in zip(self.inputs, self.outputs, self.time_index)]


def partition_stream(stream: Union[ObservationStream, Sequence[Observation]], pack_size: int) -> List[DataPack]:
    """Splits a stream into consecutive packs of pack_size observations.

    A trailing remainder shorter than pack_size is withheld.
    """
    if int(pack_size) != pack_size or pack_size < 1:
        raise ParameterError(f"pack size must be a positive integer, got {pack_size}")
    pack_size = int(pack_size)
    if not isinstance(stream, ObservationStream):
        stream = ObservationStream.from_observations(stream)
    npacks = len(stream) // pack_size
    packs = []
    for t in range(npacks):
        chunk = slice(t * pack_size, (t + 1) * pack_size)
        packs.append(DataPack(stream.inputs[chunk], stream.outputs[chunk], stream.time_index[chunk], t))
    return packs


@dataclass(frozen=True)
class EmpiricalStats:
    mean: np.ndarray
    variance: np.ndarray
    degenerate: bool = False


def empirical_stats(pack: DataPack) -> EmpiricalStats:
    """Component-wise mean and unbiased variance of the pack outputs. A single-observation
    pack has variance 0 and is flagged degenerate."""
    outputs = pack.outputs
    mean = outputs.mean(axis=0)
    if outputs.shape[0] < 2:
        return EmpiricalStats(mean, np.zeros_like(mean), degenerate=True)
    return EmpiricalStats(mean, outputs.var(axis=0, ddof=1))


@dataclass(frozen=True)
class PosteriorEnsemble:
    """Accepted-sample chain of one algorithm step, with rejections repeated.

    The second half of the chain (from burn_in on) represents the posterior.
    """
    samples: np.ndarray
    pack_index: int = 0
    accepted: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2 or samples.shape[0] == 0:
            raise ParameterError(f"ensemble needs a non-empty (k, d) sample array, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("ensemble samples must be finite")
        object.__setattr__(self, "samples", _frozen_array(samples, ndim=2))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def burn_in(self) -> int:
        return len(self) // 2

    @property
    def post_burn_in(self) -> np.ndarray:
        return self.samples[self.burn_in:]

    @property
    def acceptance_rate(self) -> float:
        # a chain of one sample made no proposals
        if len(self) < 2:
            return 1.0
        return self.accepted / (len(self) - 1)


NOISE_FAMILIES = ("gaussian", "laplace", "student_t")


@dataclass(frozen=True)
class NoiseModel:
    """Measurement noise density with location mu_nu and scale sigma_nu.

    For the laplace family sigma_nu is the diversity b, for student_t the scale of a
    t distribution with dof degrees of freedom.
    """
    mu_nu: float = 0.0
    sigma_nu: float = 1.0
    family: str = "gaussian"
    dof: float = 4.0

    def __post_init__(self):
        if not (np.isfinite(self.sigma_nu) and self.sigma_nu > 0):
            raise ParameterError(f"noise scale must be positive, got {self.sigma_nu}")
        if not np.isfinite(self.mu_nu):
            raise ParameterError(f"noise mean must be finite, got {self.mu_nu}")
        if self.family not in NOISE_FAMILIES:
            raise ParameterError(f"unknown noise family '{self.family}'")
        if self.family == "student_t" and not self.dof > 0:
            raise ParameterError(f"student_t noise needs positive degrees of freedom, got {self.dof}")

    @classmethod
    def gaussian(cls, mu_nu: float = 0.0, sigma_nu: float = 1.0) -> "NoiseModel":
        return cls(mu_nu, sigma_nu, "gaussian")

    @classmethod
    def laplace(cls, mu_nu: float = 0.0, sigma_nu: float = 1.0) -> "NoiseModel":
        return cls(mu_nu, sigma_nu, "laplace")

    @classmethod
    def student_t(cls, mu_nu: float = 0.0, sigma_nu: float = 1.0, dof: float = 4.0) -> "NoiseModel":
        return cls(mu_nu, sigma_nu, "student_t", dof)

    def log_pdf(self, residuals):
        """Element-wise log-density of the residuals"""
        residuals = np.asarray(residuals, dtype=float)
        if self.family == "gaussian":
            return stats.norm.logpdf(residuals, loc=self.mu_nu, scale=self.sigma_nu)
        elif self.family == "laplace":
            return stats.laplace.logpdf(residuals, loc=self.mu_nu, scale=self.sigma_nu)
        return stats.t.logpdf(residuals, self.dof, loc=self.mu_nu, scale=self.sigma_nu)

    def __call__(self, residuals):
        return self.log_pdf(residuals)


class ParametricModel(abc.ABC):
    """Output model y = F(x, theta) used by the estimators.

    Subclasses implement predict_many(), which evaluates k parameter vectors over
    N inputs at once and returns (k, N, K) predictions. Implementations must be pure.
    """
    param_names: List[str] = []
    input_names: List[str] = []
    output_names: List[str] = []

    @property
    def dim(self) -> int:
        return len(self.param_names)

    @abc.abstractmethod
    def predict_many(self, thetas: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        ...

    def predict(self, theta, input) -> np.ndarray:
        """One-step-ahead output for a single parameter vector and input"""
        theta = np.asarray(theta, dtype=float)
        input = np.atleast_1d(np.asarray(input, dtype=float))
        return self.predict_many(theta[None, :], input[None, :])[0, 0]

    def predict_pack(self, theta, inputs) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return self.predict_many(theta[None, :], np.asarray(inputs, dtype=float))[0]
