"""Run configuration: structured schema, YAML loading and validation.

Each section below is a plain dataclass turned into an OmegaConf structured
config. Field metadata carries the help string shown by the CLI, the allowed
choices and a numeric range in interval notation ("(0,1]", "[1,)").
"""
import dataclasses
import glob
import math
import os.path
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pydantic
import pydantic.dataclasses
from omegaconf import OmegaConf, DictConfig, ListConfig
from omegaconf.errors import OmegaConfBaseException

from . import configuratt
from .exceptions import ConfigError, ConfigValidationError

PRESET_DIR = os.path.join(os.path.dirname(__file__), "presets")

MODELS = ["actuator", "hunt_crossley"]
METHODS = ["armcmc", "rls", "pf", "mcmc_plain"]


def EmptyListDefault():
    return field(default_factory=list)

def EmptyDictDefault():
    return field(default_factory=dict)


def _meta(help: str, range: Optional[str] = None, choices: Optional[List[Any]] = None):
    metadata = dict(help=help)
    if range is not None:
        metadata['range'] = range
    if choices is not None:
        metadata['choices'] = choices
    return metadata


@dataclass
class ArmcmcSection:
    pack_size: int = field(default=100, metadata=_meta("observations per data pack (N_s)", "[1,)"))
    epsilon: float = field(default=0.01, metadata=_meta("precision of the sample-count bound", "(0,1]"))
    delta: float = field(default=0.9, metadata=_meta("reliability of the sample-count bound", "[0,1)"))
    zeta_th: float = field(default=1.0, metadata=_meta("model mismatch threshold", "(0,)"))
    rho: float = field(default=0.0, metadata=_meta("volatility weight of the temporal likelihood weights", "[0,1]"))
    mu_nu: float = field(default=0.0, metadata=_meta("noise mean estimate"))
    sigma_nu: float = field(default=1.0, metadata=_meta("noise scale estimate", "(0,)"))
    noise_family: str = field(default="gaussian", metadata=_meta("measurement noise density",
                                                                 choices=["gaussian", "laplace", "student_t"]))
    noise_dof: float = field(default=4.0, metadata=_meta("degrees of freedom for student_t noise", "(0,)"))
    prior_mean: List[float] = EmptyListDefault()
    prior_scale: List[float] = EmptyListDefault()
    proposal_scale: List[float] = EmptyListDefault()
    mismatch: str = field(default="signed", metadata=_meta("mismatch index: signed mean residual, or mean absolute residual",
                                                           choices=["signed", "absolute"]))
    fixed_samples: Optional[int] = field(default=None, metadata=_meta("use this chain length instead of the bound", "[1,)"))
    reestimate_noise: bool = field(default=False, metadata=_meta("re-estimate noise mean/scale from pack residuals"))
    kde_max_points: int = field(default=512, metadata=_meta("support points of the previous-posterior density", "[1,)"))
    histogram_bins: int = field(default=64, metadata=_meta("bins of the modification-phase mode estimator", "[1,)"))
    adaptive_proposal: bool = field(default=False, metadata=_meta(
        "fit the Gaussian branch to the local curvature of each pack's posterior and smooth previous-posterior draws"))
    proposal_inflation: float = field(default=1.5, metadata=_meta("scale factor on the fitted Gaussian branch (adaptive_proposal)", "(0,)"))


@dataclass
class RlsSection:
    initial_covariance: float = field(default=1.0e4, metadata=_meta("P0 = c I, in scaled coordinates", "(0,)"))
    input_scale: float = field(default=1.0, metadata=_meta("regressor scaling factor s", "(0,)"))
    initial_theta: List[float] = EmptyListDefault()
    saturation_factor: Optional[float] = field(default=10.0, metadata=_meta(
        "clamp estimates to prior mean +/- factor x prior scale; null disables", "(0,)"))


@dataclass
class PfSection:
    particles: int = field(default=100, metadata=_meta("number of particles", "[1,)"))
    jitter_fraction: float = field(default=0.01, metadata=_meta("parameter random walk, fraction of prior scale", "[0,)"))
    resample: str = field(default="always", metadata=_meta("resampling policy", choices=["always", "ess"]))
    ess_threshold: float = field(default=0.5, metadata=_meta("resample below this fraction of N (resample: ess)", "(0,1]"))
    measurement_sigma: List[float] = EmptyListDefault()
    process_sigma: List[float] = EmptyListDefault()


@dataclass
class McmcVariant:
    name: str = "mcmc1"
    samples: Optional[int] = None
    pack_factor: int = 1


@dataclass
class McmcPlainSection:
    variants: List[McmcVariant] = field(default_factory=lambda: [McmcVariant("mcmc1", 5000, 1),
                                                                 McmcVariant("mcmc2", None, 2)])


@dataclass
class ControlSegment:
    start: float = 0.0
    end: float = 1.0
    channel: str = "charge"
    amplitude: float = 0.0
    modulation: float = 0.0
    mod_period: float = 1.0


@dataclass
class ActuatorSection:
    q1: float = 1408.50
    q2: float = 132.28
    q3: float = 3319.40
    q4: float = -2.14e-4
    q5: float = 6.12e-9
    q6: float = -9.76e-5
    q7: float = -1.90e-9
    p_atm: float = field(default=101.3, metadata=_meta("atmospheric pressure, kPa", "(0,)"))
    p_s: float = field(default=800.0, metadata=_meta("supply pressure, kPa", "(0,)"))
    p0: Optional[float] = field(default=None, metadata=_meta("initial pressure, kPa (default p_atm)"))
    noise_sigma: float = field(default=0.0, metadata=_meta("output noise standard deviation", "[0,)"))
    input_noise_sigma: float = field(default=0.0, metadata=_meta("noise on the logged p and p_dot", "[0,)"))
    schedule: List[ControlSegment] = EmptyListDefault()


@dataclass
class NeedleSection:
    x1: float = field(default=16.65, metadata=_meta("puncture depth, mm", "(0,)"))
    x2: float = field(default=10.21, metadata=_meta("post-puncture stiffness depth, mm", "(0,)"))
    K_e: float = 1.2
    B_e: float = 0.9
    p: float = field(default=1.25, metadata=_meta("Hunt-Crossley exponent", "[1,2]"))
    C_n: float = -11.96e-3
    C_p: float = 10.57e-3
    D_n: float = -0.01823
    D_p: float = 0.01845
    dv_half: float = field(default=0.005, metadata=_meta("half width of the Karnopp stick band, mm/s", "(0,)"))
    cutting_force: float = 0.94
    amplitude: float = field(default=6.0, metadata=_meta("insertion amplitude, mm", "(0,)"))
    offset: Optional[float] = field(default=None, metadata=_meta("trajectory offset, mm (default 5% of amplitude)"))
    period: float = field(default=10.0, metadata=_meta("insertion period, s", "(0,)"))
    noise_fraction: float = field(default=0.01, metadata=_meta("force noise as a fraction of the signal range", "[0,)"))
    noise_sigma: Optional[float] = field(default=None, metadata=_meta("absolute force noise, overrides noise_fraction", "[0,)"))


@dataclass
class HeatmapSection:
    enabled: bool = True
    bins: int = field(default=100, metadata=_meta("bins per parameter", "[1,)"))
    ranges: Dict[str, List[float]] = EmptyDictDefault()


@dataclass
class RunConfigSchema:
    model: str = field(default="hunt_crossley", metadata=_meta("system to identify", choices=MODELS))
    methods: List[str] = field(default_factory=lambda: ["armcmc", "rls"])
    seed: int = 0
    output_dir: str = "output"
    dataset: Optional[str] = field(default=None, metadata=_meta("observation CSV to load instead of simulating"))
    duration: float = field(default=10.0, metadata=_meta("simulated duration, s", "(0,)"))
    sample_time: float = field(default=0.001, metadata=_meta("sample period T, s", "(0,)"))
    armcmc: ArmcmcSection = field(default_factory=ArmcmcSection)
    rls: RlsSection = field(default_factory=RlsSection)
    pf: PfSection = field(default_factory=PfSection)
    mcmc_plain: McmcPlainSection = field(default_factory=McmcPlainSection)
    actuator: ActuatorSection = field(default_factory=ActuatorSection)
    needle: NeedleSection = field(default_factory=NeedleSection)
    heatmap: HeatmapSection = field(default_factory=HeatmapSection)


SECTIONS = dict(armcmc=ArmcmcSection, rls=RlsSection, pf=PfSection, mcmc_plain=McmcPlainSection,
                actuator=ActuatorSection, needle=NeedleSection, heatmap=HeatmapSection)


_INTERVAL = re.compile(r"^\s*([\[\(])\s*([^,]*?)\s*,\s*([^\]\)]*?)\s*([\]\)])\s*$")

def parse_range(spec: str) -> Tuple[float, float, bool, bool]:
    """Parses interval notation into (lo, hi, lo_closed, hi_closed). Empty bounds are infinite."""
    match = _INTERVAL.match(spec)
    if not match:
        raise ConfigError(f"invalid range specification '{spec}'")
    lbr, lo, hi, rbr = match.groups()
    lo = float(lo) if lo else -math.inf
    hi = float(hi) if hi else math.inf
    return lo, hi, lbr == "[", rbr == "]"


def in_range(value: float, spec: str) -> bool:
    lo, hi, lo_closed, hi_closed = parse_range(spec)
    if value < lo or (value == lo and not lo_closed):
        return False
    if value > hi or (value == hi and not hi_closed):
        return False
    return True


def validate_section(name: str, schema_cls, values: Dict[str, Any]) -> Dict[str, Any]:
    """Validates the values of one config section against its schema dataclass

    Args:
        name (str): section name, used in messages
        schema_cls: schema dataclass of the section
        values (Dict[str, Any]): section content

    Raises:
        ConfigValidationError: unknown field, wrong type, invalid choice or value out of range

    Returns:
        Dict[str, Any]: validated values
    """
    if isinstance(values, (DictConfig, ListConfig)):
        values = OmegaConf.to_container(values, resolve=True)

    fields = {fld.name: fld for fld in dataclasses.fields(schema_cls)}
    unknown = [key for key in values if key not in fields]
    if unknown:
        raise ConfigValidationError(f"unknown parameter(s) {', '.join(f'{name}.{key}' for key in unknown)}")

    # the pydantic dataclass does the type checking
    dcls = dataclasses.make_dataclass(f"{schema_cls.__name__}Validator",
                                      [(fld.name, fld.type) for fld in fields.values()])
    pcls = pydantic.dataclasses.dataclass(dcls)
    try:
        validated = pcls(**{key: values.get(key, _default_of(fields[key])) for key in fields})
    except pydantic.ValidationError as exc:
        errors = [f"'{name}.{'.'.join(map(str, err['loc']))}': {err['msg']}" for err in exc.errors()]
        raise ConfigValidationError(', '.join(errors))

    validated = dataclasses.asdict(validated)

    for key, value in validated.items():
        metadata = fields[key].metadata
        if value is None:
            continue
        choices = metadata.get('choices')
        if choices and value not in choices:
            raise ConfigValidationError(f"{name}.{key}: invalid value '{value}', expected one of {', '.join(map(str, choices))}")
        valid_range = metadata.get('range')
        if valid_range and not in_range(value, valid_range):
            raise ConfigValidationError(f"{name}.{key}: value {value} outside of {valid_range}")

    return validated


def _default_of(fld: dataclasses.Field):
    if fld.default is not dataclasses.MISSING:
        return fld.default
    if fld.default_factory is not dataclasses.MISSING:
        return fld.default_factory()
    return None


def _check_run(conf: RunConfigSchema):
    top = {key: getattr(conf, key) for key in ("model", "methods", "seed", "output_dir", "dataset",
                                                "duration", "sample_time")}
    top_fields = [fld for fld in dataclasses.fields(RunConfigSchema) if fld.name in top]
    for fld in top_fields:
        value = top[fld.name]
        choices = fld.metadata.get('choices')
        if choices and value not in choices:
            raise ConfigValidationError(f"{fld.name}: invalid value '{value}', expected one of {', '.join(choices)}")
        valid_range = fld.metadata.get('range')
        if valid_range and value is not None and not in_range(value, valid_range):
            raise ConfigValidationError(f"{fld.name}: value {value} outside of {valid_range}")
    bad = [method for method in conf.methods if method not in METHODS]
    if bad:
        raise ConfigValidationError(f"methods: unknown method(s) {', '.join(bad)}, expected some of {', '.join(METHODS)}")
    if not conf.methods:
        raise ConfigValidationError("methods: at least one method must be selected")
    if conf.dataset is not None and not os.path.exists(conf.dataset):
        raise ConfigValidationError(f"dataset: {conf.dataset} doesn't exist")
    if not conf.needle.x2 < conf.needle.x1:
        raise ConfigValidationError(f"needle: need 0 < x2 < x1, got x1={conf.needle.x1}, x2={conf.needle.x2}")
    for segment in conf.actuator.schedule:
        if segment.channel not in ("charge", "discharge"):
            raise ConfigValidationError(f"actuator.schedule: invalid channel '{segment.channel}'")
        if not segment.end > segment.start:
            raise ConfigValidationError(f"actuator.schedule: segment [{segment.start}, {segment.end}] is empty")
    for variant in conf.mcmc_plain.variants:
        if variant.pack_factor < 1 or (variant.samples is not None and variant.samples < 1):
            raise ConfigValidationError(f"mcmc_plain.variants: invalid variant {variant.name}")
    mean, scale, prop = conf.armcmc.prior_mean, conf.armcmc.prior_scale, conf.armcmc.proposal_scale
    if len(mean) != len(scale) or (prop and len(prop) != len(mean)):
        raise ConfigValidationError("armcmc: prior_mean, prior_scale and proposal_scale must have equal lengths")
    if any(s <= 0 for s in list(scale) + list(prop)):
        raise ConfigValidationError("armcmc: prior_scale and proposal_scale must be positive")


def load_run_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> RunConfigSchema:
    """Loads a run config: schema defaults, then the YAML file, then key=value overrides

    Args:
        path (Optional[str]): YAML file, may use _include and _use
        overrides (Sequence[str]): dotlist overrides such as "armcmc.rho=0.1"

    Raises:
        ConfigError: file cannot be parsed or merged
        ConfigValidationError: content fails validation

    Returns:
        RunConfigSchema: the validated config
    """
    conf = OmegaConf.structured(RunConfigSchema)
    try:
        if path is not None:
            content, _ = configuratt.load(path)
            conf = OmegaConf.merge(conf, content)
        if overrides:
            conf = OmegaConf.merge(conf, OmegaConf.from_dotlist(list(overrides)))
    except OmegaConfBaseException as exc:
        raise ConfigValidationError(f"invalid config {path or ''}".strip(), nested=exc)

    for name, schema_cls in SECTIONS.items():
        validate_section(name, schema_cls, conf[name])

    run = OmegaConf.to_object(conf)
    _check_run(run)
    return run


def available_presets() -> Dict[str, DictConfig]:
    """Returns the shipped experiment presets, keyed by name"""
    files = sorted(glob.glob(os.path.join(PRESET_DIR, "*.yml")))
    files = [f for f in files if os.path.basename(f) != "defaults.yml"]
    presets, _ = configuratt.load_nested(files, structured=OmegaConf.structured(RunConfigSchema))
    return presets


def preset_path(name: str) -> str:
    path = os.path.join(PRESET_DIR, f"{name}.yml")
    if name == "defaults" or not os.path.exists(path):
        raise ConfigError(f"unknown preset '{name}', available presets are: {', '.join(available_presets())}")
    return path


def load_preset(name: str, overrides: Sequence[str] = ()) -> RunConfigSchema:
    return load_run_config(preset_path(name), overrides)


def save_config(conf: RunConfigSchema, path: str):
    OmegaConf.save(OmegaConf.structured(conf), path)


def help_rows(schema_cls) -> List[Tuple[str, str, str, str]]:
    """(name, type, default, help) rows describing a section, for the CLI help table"""
    rows = []
    for fld in dataclasses.fields(schema_cls):
        typename = getattr(fld.type, "__name__", None) or str(fld.type).replace("typing.", "")
        info = fld.metadata.get('help', '')
        if 'choices' in fld.metadata:
            info += f" [{'/'.join(map(str, fld.metadata['choices']))}]"
        if 'range' in fld.metadata:
            info += f" {fld.metadata['range']}"
        default = _default_of(fld)
        if dataclasses.is_dataclass(default):
            default = "(section)"
        rows.append((fld.name, typename, str(default), info.strip()))
    return rows
