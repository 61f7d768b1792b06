"""Run configuration: INI files with per-module sections and named presets."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, fields

import numpy as np

from .problems import ProblemSpec, make_problem
from .training import ModelConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class RunConfig:
    # [problem]
    problem: str = "sinegordon"
    T: float = 3.0
    sigma: float = 0.1
    nu: float = 0.05
    epsilon: float = 0.1
    ic_form: str = "printed"
    linearization: str = "free_wave"
    extension: float = 2.0
    extrapolate: float = 2.0
    # [model]
    modes: tuple = (64,)
    t_samples: int = 65
    network: str = "mlp"
    hidden: int = 256
    depth: int = 2
    activation: str = "relu"
    orthogonal: bool = False
    ic_oversample: int = 8
    input_scale: str = "state_rms"
    output_scale: str = "1.0"
    # [train]
    steps: int = 300
    lr: float = 1e-2
    seed: int = 0
    collocation: str = "grid"
    collocation_oversample: int = 2
    random_points: int = 0
    metric_every: int = 25
    # [reference]
    ref_modes: tuple = (256,)
    ref_dt: float = 3.0 / 3072
    eval_points: tuple = (65,)
    # [output]
    out_dir: str = "runs/sinegordon"
    precision: int = 17

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = ["T", "sigma", "nu", "extension", "extrapolate", "hidden", "depth",
                    "t_samples", "ic_oversample", "lr", "collocation_oversample",
                    "metric_every", "ref_dt", "precision"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("modes", "ref_modes", "eval_points"):
            if not getattr(self, name) or any(int(m) < 1 for m in getattr(self, name)):
                raise ConfigError(f"{name} must list positive integers")
        if self.steps < 0 or self.seed < 0 or self.random_points < 0 or self.epsilon < 0:
            raise ConfigError("steps, seed, random_points and epsilon must be non-negative")
        if self.collocation not in ("grid", "random"):
            raise ConfigError(f"unknown collocation strategy {self.collocation!r}")
        if self.network not in ("mlp", "dimwise"):
            raise ConfigError(f"unknown network kind {self.network!r}")

    # -- derived objects

    def problem_spec(self) -> ProblemSpec:
        try:
            if self.problem == "sinegordon":
                return make_problem(self.problem, sigma=self.sigma, T=self.T,
                                    linearization=self.linearization, epsilon=self.epsilon)
            if self.problem == "burgers2d":
                return make_problem(self.problem, nu=self.nu, T=self.T, ic_form=self.ic_form,
                                    epsilon=self.epsilon)
            if self.problem == "wave3layer":
                return make_problem(self.problem, sigma=self.sigma, T=self.T,
                                    extension=self.extension, epsilon=self.epsilon)
            if self.problem == "wave_homogeneous":
                return make_problem(self.problem, sigma=self.sigma, T=self.T, epsilon=self.epsilon)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        raise ConfigError(f"unknown problem {self.problem!r}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            modes=tuple(self.modes), t_samples=self.t_samples, network=self.network,
            hidden=self.hidden, depth=self.depth, activation=self.activation,
            orthogonal=self.orthogonal, ic_oversample=self.ic_oversample,
            collocation_oversample=self.collocation_oversample,
            input_scale=_scale_value(self.input_scale), output_scale=_scale_value(self.output_scale),
            epsilon=self.epsilon,
        )

    def eval_axes(self, spec: ProblemSpec) -> list:
        """Uniform evaluation points over the region of interest.

        Periodic axes drop the right endpoint, which duplicates the left one.
        """
        pts = list(self.eval_points) * (spec.dim if len(self.eval_points) == 1 else 1)
        axes = []
        for (lo, hi), n, kind in zip(spec.roi, pts, spec.basis_kinds):
            if kind == "fourier":
                axes.append(lo + (hi - lo) * np.arange(n) / n)
            else:
                axes.append(np.linspace(lo, hi, int(n)))
        return axes

    @property
    def h(self) -> float:
        return self.T / (self.t_samples - 1)

    # -- serialization

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for section, names in SECTIONS.items():
            cp[section] = {n: _format(getattr(self, n)) for n in names}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def config_hash(self) -> str:
        """Short digest of every field except ``seed`` and ``out_dir``."""
        d = dataclasses.asdict(self)
        d.pop("seed")
        d.pop("out_dir")
        text = ";".join(f"{k}={_format(v)}" for k, v in sorted(d.items()))
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


SECTIONS = {
    "problem": ["problem", "T", "sigma", "nu", "epsilon", "ic_form", "linearization",
                "extension", "extrapolate"],
    "model": ["modes", "t_samples", "network", "hidden", "depth", "activation", "orthogonal",
              "ic_oversample", "input_scale", "output_scale"],
    "train": ["steps", "lr", "seed", "collocation", "collocation_oversample", "random_points",
              "metric_every"],
    "reference": ["ref_modes", "ref_dt", "eval_points"],
    "output": ["out_dir", "precision"],
}
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _scale_value(text):
    try:
        return float(text)
    except ValueError:
        return text


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(int(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, text: str):
    kind = _TYPES[name]
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "tuple":
            return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def from_ini(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse INI text on top of ``base`` (or the preset named in [problem])."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    values = {}
    scale = "desk"
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp[section].items():
            if section == "problem" and key == "preset":
                scale = raw.strip()
                continue
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _parse(key, raw)
    if base is None:
        name = values.get("problem", "sinegordon")
        base = preset(name, scale) if name in PRESETS else RunConfig()
    return dataclasses.replace(base, **values)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return from_ini(fh.read())


# ---------------------------------------------------------------- presets

PRESETS = {
    "sinegordon": {
        "desk": dict(problem="sinegordon", T=3.0, sigma=0.1, epsilon=0.1, modes=(64,),
                     t_samples=65, network="mlp", hidden=256, depth=2, activation="relu",
                     ic_oversample=8, collocation_oversample=2, input_scale="state_rms",
                     output_scale="1.0", steps=300, lr=1e-2, ref_modes=(256,),
                     ref_dt=3.0 / 3072, eval_points=(65,), out_dir="runs/sinegordon"),
        "full": dict(problem="sinegordon", T=3.0, sigma=0.1, epsilon=0.1, modes=(201,),
                      t_samples=201, network="mlp", hidden=256, depth=2, activation="relu",
                      ic_oversample=8, collocation_oversample=2, steps=1000, lr=1e-2,
                      ref_modes=(400,), ref_dt=0.001, eval_points=(201,),
                      out_dir="runs/sinegordon-full"),
        "tiny": dict(problem="sinegordon", T=0.5, modes=(8,), t_samples=6, hidden=16,
                     ic_oversample=8, collocation_oversample=2, steps=5, ref_modes=(32,),
                     ref_dt=0.01, eval_points=(17,), out_dir="runs/sinegordon-tiny"),
    },
    "burgers2d": {
        "desk": dict(problem="burgers2d", T=0.5, nu=0.05, epsilon=0.1, modes=(48, 48),
                     t_samples=51, network="dimwise", depth=2, activation="tanh",
                     ic_oversample=1, collocation_oversample=1, input_scale="state_rms",
                     output_scale="1.0", steps=200, lr=1e-2, ref_modes=(128, 128),
                     ref_dt=0.001, eval_points=(48,), out_dir="runs/burgers2d"),
        "full": dict(problem="burgers2d", T=1.0, nu=0.01, epsilon=0.1, modes=(201, 201),
                      t_samples=201, network="dimwise", depth=2, activation="tanh",
                      ic_oversample=1, collocation_oversample=1, steps=200, lr=1e-2,
                      ref_modes=(200, 200), ref_dt=0.001, eval_points=(200,),
                      out_dir="runs/burgers2d-full"),
        "tiny": dict(problem="burgers2d", T=0.1, nu=0.05, modes=(8, 8), t_samples=6,
                     network="dimwise", activation="tanh", ic_oversample=1,
                     collocation_oversample=1, steps=5, ref_modes=(16, 16), ref_dt=0.005,
                     eval_points=(8,), out_dir="runs/burgers2d-tiny"),
    },
    "wave3layer": {
        "desk": dict(problem="wave3layer", T=2.0, sigma=0.1, epsilon=1.0, extension=2.0,
                     modes=(64, 64), t_samples=81, network="dimwise", depth=2,
                     activation="tanh", ic_oversample=1, collocation_oversample=1,
                     input_scale="state_rms", output_scale="multiplier_rms", steps=500,
                     lr=1e-2, ref_modes=(256, 256), ref_dt=0.0025, eval_points=(41,),
                     out_dir="runs/wave3layer"),
        "full": dict(problem="wave3layer", T=2.0, sigma=0.1, epsilon=1.0, extension=2.0,
                      modes=(201, 201), t_samples=201, network="dimwise", depth=2,
                      activation="tanh", ic_oversample=1, collocation_oversample=1,
                      output_scale="multiplier_rms", steps=2000, lr=1e-2,
                      ref_modes=(400, 400), ref_dt=0.001, eval_points=(101,),
                      out_dir="runs/wave3layer-full"),
        "tiny": dict(problem="wave3layer", T=0.2, sigma=0.5, epsilon=1.0, modes=(8, 8),
                     t_samples=6, network="dimwise", activation="tanh", ic_oversample=1,
                     collocation_oversample=1, output_scale="multiplier_rms", steps=5,
                     ref_modes=(16, 16), ref_dt=0.01, eval_points=(9,),
                     out_dir="runs/wave3layer-tiny"),
    },
}


def preset(problem: str, scale: str = "desk") -> RunConfig:
    """Named preset; ``scale`` is ``desk``, ``full`` (expensive) or ``tiny``."""
    if problem not in PRESETS:
        raise ConfigError(f"unknown preset {problem!r}; available: {', '.join(sorted(PRESETS))}")
    if scale not in PRESETS[problem]:
        raise ConfigError(f"unknown scale {scale!r}; available: {', '.join(PRESETS[problem])}")
    return RunConfig(**PRESETS[problem][scale])
