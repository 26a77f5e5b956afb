"""Flat ``key = value`` run configuration.

``[section]`` lines are allowed for readability but do not namespace keys.
Unknown keys are rejected so typos surface immediately.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .features import DEFAULT_SCALES
from .fusion import FusionParams
from .losses import LossWeights
from .solver import SolverConfig

DEFAULT_CONFIG_TEXT = """\
[hyperparameters]
# loss balance
gamma1 = 1.0
gamma2 = 1.0
lambda1 = 0.8
lambda2 = 0.2
lambda3 = 0.067
# feature-loss weights for the 1/2, 1/4, 1/8 and 1/16 scales
beta1 = 0.2
beta2 = 0.8
beta3 = 0.4
beta4 = 0.0
# normal-depth weight decay and edge-aware smoothness decays
alpha1 = 0.1
alpha2 = 0.5
alpha3 = 0.5
# depth sweep: 192 planes from 425 to 935 scene units; used when depth_from = config
depth_from = camera
depth_min = 425.0
depth_interval = 2.65625
depth_count = 192
# fusion confidence threshold
photo_threshold = 0.6

[solver]
max_iters = 200
step_size = auto
step_decay = 0.5
nd_every = 25
nd_passes = 1
temperature = 0.02
feature_scales = 0.5 0.25 0.125
num_src = 2
seed = 0

[fusion]
geo_pixel_tol = 1.0
geo_depth_tol = 0.01
min_views = 2

[evaluation]
max_dist = 20.0
voxel_size = 0.0
thresholds = 2 4 8
gradcheck_samples = 500
"""


@dataclass(frozen=True)
class Config:
    gamma1: float = 1.0
    gamma2: float = 1.0
    lambda1: float = 0.8
    lambda2: float = 0.2
    lambda3: float = 0.067
    beta1: float = 0.2
    beta2: float = 0.8
    beta3: float = 0.4
    beta4: float = 0.0
    alpha1: float = 0.1
    alpha2: float = 0.5
    alpha3: float = 0.5
    depth_from: str = "camera"
    depth_min: float = 425.0
    depth_interval: float = 2.65625
    depth_count: int = 192
    photo_threshold: float = 0.6
    max_iters: int = 200
    step_size: str = "auto"
    step_decay: float = 0.5
    nd_every: int = 25
    nd_passes: int = 1
    temperature: float = 0.02
    feature_scales: tuple = DEFAULT_SCALES
    num_src: int = 2
    seed: int = 0
    geo_pixel_tol: float = 1.0
    geo_depth_tol: float = 0.01
    min_views: int = 2
    max_dist: float = 20.0
    voxel_size: float = 0.0
    thresholds: tuple = (2.0, 4.0, 8.0)
    gradcheck_samples: int = 500

    def __post_init__(self):
        if self.depth_from not in ("camera", "config"):
            raise ValueError(f"depth_from must be 'camera' or 'config', got {self.depth_from!r}")
        if self.step_size != "auto":
            float(self.step_size)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.gamma1, self.gamma2, self.lambda1, self.lambda2, self.lambda3,
                           self.beta1, self.beta2, self.beta3, self.beta4, self.alpha2, self.alpha3)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            max_iters=self.max_iters,
            step_size=None if self.step_size == "auto" else float(self.step_size),
            step_decay=self.step_decay,
            nd_passes=self.nd_passes,
            nd_every=self.nd_every,
            temperature=self.temperature,
            alpha1=self.alpha1,
            weights=self.loss_weights(),
            feature_scales=tuple(self.feature_scales),
            seed=self.seed,
        )

    def fusion_params(self) -> FusionParams:
        return FusionParams(self.photo_threshold, self.geo_pixel_tol, self.geo_depth_tol, self.min_views)

    def apply_depth_range(self, camera):
        if self.depth_from == "camera":
            return camera
        return camera.with_depth_range(self.depth_min, self.depth_interval, self.depth_count)


def _convert(value: str, default):
    if isinstance(default, tuple):
        return tuple(float(v) for v in value.replace(",", " ").split())
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def parse_config(text: str, base: Config = Config()) -> Config:
    defaults = {f.name: f.default for f in fields(Config)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        try:
            updates[key] = _convert(value, defaults[key])
        except ValueError:
            raise ValueError(f"config line {lineno}: bad value for {key}: {value!r}") from None
    return replace(base, **updates)


def load_config(path=None) -> Config:
    if path is None:
        return Config()
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())
