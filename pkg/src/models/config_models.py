"""Experiment configuration sections.

Each section maps to one ``[section]`` of the experiment config text and to
one module's tunables. Every key has a default, unknown keys are rejected.
"""
from enum import Enum
from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.utils.errors import ShapeError


class PerturbationMode(str, Enum):
    """How WDFP perturbs one image."""

    SINGLE = "single"  # one plane wave at a uniformly drawn frequency
    FULL = "full"  # independent sign at every frequency
    GAUSSIAN = "gaussian"  # ablation control: distance-agnostic k-space noise


class TrainMode(str, Enum):
    """Training objective."""

    FPS = "fps"
    SOURCE_ONLY = "source_only"


class MaskPolicy(str, Enum):
    """Which entries enter the image metrics."""

    FULL = "full"
    DISPLAY_RANGE = "display-range"
    ROI = "roi"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True, use_enum_values=False)


class PerturbationConfig(_Section):
    """WDFP perturbation settings."""

    mode: PerturbationMode = Field(PerturbationMode.FULL, description="single, full or gaussian")
    epsilon: float = Field(1.0, ge=0, description="Perturbation scale")
    seed: int = Field(0, ge=0, lt=2**64, description="Base seed for sign and frequency draws")


class DomainShiftConfig(_Section):
    """Synthetic-to-real shift simulator settings."""

    lowfreq_gain: float = Field(1.5, ge=0, description="k-space center amplitude multiplier")
    lowfreq_radius: float = Field(0.1, gt=0, le=1, description="Fraction of Nyquist")
    noise_sigma: float = Field(0.02, ge=0, description="Noise std as a fraction of max magnitude")
    bias_strength: float = Field(0.2, ge=0, lt=1, description="Smooth multiplicative field amplitude")
    seed: int = Field(1, ge=0, lt=2**64)

    def is_identity(self) -> bool:
        return self.lowfreq_gain == 1.0 and self.noise_sigma == 0.0 and self.bias_strength == 0.0


class PhantomConfig(_Section):
    """Phantom generator and dataset sizes."""

    height: int = Field(64, ge=16)
    width: int = Field(64, ge=16)
    n_shapes: int = Field(4, ge=1, description="Head ellipse plus tissue blobs")
    lesion_prob: float = Field(0.5, ge=0, le=1)
    n_train: int = Field(200, ge=0, description="Training pairs per domain")
    n_val: int = Field(50, ge=0, description="Validation pairs per domain")
    seed: int = Field(0, ge=0, lt=2**64)


class NetworkConfig(_Section):
    """HFSNet topology."""

    scales: int = Field(3, ge=1, description="Number of output scales S")
    in_channels: int = Field(2, ge=1)
    base_channels: int = Field(32, ge=2)
    out_channels: int = Field(2, ge=1, description="2 for T2+ADC")
    window_size: int = Field(4, ge=1)
    attn_heads: int = Field(2, ge=1)
    mlp_ratio: int = Field(2, ge=1)
    fas_branches: int = Field(2, ge=1)
    fas_kernels: List[int] = Field(default_factory=lambda: [3, 5])
    fas_groups: int = Field(4, ge=1)
    use_fai: bool = True
    use_fas: bool = True
    use_cfas: bool = True

    @field_validator("fas_kernels")
    @classmethod
    def _odd_kernels(cls, value: List[int]) -> List[int]:
        if any(k < 1 or k % 2 == 0 for k in value):
            raise ValueError("every FAS kernel size must be odd and >= 1")
        return value

    @model_validator(mode="after")
    def _check_channels(self) -> "NetworkConfig":
        if len(self.fas_kernels) != self.fas_branches:
            raise ValueError("fas_kernels needs one entry per FAS branch")
        split = self.fas_branches * self.fas_groups
        for c in self.channel_plan():
            if c % split != 0:
                raise ValueError(f"channel count {c} not divisible by branches*groups = {split}")
            if c % 2 != 0 or c % self.attn_heads != 0:
                raise ValueError(f"channel count {c} must be even and divisible by attn_heads")
        return self

    def channel_plan(self) -> List[int]:
        """Channels per scale: base, 2*base, 4*base, ..."""
        return [self.base_channels * 2**s for s in range(self.scales)]

    def check_input_shape(self, height: int, width: int) -> None:
        """Raise ShapeError unless every stage grid divides into windows."""
        factor = 2 ** (self.scales - 1) * self.window_size
        if height % factor or width % factor:
            raise ShapeError(
                f"Input {height}x{width} must be divisible by 2^(S-1)*window_size = {factor}"
            )


class TrainConfig(_Section):
    """Mean-teacher optimization settings."""

    batch_size: int = Field(4, ge=2, description="Pairs per domain and step (FAS batch statistics need two)")
    total_iterations: int = Field(2000, ge=0)
    lr_start: float = Field(1e-4, gt=0)
    lr_end: float = Field(1e-6, gt=0)
    lambda_freq: float = Field(0.1, ge=0)
    weight_decay: float = Field(0.0, ge=0)
    mode: TrainMode = TrainMode.FPS
    checkpoint_every: int = Field(500, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    scales: int = Field(3, ge=1)
    perturbation: PerturbationConfig = Field(default_factory=PerturbationConfig)

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        if self.lr_start < self.lr_end:
            raise ValueError("lr_start must be >= lr_end")
        return self


class EvalConfig(_Section):
    """Metric masking and display windows."""

    mask_policy: MaskPolicy = MaskPolicy.DISPLAY_RANGE
    t2_window: Tuple[float, float] = (0.0, 0.3)
    adc_window: Tuple[float, float] = (0.0, 3.2e-3)

    @field_validator("t2_window", "adc_window")
    @classmethod
    def _ordered(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if value[0] >= value[1]:
            raise ValueError("window lower bound must be below the upper bound")
        return value


class ExperimentConfig(_Section):
    """Whole-experiment configuration."""

    phantom: PhantomConfig = Field(default_factory=PhantomConfig)
    shift: DomainShiftConfig = Field(default_factory=DomainShiftConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    perturb: PerturbationConfig = Field(default_factory=PerturbationConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    def train_config(self) -> TrainConfig:
        """TrainConfig with the [perturb] section and the network scale count merged in."""
        return self.train.model_copy(
            update={"perturbation": self.perturb, "scales": self.network.scales}
        )
