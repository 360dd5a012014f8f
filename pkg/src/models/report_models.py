"""Result models emitted by training, evaluation and gradient checks."""
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.models.config_models import MaskPolicy


class MetricReport(BaseModel):
    """Image-quality metrics for one predicted map."""

    mae: float = Field(..., ge=0)
    ssim: float = Field(..., ge=-1, le=1)
    psnr: float = Field(..., description="+inf when prediction equals reference")
    nrmse: float = Field(..., ge=0)
    mask_policy: MaskPolicy = MaskPolicy.FULL


class RegressionStats(BaseModel):
    """OLS fit of y on x plus Bland-Altman agreement of y against x."""

    slope: float
    intercept: float
    r2: float
    bias: float
    loa_low: float
    loa_high: float
    n: int = Field(..., ge=3)


class RocResult(BaseModel):
    """AUC with the full ROC curve."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    auc: float = Field(..., ge=0, le=1)
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


class LogisticFit(BaseModel):
    """Penalized logistic regression on z-scored features."""

    weights: List[float]
    intercept: float
    feature_mean: List[float]
    feature_std: List[float]
    iterations: int
    converged: bool


class LossReport(BaseModel):
    """Per-term breakdown of one training step."""

    l_con: float
    l_sup: float
    l_sup_teacher: float
    l_un_syn: float
    l_un_real: float
    lambda_real: float
    total: float
    lr: Optional[float] = None
    iteration: Optional[int] = None

    def as_log_row(self) -> Dict[str, float]:
        """Row of the loss log in its fixed column order."""
        return {
            "iteration": self.iteration,
            "l_con": self.l_con,
            "l_sup": self.l_sup,
            "l_sup_teacher": self.l_sup_teacher,
            "l_un_syn": self.l_un_syn,
            "l_un_real": self.l_un_real,
            "total": self.total,
            "lambda_real": self.lambda_real,
            "lr": self.lr,
        }


LOSS_LOG_COLUMNS = [
    "iteration",
    "l_con",
    "l_sup",
    "l_sup_teacher",
    "l_un_syn",
    "l_un_real",
    "total",
    "lambda_real",
    "lr",
]


class GradientReport(BaseModel):
    """Finite-difference versus autograd comparison."""

    max_rel_error: float
    per_tensor: Dict[str, float]
    entries_checked: int
    step: float

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance
