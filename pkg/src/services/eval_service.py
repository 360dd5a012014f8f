"""Evaluation: image metrics, regression and agreement, histogram features, logistic classification."""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_expit
from scipy.stats import linregress
from skimage.metrics import normalized_root_mse, peak_signal_noise_ratio, structural_similarity
from sklearn.metrics import roc_auc_score, roc_curve

from src.models.config_models import EvalConfig, MaskPolicy
from src.models.domain_models import CohortRecord, HistogramFeatures, LesionLabel, ParameterMaps
from src.models.report_models import LogisticFit, MetricReport, RegressionStats, RocResult
from src.utils.errors import (
    InvalidInputError,
    MetricUndefinedError,
    RegressionUndefinedError,
    ShapeError,
    UndefinedFeatureError,
)

logger = logging.getLogger(__name__)

SSIM_SIGMA = 1.5  # gaussian window, truncated to 11×11
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LOGISTIC_L2 = 1e-6
LOGISTIC_TOL = 1e-8
LOGISTIC_MAX_ITER = 100


# ============================================================================
# Image metrics
# ============================================================================


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float) -> np.ndarray:
    """Local SSIM map with gaussian 11×11 weighting and population covariances."""
    if data_range <= 0:
        raise MetricUndefinedError("SSIM needs a positive data range")
    _, full = structural_similarity(
        np.asarray(a, dtype=np.float64),
        np.asarray(b, dtype=np.float64),
        data_range=data_range,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
        full=True,
    )
    return full


def ssim(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    """Mean local SSIM; symmetric in (a, b) for a shared data range."""
    return float(np.mean(ssim_map(a, b, data_range)))


def policy_mask(
    ref: np.ndarray,
    policy: MaskPolicy,
    window: Optional[Tuple[float, float]] = None,
    roi: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Boolean mask of the entries a policy scores."""
    if policy == MaskPolicy.FULL:
        return np.ones(ref.shape, dtype=bool)
    if policy == MaskPolicy.DISPLAY_RANGE:
        if window is None:
            raise InvalidInputError("display-range policy needs a value window")
        lo, hi = window
        return (ref >= lo) & (ref <= hi)
    if roi is None:
        raise InvalidInputError("roi policy needs an ROI mask")
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != ref.shape:
        raise ShapeError(f"ROI {roi.shape} does not match map {ref.shape}")
    return roi


def image_metrics(
    pred: np.ndarray,
    ref: np.ndarray,
    policy: MaskPolicy = MaskPolicy.FULL,
    window: Optional[Tuple[float, float]] = None,
    roi: Optional[np.ndarray] = None,
) -> MetricReport:
    """
    MAE, SSIM, PSNR and NRMSE of ``pred`` against ``ref`` over the policy mask.

    The data range L is max(ref) - min(ref) over the mask. SSIM is the mean of
    the local SSIM map over the mask; PSNR is +inf when the masked entries agree.

    Raises:
        ShapeError: pred and ref differ in shape
        MetricUndefinedError: degenerate reference range or empty mask
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ShapeError(f"Prediction {pred.shape} and reference {ref.shape} differ")
    mask = policy_mask(ref, policy, window, roi)
    if not mask.any():
        raise MetricUndefinedError(f"{policy.value} mask selects no entries")

    p, r = pred[mask], ref[mask]
    data_range = float(r.max() - r.min())
    if data_range <= 0:
        raise MetricUndefinedError("Reference has a degenerate value range")
    if not np.any(r):
        raise MetricUndefinedError("Reference norm is zero")

    mae = float(np.mean(np.abs(p - r)))
    mse = float(np.mean((p - r) ** 2))
    psnr = float("inf") if mse == 0 else float(peak_signal_noise_ratio(r, p, data_range=data_range))
    nrmse = float(normalized_root_mse(r, p, normalization="euclidean"))
    ssim_value = float(np.mean(ssim_map(ref, pred, data_range)[mask]))
    return MetricReport(
        mae=mae,
        ssim=float(np.clip(ssim_value, -1.0, 1.0)),
        psnr=psnr,
        nrmse=nrmse,
        mask_policy=policy,
    )


def map_metrics(
    pred: ParameterMaps, ref: ParameterMaps, cfg: EvalConfig
) -> Tuple[MetricReport, MetricReport]:
    """T2 and ADC metrics under the configured mask policy."""
    roi = ref.lesion_mask if cfg.mask_policy == MaskPolicy.ROI else None
    t2 = image_metrics(pred.t2, ref.t2, cfg.mask_policy, cfg.t2_window, roi)
    adc = image_metrics(pred.adc, ref.adc, cfg.mask_policy, cfg.adc_window, roi)
    return t2, adc


# ============================================================================
# Regression and Bland-Altman agreement
# ============================================================================


def regression_stats(x: Sequence[float], y: Sequence[float]) -> RegressionStats:
    """
    OLS of y on x plus Bland-Altman agreement of y against x.

    Limits of agreement are bias ± 1.96 times the population SD of y - x.

    Raises:
        InvalidInputError: fewer than 3 pairs or unequal lengths
        RegressionUndefinedError: x has zero variance
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InvalidInputError(f"Paired samples differ in length: {x.size} vs {y.size}")
    if x.size < 3:
        raise InvalidInputError("Regression needs at least 3 pairs")
    if np.var(x) == 0:
        raise RegressionUndefinedError("x has zero variance")

    fit = linregress(x, y)
    residual = y - (fit.slope * x + fit.intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(residual**2)) / ss_tot if ss_tot > 0 else 1.0
    diff = y - x
    bias = float(np.mean(diff))
    spread = 1.96 * float(np.std(diff))
    return RegressionStats(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        r2=r2,
        bias=bias,
        loa_low=bias - spread,
        loa_high=bias + spread,
        n=int(x.size),
    )


# ============================================================================
# Histogram features and cohorts
# ============================================================================


def _values(name: str, values: Sequence[float]) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise InvalidInputError(f"{name} is empty")
    return arr


def histogram_features(
    lesion_t2: Sequence[float], lesion_adc: Sequence[float], mirror_adc: Sequence[float]
) -> HistogramFeatures:
    """
    T2 p75, ADC p90, ADC median and ΔADC of a lesion ROI.

    ΔADC = (median(mirror) - median(lesion)) / median(mirror). Percentiles
    interpolate linearly between order statistics.

    Raises:
        InvalidInputError: an empty value list
        UndefinedFeatureError: the mirror median is zero
    """
    t2 = _values("lesion_t2", lesion_t2)
    adc = _values("lesion_adc", lesion_adc)
    mirror = _values("mirror_adc", mirror_adc)
    mirror_median = float(np.median(mirror))
    if mirror_median == 0:
        raise UndefinedFeatureError("Mirror ROI median ADC is zero")
    adc_median = float(np.median(adc))
    return HistogramFeatures(
        t2_p75=float(np.percentile(t2, 75)),
        adc_p90=float(np.percentile(adc, 90)),
        adc_median=adc_median,
        delta_adc=(mirror_median - adc_median) / mirror_median,
    )


def record_from_maps(subject_id: str, maps: ParameterMaps, reference: ParameterMaps) -> CohortRecord:
    """
    Cohort record from (possibly predicted) ``maps`` using the lesion ROI of ``reference``.

    Raises:
        InvalidInputError: the reference carries no lesion
    """
    if reference.lesion_mask is None or reference.lesion_label is None or not reference.lesion_mask.any():
        raise InvalidInputError(f"Subject {subject_id} has no lesion ROI")
    roi, mirror = reference.lesion_mask, reference.mirror_mask
    features = histogram_features(maps.t2[roi], maps.adc[roi], maps.adc[mirror])
    label = 1 if reference.lesion_label == LesionLabel.ACUTE else 0
    return CohortRecord(subject_id=subject_id, label=label, features=features)


# ============================================================================
# Logistic regression and ROC
# ============================================================================


def _check_classes(labels: np.ndarray) -> None:
    if np.unique(labels).size < 2:
        raise InvalidInputError("Both classes must be present")


def fit_logistic(records: Sequence[CohortRecord]) -> LogisticFit:
    """
    L2-penalized logistic regression by iteratively reweighted least squares.

    Features are z-scored internally; the intercept is not penalized.
    Separable cohorts stop at the iteration cap with ``converged=False``.

    Raises:
        InvalidInputError: empty cohort or a single class
    """
    if not records:
        raise InvalidInputError("Empty cohort")
    X = np.array([r.features.as_vector() for r in records], dtype=np.float64)
    y = np.array([r.label for r in records], dtype=np.float64)
    _check_classes(y)

    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    Z = np.hstack([np.ones((X.shape[0], 1)), (X - mean) / std])
    penalty = np.full(Z.shape[1], LOGISTIC_L2)
    penalty[0] = 0.0

    beta = np.zeros(Z.shape[1])
    converged = False
    iterations = 0
    for iterations in range(1, LOGISTIC_MAX_ITER + 1):
        p = expit(Z @ beta)
        w = p * (1.0 - p)
        hessian = (Z * w[:, None]).T @ Z + np.diag(penalty) + 1e-12 * np.eye(Z.shape[1])
        gradient = Z.T @ (y - p) - penalty * beta
        delta = np.linalg.lstsq(hessian, gradient, rcond=None)[0]
        beta = beta + delta
        if np.max(np.abs(delta)) < LOGISTIC_TOL:
            converged = True
            break

    margin = Z @ beta
    log_lik = float(np.sum(y * log_expit(margin) + (1 - y) * log_expit(-margin)))
    logger.info(
        f"Logistic fit on {len(records)} records: {iterations} iterations, "
        f"converged={converged}, log-likelihood={log_lik:.4f}"
    )
    return LogisticFit(
        weights=beta[1:].tolist(),
        intercept=float(beta[0]),
        feature_mean=mean.tolist(),
        feature_std=std.tolist(),
        iterations=iterations,
        converged=converged,
    )


def predict_proba(fit: LogisticFit, records: Sequence[CohortRecord]) -> np.ndarray:
    """Positive-class probabilities under the fit's stored standardization."""
    X = np.array([r.features.as_vector() for r in records], dtype=np.float64)
    Z = (X - np.asarray(fit.feature_mean)) / np.asarray(fit.feature_std)
    return expit(Z @ np.asarray(fit.weights) + fit.intercept)


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> RocResult:
    """
    AUC (Mann-Whitney, ties count one half) with the ROC curve at every threshold.

    Raises:
        InvalidInputError: length mismatch or a single class
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise InvalidInputError("Scores and labels differ in length")
    _check_classes(labels)
    fpr, tpr, thresholds = roc_curve(labels, scores, drop_intermediate=False)
    return RocResult(
        auc=float(roc_auc_score(labels, scores)),
        fpr=fpr,
        tpr=tpr,
        thresholds=thresholds,
    )


def classify_cohort(records: Sequence[CohortRecord]) -> Tuple[LogisticFit, np.ndarray, RocResult]:
    """histogram features -> logistic fit -> ROC on the training cohort."""
    fit = fit_logistic(records)
    scores = predict_proba(fit, records)
    roc = roc_auc(scores, [r.label for r in records])
    logger.info(f"Cohort of {len(records)}: AUC {roc.auc:.4f}")
    return fit, scores, roc


def cohort_table(records: Sequence[CohortRecord], scores: Optional[np.ndarray] = None) -> List[dict]:
    rows = [r.as_row() for r in records]
    if scores is not None:
        for row, score in zip(rows, scores):
            row["score"] = float(score)
    return rows
