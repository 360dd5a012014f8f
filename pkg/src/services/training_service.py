"""Mean-teacher training: losses, EMA, the training step and the resumable loop."""
import copy
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from src.clients.checkpoint_client import read_checkpoint, split_prefix, write_checkpoint
from src.clients.fpsd_client import atomic_write_text
from src.models.config_models import NetworkConfig, TrainConfig, TrainMode
from src.models.domain_models import (
    ADC_RANGE,
    M0_RANGE,
    T2_RANGE,
    ComplexImage,
    DistanceMap,
    ParameterMaps,
    SamplePair,
)
from src.models.report_models import LOSS_LOG_COLUMNS, LossReport
from src.network.hfsnet import HFSNet, build_hfsnet, state_to_numpy
from src.services.kspace_service import WDFPPerturber
from src.utils.errors import DivergenceError, InvalidInputError, ShapeError, StateError

logger = logging.getLogger(__name__)

T2_SCALE = 1.0  # s
ADC_SCALE = 3.5e-3  # mm^2/s
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


# ============================================================================
# Data normalization
# ============================================================================


def input_scale(img: ComplexImage) -> float:
    """Per-image scale: max modulus of the unperturbed image (1 for an all-zero image)."""
    peak = float(np.max(np.abs(img.to_complex())))
    return peak if peak > 0 else 1.0


def to_network_input(img: ComplexImage, scale: Optional[float] = None) -> np.ndarray:
    """2×H×W planes divided by ``scale`` (defaults to the image's own max modulus)."""
    scale = input_scale(img) if scale is None else scale
    return np.stack([img.re, img.im]) / scale


def to_network_target(maps: ParameterMaps) -> np.ndarray:
    """2×H×W normalized targets: t2/1 s clipped to [0, 2.5], adc/3.5e-3 clipped to [0, 1]."""
    return np.stack(
        [np.clip(maps.t2 / T2_SCALE, 0.0, 2.5), np.clip(maps.adc / ADC_SCALE, 0.0, 1.0)]
    )


def from_network_output(out: np.ndarray) -> ParameterMaps:
    """
    Invert the target normalization, clipping into the map envelopes.

    A third channel, when present, is read as m0; otherwise m0 is zero.
    """
    m0 = out[2] if out.shape[0] > 2 else np.zeros_like(out[0])
    return ParameterMaps(
        t2=np.clip(out[0] * T2_SCALE, *T2_RANGE),
        adc=np.clip(out[1] * ADC_SCALE, *ADC_RANGE),
        m0=np.clip(m0, *M0_RANGE),
    )


def _batch_tensor(arrays: Sequence[np.ndarray], dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(np.stack(arrays)).to(dtype)


def predict_maps(
    model: nn.Module, pairs: Sequence[SamplePair], batch_size: int = 8
) -> List[ParameterMaps]:
    """Run ``model`` in inference mode and return maps in physical units."""
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    predictions: List[ParameterMaps] = []
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            x = _batch_tensor([to_network_input(p.input) for p in chunk], dtype)
            out = model(x)[0].cpu().double().numpy()
            predictions.extend(from_network_output(o) for o in out)
    model.train(was_training)
    return predictions


# ============================================================================
# Losses and schedules
# ============================================================================


def sf_loss(x: torch.Tensor, y: torch.Tensor, lambda_freq: float = 0.1) -> torch.Tensor:
    """
    Spatial-frequency loss: mean |x - y| plus lambda times the mean modulus of
    the unitary per-channel 2-D spectrum difference.
    """
    if x.shape != y.shape:
        raise ShapeError(f"sf_loss shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    diff = x - y
    spatial = diff.abs().mean()
    spectral = torch.fft.fft2(diff, norm="ortho").abs().mean()
    return spatial + lambda_freq * spectral


def lambda_real(iteration: int, total: int) -> float:
    """Ramp exp(-5 (1 - iteration/total)^2)."""
    if total < 1 or not 0 <= iteration <= total:
        raise InvalidInputError(f"lambda_real needs 0 <= iteration <= total, total >= 1 (got {iteration}, {total})")
    p = 1.0 - iteration / total
    return math.exp(-5.0 * p * p)


def learning_rate(iteration: int, total: int, lr_start: float, lr_end: float) -> float:
    """Cosine decay from lr_start at iteration 0 to lr_end at ``total``."""
    if total < 1:
        return lr_start
    progress = min(max(iteration / total, 0.0), 1.0)
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * progress))


def pool_to(x: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """Average-pool ``x`` down to the grid of ``like``."""
    if x.shape[-2:] == like.shape[-2:]:
        return x
    return F.adaptive_avg_pool2d(x, like.shape[-2:])


def total_loss(
    student_syn: List[torch.Tensor],
    student_real: List[torch.Tensor],
    teacher_syn: List[torch.Tensor],
    teacher_real: List[torch.Tensor],
    targets: torch.Tensor,
    iteration: int,
    total_iterations: int,
    lambda_freq: float = 0.1,
) -> Tuple[torch.Tensor, LossReport]:
    """
    Mean-teacher objective.

    Teacher outputs are treated as constants. Scale lists run full
    resolution first; the supervised and unsupervised terms use scale 1.

    Returns:
        (differentiable total, per-term report)
    """
    lengths = {len(student_syn), len(student_real), len(teacher_syn), len(teacher_real)}
    if len(lengths) != 1:
        raise ShapeError(f"Scale counts differ between outputs: {sorted(lengths)}")
    teacher_syn = [t.detach() for t in teacher_syn]
    teacher_real = [t.detach() for t in teacher_real]

    l_con = sum(
        sf_loss(r, pool_to(r_t, r), lambda_freq) + sf_loss(s, pool_to(s_t, s), lambda_freq)
        for r, r_t, s, s_t in zip(student_real, teacher_real, student_syn, teacher_syn)
    )
    l_sup = sf_loss(student_syn[0], targets, lambda_freq)
    l_sup_teacher = sf_loss(teacher_syn[0], targets, lambda_freq)
    l_un_syn = sf_loss(student_syn[0], teacher_syn[0], lambda_freq)
    l_un_real = sf_loss(student_real[0], teacher_real[0], lambda_freq)
    lam = lambda_real(iteration, total_iterations)
    total = l_con + l_sup + l_sup_teacher + l_un_syn + lam * l_un_real

    report = LossReport(
        l_con=float(l_con),
        l_sup=float(l_sup),
        l_sup_teacher=float(l_sup_teacher),
        l_un_syn=float(l_un_syn),
        l_un_real=float(l_un_real),
        lambda_real=lam,
        total=float(total),
    )
    return total, report


def _check_finite(report: LossReport) -> None:
    for term in ("l_con", "l_sup", "l_sup_teacher", "l_un_syn", "l_un_real", "total"):
        value = getattr(report, term)
        if not math.isfinite(value):
            raise DivergenceError(term, value)


# ============================================================================
# Teacher/student state
# ============================================================================


class TeacherStudentState:
    """Student and teacher networks, the student's optimizer and the iteration counter."""

    def __init__(
        self,
        student: HFSNet,
        teacher: HFSNet,
        optimizer: torch.optim.Optimizer,
        iteration: int = 0,
        rng_seed: int = 0,
        mode: TrainMode = TrainMode.FPS,
    ):
        self.student = student
        self.teacher = teacher
        self.optimizer = optimizer
        self.iteration = iteration
        self.rng_seed = rng_seed
        self.mode = mode
        self.check_manifest()
        for p in self.teacher.parameters():
            p.requires_grad_(False)
        for m in self.teacher.modules():
            if isinstance(m, nn.modules.batchnorm._BatchNorm):
                m.momentum = 0.0  # running stats change only through the EMA

    @classmethod
    def create(
        cls, net_cfg: NetworkConfig, train_cfg: TrainConfig, dtype: torch.dtype = torch.float32
    ) -> "TeacherStudentState":
        """Fresh state: identical student and teacher initialized from ``train_cfg.seed``."""
        student = build_hfsnet(net_cfg, seed=train_cfg.seed, dtype=dtype)
        teacher = copy.deepcopy(student)
        optimizer = torch.optim.AdamW(
            student.parameters(),
            lr=train_cfg.lr_start,
            betas=ADAM_BETAS,
            eps=ADAM_EPS,
            weight_decay=train_cfg.weight_decay,
        )
        return cls(student, teacher, optimizer, 0, train_cfg.seed, train_cfg.mode)

    def check_manifest(self) -> None:
        s_state, t_state = self.student.state_dict(), self.teacher.state_dict()
        if list(s_state) != list(t_state):
            raise StateError("Student and teacher tensor manifests differ")
        for name in s_state:
            if s_state[name].shape != t_state[name].shape:
                raise StateError(f"Tensor '{name}' differs in shape between student and teacher")

    def eval_model(self) -> HFSNet:
        """Network used for inference: the teacher, or the student for source-only runs."""
        return self.student if self.mode == TrainMode.SOURCE_ONLY else self.teacher

    def to_tensors(self) -> Dict[str, np.ndarray]:
        """Flat bundle of student, teacher and optimizer tensors."""
        tensors: Dict[str, np.ndarray] = {}
        for prefix, net in (("student", self.student), ("teacher", self.teacher)):
            for name, arr in state_to_numpy(net).items():
                tensors[f"{prefix}.{name}"] = arr if arr.dtype.kind == "f" else arr.astype(np.float64)
        for name, param in self.student.named_parameters():
            moments = self.optimizer.state.get(param)
            if not moments:
                continue
            tensors[f"optim.{name}.step"] = np.asarray(float(moments["step"]), dtype=np.float64)
            tensors[f"optim.{name}.exp_avg"] = moments["exp_avg"].detach().cpu().numpy().copy()
            tensors[f"optim.{name}.exp_avg_sq"] = moments["exp_avg_sq"].detach().cpu().numpy().copy()
        return tensors

    def load_tensors(self, tensors: Dict[str, np.ndarray]) -> None:
        """Restore from a bundle written by ``to_tensors``."""
        for prefix, net in (("student", self.student), ("teacher", self.teacher)):
            saved = split_prefix(tensors, prefix)
            current = net.state_dict()
            if list(saved) != list(current):
                raise StateError(f"Checkpoint {prefix} manifest does not match the network")
            restored = {
                name: torch.from_numpy(np.asarray(saved[name])).to(current[name].dtype)
                for name in current
            }
            net.load_state_dict(restored)

        optim = split_prefix(tensors, "optim")
        for name, param in self.student.named_parameters():
            if f"{name}.step" not in optim:
                continue
            self.optimizer.state[param] = {
                "step": torch.tensor(float(optim[f"{name}.step"])),
                "exp_avg": torch.from_numpy(optim[f"{name}.exp_avg"]).to(param.dtype).clone(),
                "exp_avg_sq": torch.from_numpy(optim[f"{name}.exp_avg_sq"]).to(param.dtype).clone(),
            }


def ema_update(teacher: nn.Module, student: nn.Module, iteration: int) -> float:
    """
    theta_t <- alpha*theta_t + (1 - alpha)*theta_s with alpha = 1 - 1/(iteration + 1).

    Covers parameters and floating buffers; integer buffers are copied.

    Returns:
        alpha
    """
    if iteration < 0:
        raise InvalidInputError("EMA iteration must be >= 0")
    t_state, s_state = teacher.state_dict(), student.state_dict()
    if list(t_state) != list(s_state):
        raise StateError("Teacher and student tensor manifests differ")
    alpha = 1.0 - 1.0 / (iteration + 1)
    with torch.no_grad():
        for name, t in t_state.items():
            s = s_state[name]
            if t.shape != s.shape:
                raise StateError(f"Tensor '{name}' differs in shape between teacher and student")
            if t.is_floating_point():
                t.mul_(alpha).add_(s, alpha=1.0 - alpha)
            else:
                t.copy_(s)
    return alpha


# ============================================================================
# Training step
# ============================================================================


def _forward_pair(
    net: nn.Module,
    clean: Sequence[ComplexImage],
    images: Sequence[ComplexImage],
    dtype: torch.dtype,
) -> List[torch.Tensor]:
    x = _batch_tensor([to_network_input(img, input_scale(ref)) for img, ref in zip(images, clean)], dtype)
    return net(x)


def train_step(
    state: TeacherStudentState,
    labeled: Sequence[SamplePair],
    unlabeled: Sequence[SamplePair],
    perturber: Optional[WDFPPerturber],
    cfg: TrainConfig,
    lr: Optional[float] = None,
) -> LossReport:
    """
    One mean-teacher step.

    Perturbs both batches, runs the student on clean and the teacher on
    perturbed inputs, takes an AdamW step on the student and updates the
    teacher by EMA. Source-only mode trains the student on the supervised
    term alone.

    Args:
        state: Mutable training state
        labeled: Synthetic pairs with targets
        unlabeled: Real-domain pairs (targets unused)
        perturber: WDFP perturber; required in fps mode
        cfg: Training settings
        lr: Learning-rate override (defaults to the cosine schedule)

    Returns:
        LossReport for this step
    """
    if not labeled or (cfg.mode == TrainMode.FPS and not unlabeled):
        raise InvalidInputError("train_step needs non-empty batches")
    it = state.iteration
    dtype = next(state.student.parameters()).dtype
    total_its = max(cfg.total_iterations, it + 1)
    lr = learning_rate(it, total_its, cfg.lr_start, cfg.lr_end) if lr is None else lr

    syn = [p.input for p in labeled]
    targets = _batch_tensor([to_network_target(p.target) for p in labeled], dtype)
    state.student.train()

    if cfg.mode == TrainMode.SOURCE_ONLY:
        student_syn = _forward_pair(state.student, syn, syn, dtype)
        loss = sf_loss(student_syn[0], targets, cfg.lambda_freq)
        report = LossReport(
            l_con=0.0, l_sup=float(loss), l_sup_teacher=0.0, l_un_syn=0.0, l_un_real=0.0,
            lambda_real=lambda_real(it, total_its), total=float(loss),
        )
    else:
        if perturber is None:
            raise InvalidInputError("fps mode needs a WDFP perturber")
        real = [p.input for p in unlabeled]
        syn_p = [perturber.perturb(img, it, k) for k, img in enumerate(syn)]
        real_p = [perturber.perturb(img, it, len(syn) + k) for k, img in enumerate(real)]

        student_syn = _forward_pair(state.student, syn, syn, dtype)
        student_real = _forward_pair(state.student, real, real, dtype)
        state.teacher.train()
        with torch.no_grad():
            teacher_syn = _forward_pair(state.teacher, syn, syn_p, dtype)
            teacher_real = _forward_pair(state.teacher, real, real_p, dtype)
        loss, report = total_loss(
            student_syn, student_real, teacher_syn, teacher_real, targets, it, total_its, cfg.lambda_freq
        )

    _check_finite(report)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()

    if cfg.mode == TrainMode.FPS:
        ema_update(state.teacher, state.student, it)
    state.iteration += 1

    report = report.model_copy(update={"lr": lr, "iteration": it})
    logger.debug(
        f"step {it}: total={report.total:.6g} sup={report.l_sup:.6g} con={report.l_con:.6g} lr={lr:.3g}"
    )
    return report


# ============================================================================
# Training loop
# ============================================================================


def batch_indices(n: int, batch_size: int, seed: int, stream: int, iteration: int) -> List[int]:
    """Indices of one batch drawn from per-epoch permutations seeded by (seed, stream, epoch)."""
    indices = []
    for k in range(iteration * batch_size, (iteration + 1) * batch_size):
        epoch, pos = divmod(k, n)
        perm = np.random.default_rng([seed, stream, epoch]).permutation(n)
        indices.append(int(perm[pos]))
    return indices


def config_hash(train_cfg: TrainConfig, net_cfg: NetworkConfig) -> str:
    payload = {"train": train_cfg.model_dump(mode="json"), "network": net_cfg.model_dump(mode="json")}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def _format_row(report: LossReport) -> str:
    row = report.as_log_row()
    return "\t".join(str(row[c]) if c == "iteration" else repr(float(row[c])) for c in LOSS_LOG_COLUMNS)


def save_state(state: TeacherStudentState, root: Union[str, Path], cfg_hash: str) -> Path:
    manifest = {"rng_seed": str(state.rng_seed), "config_hash": cfg_hash, "mode": state.mode.value}
    return write_checkpoint(root, state.iteration, manifest, state.to_tensors())


def load_state(
    path: Union[str, Path],
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
    dtype: torch.dtype = torch.float32,
    expected_hash: Optional[str] = None,
) -> TeacherStudentState:
    """Rebuild a TeacherStudentState from a checkpoint."""
    manifest, tensors = read_checkpoint(path)
    if expected_hash is not None and manifest.get("config_hash") != expected_hash:
        raise StateError("Checkpoint config hash does not match the current configuration")
    state = TeacherStudentState.create(net_cfg, train_cfg, dtype)
    state.load_tensors(tensors)
    state.iteration = int(manifest["iteration"])
    state.rng_seed = int(manifest.get("rng_seed", train_cfg.seed))
    state.mode = TrainMode(manifest.get("mode", train_cfg.mode.value))
    return state


def train_loop(
    synthetic: Sequence[SamplePair],
    real: Sequence[SamplePair],
    dmap: Optional[DistanceMap],
    cfg: TrainConfig,
    net_cfg: NetworkConfig,
    checkpoint_dir: Union[str, Path],
    resume: Optional[Union[str, Path]] = None,
    stop_at: Optional[int] = None,
    dtype: torch.dtype = torch.float32,
) -> Tuple[TeacherStudentState, List[LossReport]]:
    """
    Iterate train_step over shuffled batches with checkpoints and a TSV loss log.

    Args:
        synthetic: Labeled pairs
        real: Unlabeled pairs
        dmap: Distance map for WDFP; needed in fps mode when an iteration runs
        cfg: Training settings
        net_cfg: Network topology
        checkpoint_dir: Root for checkpoints and ``loss_log.tsv``
        resume: Checkpoint to continue from
        stop_at: Stop after this iteration count (defaults to total_iterations)
        dtype: Parameter dtype

    Returns:
        (final state, loss reports of the iterations run in this call)
    """
    if not synthetic or (cfg.mode == TrainMode.FPS and not real):
        raise InvalidInputError("train_loop needs non-empty datasets")
    net_cfg.check_input_shape(*synthetic[0].input.shape)
    cfg_hash = config_hash(cfg, net_cfg)
    root = Path(checkpoint_dir)
    root.mkdir(parents=True, exist_ok=True)
    log_path = root / "loss_log.tsv"

    if resume is not None:
        state = load_state(resume, net_cfg, cfg, dtype, expected_hash=cfg_hash)
        logger.info(f"Resuming from iteration {state.iteration}")
        kept = [
            line
            for line in (log_path.read_text(encoding="utf-8").splitlines()[1:] if log_path.exists() else [])
            if line and int(line.split("\t")[0]) < state.iteration
        ]
    else:
        state = TeacherStudentState.create(net_cfg, cfg, dtype)
        kept = []
    atomic_write_text(log_path, "\n".join(["\t".join(LOSS_LOG_COLUMNS)] + kept) + "\n")

    end = cfg.total_iterations if stop_at is None else min(stop_at, cfg.total_iterations)
    perturber = None
    if cfg.mode == TrainMode.FPS and state.iteration < end:
        if dmap is None:
            raise InvalidInputError("fps mode needs a distance map")
        perturber = WDFPPerturber(dmap, cfg.perturbation)

    reports: List[LossReport] = []
    with log_path.open("a", encoding="utf-8") as log:
        while state.iteration < end:
            it = state.iteration
            labeled = [synthetic[i] for i in batch_indices(len(synthetic), cfg.batch_size, cfg.seed, 0, it)]
            unlabeled = []
            if real:
                unlabeled = [real[i] for i in batch_indices(len(real), cfg.batch_size, cfg.seed, 1, it)]
            report = train_step(state, labeled, unlabeled, perturber, cfg)
            reports.append(report)
            log.write(_format_row(report) + "\n")
            log.flush()
            if state.iteration % cfg.checkpoint_every == 0 and state.iteration < end:
                save_state(state, root, cfg_hash)
                logger.info(
                    f"Iteration {state.iteration}/{cfg.total_iterations}: total={report.total:.5g} "
                    f"sup={report.l_sup:.5g}"
                )

    save_state(state, root, cfg_hash)
    logger.info(f"Training stopped at iteration {state.iteration} ({len(reports)} steps this run)")
    return state, reports
