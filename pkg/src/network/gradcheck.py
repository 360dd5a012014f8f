"""Finite-difference verification of autograd gradients."""
import logging
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn

from src.models.report_models import GradientReport
from src.utils.errors import GradientCheckError

logger = logging.getLogger(__name__)

Outputs = Union[torch.Tensor, Sequence[torch.Tensor]]


def _as_list(out: Outputs):
    if isinstance(out, torch.Tensor):
        return [out]
    return [o for o in out if o is not None]


def default_step(dtype: torch.dtype) -> float:
    return 1e-6 if dtype == torch.float64 else 1e-3


def check_gradients(
    op: Callable[..., Outputs],
    params: Dict[str, torch.Tensor],
    inputs: Sequence[torch.Tensor],
    loss_fn: Optional[Callable[[Outputs], torch.Tensor]] = None,
    max_entries: int = 16,
    seed: int = 0,
    floor: float = 1e-4,
) -> GradientReport:
    """
    Compare analytic gradients with central finite differences.

    Args:
        op: Callable evaluated as ``op(*inputs)``
        params: Named tensors the op depends on (e.g. ``dict(module.named_parameters())``)
        inputs: Input tensors; floating inputs are checked too
        loss_fn: Scalar test loss over the op output; defaults to a seeded
            random projection of every output
        max_entries: Entries sampled per tensor
        seed: Seed for the projection weights and the entry sampling
        floor: Denominator floor of the relative error

    Returns:
        GradientReport with the worst relative error per tensor

    Raises:
        GradientCheckError: An analytic or numeric gradient is not finite
            or a parameter is not a leaf tensor
    """
    inputs = [x.detach().clone().requires_grad_(x.is_floating_point()) for x in inputs]
    tensors: Dict[str, torch.Tensor] = dict(params)
    for name, p in tensors.items():
        if not p.is_leaf:
            raise GradientCheckError(name, "parameter is not a leaf tensor")
    for k, x in enumerate(inputs):
        if x.is_floating_point():
            tensors[f"input{k}"] = x
    if not tensors:
        raise GradientCheckError("<none>", "no tensors to check")

    # plain tensors captured by the op are switched on in place and restored afterwards
    enabled = [p for p in params.values() if not p.requires_grad]
    for p in enabled:
        p.requires_grad_(True)
    try:
        return _compare(op, tensors, inputs, loss_fn, max_entries, seed, floor)
    finally:
        for p in enabled:
            p.requires_grad_(False)


def _compare(
    op: Callable[..., Outputs],
    tensors: Dict[str, torch.Tensor],
    inputs: Sequence[torch.Tensor],
    loss_fn: Optional[Callable[[Outputs], torch.Tensor]],
    max_entries: int,
    seed: int,
    floor: float,
) -> GradientReport:
    dtype = next(iter(tensors.values())).dtype
    step = default_step(dtype)

    if loss_fn is None:
        generator = torch.Generator().manual_seed(seed)
        projections = {}

        def loss_fn(out: Outputs) -> torch.Tensor:
            total = 0.0
            for idx, o in enumerate(_as_list(out)):
                if idx not in projections:
                    projections[idx] = torch.rand(o.shape, generator=generator, dtype=o.dtype) - 0.5
                total = total + (o * projections[idx]).sum()
            return total

    for t in tensors.values():
        if t.grad is not None:
            t.grad = None
    loss = loss_fn(op(*inputs))
    analytic = torch.autograd.grad(loss, list(tensors.values()), allow_unused=True)

    rng = np.random.default_rng(seed)
    per_tensor: Dict[str, float] = {}
    checked = 0
    with torch.no_grad():
        for (name, tensor), grad in zip(tensors.items(), analytic):
            grad = torch.zeros_like(tensor) if grad is None else grad
            if not torch.all(torch.isfinite(grad)):
                raise GradientCheckError(name)
            flat = tensor.view(-1)
            count = min(max_entries, flat.numel())
            indices = rng.choice(flat.numel(), size=count, replace=False)
            worst = 0.0
            for index in indices:
                index = int(index)
                original = flat[index].item()
                flat[index] = original + step
                f_plus = loss_fn(op(*inputs)).item()
                flat[index] = original - step
                f_minus = loss_fn(op(*inputs)).item()
                flat[index] = original
                numeric = (f_plus - f_minus) / (2 * step)
                a = grad.view(-1)[index].item()
                if not np.isfinite(numeric):
                    raise GradientCheckError(name, "non-finite numeric gradient")
                rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, rel)
            per_tensor[name] = worst
            checked += count

    report = GradientReport(
        max_rel_error=max(per_tensor.values()),
        per_tensor=per_tensor,
        entries_checked=checked,
        step=step,
    )
    logger.debug(f"Gradient check: {checked} entries, max rel error {report.max_rel_error:.3e}")
    return report


def check_module_gradients(
    module: nn.Module, inputs: Sequence[torch.Tensor], **kwargs
) -> GradientReport:
    """check_gradients over every trainable parameter of ``module``."""
    params = {name: p for name, p in module.named_parameters() if p.requires_grad}
    return check_gradients(module, params, inputs, **kwargs)
