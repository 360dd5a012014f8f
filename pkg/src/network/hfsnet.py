"""HFSNet: dual CNN / windowed-attention encoders merged by FAI, multi-scale decoder."""
import logging
import math
from typing import Dict, List, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from src.models.config_models import NetworkConfig
from src.network.layers import CFAS, FAI, FAS, AttentionStage
from src.utils.errors import ShapeError

logger = logging.getLogger(__name__)


class ConvUnit(nn.Module):
    """3×3 conv -> BN -> ReLU -> cFAS."""

    def __init__(self, cin: int, cout: int, stride: int = 1, use_cfas: bool = True):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, kernel_size=3, stride=stride, padding=1)
        self.bn = nn.BatchNorm2d(cout)
        self.cfas = CFAS(cout, enabled=use_cfas)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.cfas(F.relu(self.bn(self.conv(x))))


def _fas(channels: int, cfg: NetworkConfig) -> FAS:
    return FAS(channels, cfg.fas_branches, cfg.fas_kernels, cfg.fas_groups, enabled=cfg.use_fas)


class UBlock(nn.Module):
    """Full-resolution block: stem plus a two-level encoder-decoder with skip, ending in FAS."""

    def __init__(self, cin: int, channels: int, cfg: NetworkConfig):
        super().__init__()
        self.stem = ConvUnit(cin, channels, use_cfas=cfg.use_cfas)
        self.down = ConvUnit(channels, channels, stride=2, use_cfas=cfg.use_cfas)
        self.bottom = ConvUnit(channels, channels, use_cfas=cfg.use_cfas)
        self.fuse = ConvUnit(channels, channels, use_cfas=cfg.use_cfas)
        self.fas = _fas(channels, cfg)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skip = self.stem(x)
        low = self.bottom(self.down(skip))
        up = F.interpolate(low, size=skip.shape[-2:], mode="bilinear", align_corners=False)
        return self.fas(self.fuse(up + skip))


class ResBlock(nn.Module):
    """Stride-2 downsampling then two residual conv units, ending in FAS."""

    def __init__(self, cin: int, channels: int, cfg: NetworkConfig):
        super().__init__()
        self.down = ConvUnit(cin, channels, stride=2, use_cfas=cfg.use_cfas)
        self.res1 = ConvUnit(channels, channels, use_cfas=cfg.use_cfas)
        self.res2 = ConvUnit(channels, channels, use_cfas=cfg.use_cfas)
        self.fas = _fas(channels, cfg)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.down(x)
        x = x + self.res1(x)
        x = x + self.res2(x)
        return self.fas(x)


class HFSNet(nn.Module):
    """
    Hierarchical frequency-aware selection network.

    Input is a B×2×H×W tensor (real and imaginary planes). ``forward`` returns
    S output maps, full resolution first, each with ``out_channels`` channels.
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        plan = cfg.channel_plan()

        self.cnn = nn.ModuleList([UBlock(cfg.in_channels, plan[0], cfg)])
        for s in range(1, cfg.scales):
            self.cnn.append(ResBlock(plan[s - 1], plan[s], cfg))

        self.stages: Optional[nn.ModuleList] = None
        if cfg.use_fai:
            self.stages = nn.ModuleList(
                [
                    AttentionStage(
                        dim=plan[s],
                        heads=cfg.attn_heads,
                        window=cfg.window_size,
                        in_channels=cfg.in_channels if s == 0 else None,
                        merge=s < cfg.scales - 1,
                        mlp_ratio=cfg.mlp_ratio,
                    )
                    for s in range(cfg.scales)
                ]
            )
        self.fai = nn.ModuleList(
            [FAI(plan[s], plan[s], enabled=cfg.use_fai) for s in range(cfg.scales)]
        )
        self.lateral = nn.ModuleList(
            [ConvUnit(cfg.in_channels + plan[s], plan[s], use_cfas=cfg.use_cfas) for s in range(cfg.scales)]
        )
        self.up = nn.ModuleList(
            [ConvUnit(plan[s + 1], plan[s], use_cfas=cfg.use_cfas) for s in range(cfg.scales - 1)]
        )
        self.heads = nn.ModuleList(
            [nn.Conv2d(plan[s], cfg.out_channels, kernel_size=1) for s in range(cfg.scales)]
        )

    def forward(self, x0: torch.Tensor) -> List[torch.Tensor]:
        if x0.dim() != 4 or x0.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"HFSNet expects B×{self.cfg.in_channels}×H×W, got {tuple(x0.shape)}")
        self.cfg.check_input_shape(x0.shape[-2], x0.shape[-1])

        features = []
        m = x0
        for s, block in enumerate(self.cnn):
            try:
                m = block(m)
            except ShapeError as e:
                raise ShapeError(f"CNN scale {s + 1}: {e}") from e
            features.append(m)

        merged: List[torch.Tensor] = []
        t: Optional[torch.Tensor] = x0
        for s in range(self.cfg.scales):
            x_s = x0 if s == 0 else F.interpolate(
                x0, size=features[s].shape[-2:], mode="bilinear", align_corners=False
            )
            t_s = None
            if self.stages is not None:
                try:
                    t_s, t = self.stages[s](t)
                except ShapeError as e:
                    raise ShapeError(f"attention scale {s + 1}: {e}") from e
            merged.append(self.fai[s](x_s, features[s], t_s))

        outputs: List[Optional[torch.Tensor]] = [None] * self.cfg.scales
        d = self.lateral[-1](merged[-1])
        outputs[-1] = self.heads[-1](d)
        for s in range(self.cfg.scales - 2, -1, -1):
            up = F.interpolate(d, scale_factor=2, mode="bilinear", align_corners=False)
            d = self.up[s](up) + self.lateral[s](merged[s])
            outputs[s] = self.heads[s](d)
        return outputs


def init_parameters(model: nn.Module, seed: int) -> nn.Module:
    """
    Deterministically (re)initialize every tensor of ``model``.

    Conv and linear weights are fan-in-scaled uniform with zero biases,
    normalization layers start at unit scale and zero shift, and the
    frequency-selection layers start at identity behaviour.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for module in model.modules():
            if isinstance(module, (nn.Conv2d, nn.Linear)):
                nn.init.kaiming_uniform_(module.weight, a=math.sqrt(5))
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, (nn.BatchNorm2d, nn.LayerNorm)):
                if module.weight is not None:
                    nn.init.ones_(module.weight)
                    nn.init.zeros_(module.bias)
                if isinstance(module, nn.BatchNorm2d):
                    module.reset_running_stats()
        for module in model.modules():
            if isinstance(module, (CFAS, FAS, FAI)):
                module.reset_parameters()
    return model


def build_hfsnet(cfg: NetworkConfig, seed: int, dtype: torch.dtype = torch.float32) -> HFSNet:
    """Construct and initialize an HFSNet."""
    model = init_parameters(HFSNet(cfg), seed).to(dtype)
    n_params = sum(p.numel() for p in model.parameters())
    logger.debug(f"Built HFSNet with {n_params} parameters (seed {seed})")
    return model


def state_to_numpy(module: nn.Module) -> Dict[str, np.ndarray]:
    """state_dict as float arrays, keeping manifest order."""
    return {name: t.detach().cpu().numpy().copy() for name, t in module.state_dict().items()}
