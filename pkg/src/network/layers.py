"""Frequency-selection layers and the windowed-attention encoder."""
import logging
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.utils.errors import ShapeError

logger = logging.getLogger(__name__)

MODULATOR_BIAS = 6.0  # sigmoid(6) ~ 0.9975, near-identity start


def _check_feature_map(x: torch.Tensor, name: str) -> None:
    if x.dim() != 4 or min(x.shape) < 1:
        raise ShapeError(f"{name}: expected a non-empty B×C×H×W tensor, got {tuple(x.shape)}")


# ============================================================================
# cFAS
# ============================================================================


class CFAS(nn.Module):
    """
    Compact frequency-aware selection.

    The first half of the channels is split into a global mean (low) and its
    residual (high); the second half uses the means of the four spatial
    quadrants instead. Each band is rescaled by a per-channel weight.
    """

    def __init__(self, channels: int, enabled: bool = True):
        super().__init__()
        if channels % 2:
            raise ShapeError(f"cFAS needs an even channel count, got {channels}")
        self.channels = channels
        self.enabled = enabled
        half = channels // 2
        self.phi_g_low = nn.Parameter(torch.ones(half))
        self.phi_g_high = nn.Parameter(torch.ones(half))
        self.phi_l_low = nn.Parameter(torch.ones(channels - half))
        self.phi_l_high = nn.Parameter(torch.ones(channels - half))

    def reset_parameters(self) -> None:
        for phi in (self.phi_g_low, self.phi_g_high, self.phi_l_low, self.phi_l_high):
            nn.init.ones_(phi)

    @staticmethod
    def _mix(y: torch.Tensor, low: torch.Tensor, phi_low: torch.Tensor, phi_high: torch.Tensor) -> torch.Tensor:
        # phi_low*low + phi_high*(y - low), arranged to be exact when phi_low == phi_high
        phi_low = phi_low.view(1, -1, 1, 1)
        phi_high = phi_high.view(1, -1, 1, 1)
        return phi_high * y + (phi_low - phi_high) * low

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        if not self.enabled:
            return y
        _check_feature_map(y, "cFAS")
        b, c, h, w = y.shape
        if c != self.channels:
            raise ShapeError(f"cFAS built for {self.channels} channels, got {c}")
        if h % 2 or w % 2:
            raise ShapeError(f"cFAS needs even spatial dims, got {h}x{w}")

        half = c // 2
        y_g, y_l = y[:, :half], y[:, half:]
        g_low = y_g.mean(dim=(2, 3), keepdim=True)
        l_low = F.avg_pool2d(y_l, kernel_size=(h // 2, w // 2))
        l_low = l_low.repeat_interleave(h // 2, dim=2).repeat_interleave(w // 2, dim=3)
        out_g = self._mix(y_g, g_low, self.phi_g_low, self.phi_g_high)
        out_l = self._mix(y_l, l_low, self.phi_l_low, self.phi_l_high)
        return torch.cat([out_g, out_l], dim=1)


# ============================================================================
# FAS
# ============================================================================


class _FilterGenerator(nn.Module):
    """GAP -> 1x1 conv -> BN -> per-group softmax over the k*k taps."""

    def __init__(self, channels: int, kernel_size: int, groups: int):
        super().__init__()
        self.kernel_size = kernel_size
        self.groups = groups
        self.conv = nn.Conv2d(channels, groups * kernel_size**2, kernel_size=1, bias=False)
        self.bn = nn.BatchNorm2d(groups * kernel_size**2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        logits = self.bn(self.conv(F.adaptive_avg_pool2d(x, 1)))
        logits = logits.view(x.shape[0], self.groups, self.kernel_size**2)
        return torch.softmax(logits, dim=-1)


class _Modulator(nn.Module):
    """Fuses both bands and emits sigmoid weights for each."""

    def __init__(self, channels: int):
        super().__init__()
        hidden = max(channels // 4, 4)
        self.fuse = nn.Linear(channels, hidden)
        self.low = nn.Linear(hidden, channels)
        self.high = nn.Linear(hidden, channels)

    def reset_bias(self) -> None:
        nn.init.constant_(self.low.bias, MODULATOR_BIAS)
        nn.init.constant_(self.high.bias, MODULATOR_BIAS)

    def forward(self, x_low: torch.Tensor, x_high: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        s = x_low.mean(dim=(2, 3)) + x_high.mean(dim=(2, 3))
        z = F.relu(self.fuse(s))
        w_low = torch.sigmoid(self.low(z))[:, :, None, None]
        w_high = torch.sigmoid(self.high(z))[:, :, None, None]
        return w_low, w_high


def dynamic_group_conv(x: torch.Tensor, kernels: torch.Tensor) -> torch.Tensor:
    """
    Convolve with per-sample kernels shared by the channels of each group.

    Args:
        x: B×C×H×W input
        kernels: B×g×k×k (or B×g×k*k) kernels; C must be divisible by g

    Returns:
        B×C×H×W output with symmetric zero padding
    """
    b, c, h, w = x.shape
    g = kernels.shape[1]
    k = int(round(kernels[0, 0].numel() ** 0.5))
    if c % g:
        raise ShapeError(f"{c} channels not divisible into {g} groups")
    patches = F.unfold(x, kernel_size=k, padding=k // 2)
    patches = patches.view(b, g, c // g, k * k, h * w)
    out = torch.einsum("bgcqp,bgq->bgcp", patches, kernels.reshape(b, g, k * k))
    return out.reshape(b, c, h, w)


class FAS(nn.Module):
    """
    Frequency-aware adaptive selection.

    Channels are split into branches; each branch generates per-group low-pass
    kernels from its own content, takes the identity-minus-low-pass residual
    as the high band, and recombines both bands with learned attention weights.
    """

    def __init__(
        self,
        channels: int,
        branches: int = 2,
        kernel_sizes: Sequence[int] = (3, 5),
        groups: int = 4,
        enabled: bool = True,
    ):
        super().__init__()
        if branches < 1 or len(kernel_sizes) != branches:
            raise ShapeError("FAS needs one kernel size per branch")
        if any(k < 1 or k % 2 == 0 for k in kernel_sizes):
            raise ShapeError("FAS kernel sizes must be odd")
        if channels % (branches * groups):
            raise ShapeError(f"{channels} channels not divisible by branches*groups = {branches * groups}")
        self.channels = channels
        self.branches = branches
        self.enabled = enabled
        branch_channels = channels // branches
        self.filters = nn.ModuleList(
            [_FilterGenerator(branch_channels, k, groups) for k in kernel_sizes]
        )
        self.modulators = nn.ModuleList([_Modulator(branch_channels) for _ in kernel_sizes])

    def reset_parameters(self) -> None:
        for modulator in self.modulators:
            modulator.reset_bias()

    def split_bands(self, x: torch.Tensor) -> List[Tuple[torch.Tensor, torch.Tensor]]:
        """Per-branch (x_low, x_high) with x_low + x_high = x_branch."""
        _check_feature_map(x, "FAS")
        if x.shape[1] != self.channels:
            raise ShapeError(f"FAS built for {self.channels} channels, got {x.shape[1]}")
        bands = []
        for chunk, generator in zip(torch.chunk(x, self.branches, dim=1), self.filters):
            x_low = dynamic_group_conv(chunk, generator(chunk))
            bands.append((x_low, chunk - x_low))
        return bands

    def low_pass_kernels(self, x: torch.Tensor) -> List[torch.Tensor]:
        return [gen(chunk) for chunk, gen in zip(torch.chunk(x, self.branches, dim=1), self.filters)]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.enabled:
            return x
        outputs = []
        chunks = torch.chunk(x, self.branches, dim=1)
        for chunk, (x_low, x_high), modulator in zip(chunks, self.split_bands(x), self.modulators):
            w_low, w_high = modulator(x_low, x_high)
            # w_low*x_low + w_high*x_high with x_high = chunk - x_low
            outputs.append(w_high * chunk + (w_low - w_high) * x_low)
        return torch.cat(outputs, dim=1)


# ============================================================================
# FAI
# ============================================================================


class FAI(nn.Module):
    """Modulates CNN features with attention features: concat[x_s, beta*m_s + gamma]."""

    def __init__(self, m_channels: int, t_channels: int, enabled: bool = True):
        super().__init__()
        self.m_channels = m_channels
        self.enabled = enabled
        self.beta_conv = nn.Conv2d(t_channels, m_channels, kernel_size=3, padding=1)
        self.gamma_conv = nn.Conv2d(t_channels, m_channels, kernel_size=3, padding=1)

    def reset_parameters(self) -> None:
        nn.init.constant_(self.beta_conv.bias, 1.0)
        nn.init.zeros_(self.gamma_conv.weight)
        nn.init.zeros_(self.gamma_conv.bias)

    def modulation(self, m_s: torch.Tensor, t_s: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if t_s.shape[-2:] != m_s.shape[-2:]:
            t_s = F.interpolate(t_s, size=m_s.shape[-2:], mode="bilinear", align_corners=False)
        beta, gamma = self.beta_conv(t_s), self.gamma_conv(t_s)
        if beta.shape[1] != m_s.shape[1]:
            raise ShapeError(f"FAI produces {beta.shape[1]} channels for {m_s.shape[1]}-channel features")
        return beta, gamma

    def forward(self, x_s: torch.Tensor, m_s: torch.Tensor, t_s: Optional[torch.Tensor]) -> torch.Tensor:
        if x_s.shape[-2:] != m_s.shape[-2:]:
            raise ShapeError(f"FAI grids differ: x {tuple(x_s.shape)} vs m {tuple(m_s.shape)}")
        if not self.enabled or t_s is None:
            return torch.cat([x_s, m_s], dim=1)
        beta, gamma = self.modulation(m_s, t_s)
        return torch.cat([x_s, beta * m_s + gamma], dim=1)


# ============================================================================
# Windowed attention
# ============================================================================


def window_partition(x: torch.Tensor, window: int) -> torch.Tensor:
    """B×H×W×C -> (B*nW)×(window*window)×C."""
    b, h, w, c = x.shape
    x = x.view(b, h // window, window, w // window, window, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window * window, c)


def window_reverse(windows: torch.Tensor, window: int, h: int, w: int) -> torch.Tensor:
    """Inverse of window_partition."""
    c = windows.shape[-1]
    b = windows.shape[0] // ((h // window) * (w // window))
    x = windows.view(b, h // window, w // window, window, window, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)


def shift_mask(h: int, w: int, window: int, shift: int) -> torch.Tensor:
    """Additive mask (nW×N×N) keeping attention inside each pre-roll region."""
    region = torch.zeros((1, h, w, 1))
    slices = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    label = 0
    for hs in slices:
        for ws in slices:
            region[:, hs, ws, :] = label
            label += 1
    windows = window_partition(region, window).squeeze(-1)
    diff = windows.unsqueeze(1) - windows.unsqueeze(2)
    return diff.masked_fill(diff != 0, -100.0).masked_fill(diff == 0, 0.0)


class WindowAttention(nn.Module):
    """Multi-head self-attention inside non-overlapping windows."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.record = False
        self.last_attention: Optional[torch.Tensor] = None

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        bw, n, c = x.shape
        qkv = self.qkv(x).reshape(bw, n, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q * self.scale) @ k.transpose(-2, -1)
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.view(bw // nw, nw, self.heads, n, n) + mask.to(attn.dtype)[None, :, None]
            attn = attn.view(bw, self.heads, n, n)
        attn = attn.softmax(dim=-1)
        if self.record:
            self.last_attention = attn.detach()
        out = (attn @ v).transpose(1, 2).reshape(bw, n, c)
        return self.proj(out)


class AttentionBlock(nn.Module):
    """LN -> (shifted) window attention -> residual, LN -> token MLP -> residual."""

    def __init__(self, dim: int, heads: int, window: int, shift: int, mlp_ratio: int = 2):
        super().__init__()
        self.window = window
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio), nn.GELU(), nn.Linear(dim * mlp_ratio, dim)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, w, c = x.shape
        # a grid no larger than one window has nothing to shift across
        shift = self.shift if min(h, w) > self.window else 0
        shortcut = x
        y = self.norm1(x)
        mask = None
        if shift:
            y = torch.roll(y, shifts=(-shift, -shift), dims=(1, 2))
            mask = shift_mask(h, w, self.window, shift).to(y.device)
        y = window_reverse(self.attn(window_partition(y, self.window), mask), self.window, h, w)
        if shift:
            y = torch.roll(y, shifts=(shift, shift), dims=(1, 2))
        x = shortcut + y
        return x + self.mlp(self.norm2(x))


class PatchMerging(nn.Module):
    """Concatenate each 2×2 neighbourhood, LN(4C), project to 2C."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = torch.cat([x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]], dim=-1)
        return self.reduction(self.norm(x))


class AttentionStage(nn.Module):
    """
    Two attention blocks (the second shifted by half a window) with optional
    1×1 patch embedding in front and 2× patch merging behind.

    ``forward`` returns the stage features T_s (B×C×H×W) and the merged
    tokens feeding the next stage (None for the last stage).
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        window: int,
        in_channels: Optional[int] = None,
        merge: bool = True,
        mlp_ratio: int = 2,
    ):
        super().__init__()
        self.window = window
        self.embed = nn.Conv2d(in_channels, dim, kernel_size=1) if in_channels else None
        self.blocks = nn.ModuleList(
            [
                AttentionBlock(dim, heads, window, 0, mlp_ratio),
                AttentionBlock(dim, heads, window, window // 2, mlp_ratio),
            ]
        )
        self.merge = PatchMerging(dim) if merge else None

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        _check_feature_map(x, "attention stage")
        h, w = x.shape[-2:]
        if h % self.window or w % self.window:
            raise ShapeError(f"Attention grid {h}x{w} not divisible by window {self.window}")
        if self.embed is not None:
            x = self.embed(x)
        tokens = x.permute(0, 2, 3, 1)
        for block in self.blocks:
            tokens = block(tokens)
        features = tokens.permute(0, 3, 1, 2).contiguous()
        merged = None
        if self.merge is not None:
            merged = self.merge(tokens).permute(0, 3, 1, 2).contiguous()
        return features, merged
