"""Differentiable numeric substrate.

Everything runs on CPU in `torch.float64`. Parameterized kernels are plain
`torch.nn.Module`s, so reverse-mode gradients come from `torch.autograd`;
`grad_check` compares them against central finite differences.
"""

from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from typing import Any

import torch
import torch.nn.functional as F
from torch import nn
from torch.optim.lr_scheduler import CosineAnnealingLR

from fusionq.common_types import DTYPE, Tensor
from fusionq.errors import (
    ConfigurationError,
    DomainError,
    GradientCheckError,
    ShapeError,
    TrainingError,
)

# denominator floor of the grad_check relative error
RELATIVE_ERROR_FLOOR = 1e-8


def as_tensor(values: Any, /) -> Tensor:
    """Convert `values` to a `float64` tensor, rejecting NaN and Inf."""
    tensor = torch.as_tensor(values, dtype=DTYPE)
    if not bool(torch.isfinite(tensor).all()):
        msg = "Input values must be finite."
        hint = "Instead, NaN or Inf is given."
        raise DomainError(msg + "\n" + hint)
    return tensor


def sinpos_encode(x: Tensor, channels_per_scalar: int, temperature: float = 10000.0) -> Tensor:
    """Sinusoidal encoding of every scalar along the last axis.

    Each scalar x_j becomes the pairs (sin(x_j/τ^{i/k}), cos(x_j/τ^{i/k})),
    i = 0..k-1, where 2k is `channels_per_scalar`. The pairs of all scalars are
    concatenated, so an input of shape (..., m) gives (..., 2k·m).
    """
    if channels_per_scalar < 2 or channels_per_scalar % 2:
        msg = "The number of channels per scalar must be a positive even number."
        hint = f"Instead, {channels_per_scalar=} is given."
        raise ConfigurationError(msg + "\n" + hint)
    if temperature <= 0:
        msg = "The temperature must be positive."
        hint = f"Instead, {temperature=} is given."
        raise ConfigurationError(msg + "\n" + hint)

    k = channels_per_scalar // 2
    exponents = torch.arange(k, dtype=DTYPE) / k
    scales = torch.pow(torch.tensor(temperature, dtype=DTYPE), exponents)
    scaled = x.unsqueeze(-1) / scales
    pairs = torch.stack((scaled.sin(), scaled.cos()), dim=-1)
    return pairs.flatten(-3)


def softmax(logits: Tensor, dim: int = -1) -> Tensor:
    """Numerically stable softmax along `dim`."""
    if logits.shape[dim] == 0:
        raise DomainError("The softmax of an empty vector is undefined.")
    return torch.softmax(logits, dim=dim)


class Mlp(nn.Module):
    """Stack of affine layers with a rectifier after every hidden layer.

    `widths` lists the input width, the hidden widths and the output width.
    With `zero_last` the final layer starts at zero, so the block initially
    emits zeros (used for residual refinements).
    """

    def __init__(self, widths: Sequence[int], /, *, zero_last: bool = False) -> None:
        super().__init__()
        if len(widths) < 2 or any(w < 1 for w in widths):
            msg = "An MLP needs at least two positive widths."
            hint = f"Instead, widths={list(widths)} is given."
            raise ConfigurationError(msg + "\n" + hint)
        self.widths = tuple(widths)
        self.layers = nn.ModuleList(
            nn.Linear(n_in, n_out, dtype=DTYPE) for n_in, n_out in zip(widths, widths[1:])
        )
        self.reset_parameters(zero_last=zero_last)

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    @torch.no_grad()
    def reset_parameters(self, *, zero_last: bool = False) -> None:
        for layer in self.layers:
            nn.init.xavier_uniform_(layer.weight)
            nn.init.zeros_(layer.bias)
        if zero_last:
            nn.init.zeros_(self.layers[-1].weight)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.widths[0]:
            msg = f"The trailing dimension must be equal to the MLP input width {self.widths[0]}."
            hint = f"Instead, shape={tuple(x.shape)} is given."
            raise ShapeError(msg + "\n" + hint)
        *hidden, last = self.layers
        for layer in hidden:
            x = F.relu(layer(x))
        return last(x)


def mlp_forward(spec: Mlp, x: Tensor) -> Tensor:
    return spec(x)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) · gain + bias over the last axis, population variance."""
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        msg = f"Gain and bias must have shape ({n},)."
        hint = f"Instead, {tuple(gain.shape)} and {tuple(bias.shape)} are given."
        raise ShapeError(msg + "\n" + hint)
    if eps < 0:
        msg = "eps must not be negative."
        hint = f"Instead, {eps=} is given."
        raise DomainError(msg + "\n" + hint)
    return F.layer_norm(x, (n,), gain, bias, eps)


class Attention(nn.Module):
    """Multi-head scaled dot-product attention with Q/K/V and output projections."""

    def __init__(self, width: int, heads: int) -> None:
        super().__init__()
        if heads < 1 or width % heads:
            msg = "The model width must be divisible by the head count."
            hint = f"Instead, {width=} and {heads=} are given."
            raise ConfigurationError(msg + "\n" + hint)
        self.width = width
        self.heads = heads
        self.query_proj = nn.Linear(width, width, dtype=DTYPE)
        self.key_proj = nn.Linear(width, width, dtype=DTYPE)
        self.value_proj = nn.Linear(width, width, dtype=DTYPE)
        self.output_proj = nn.Linear(width, width, dtype=DTYPE)
        self.reset_parameters()

    @torch.no_grad()
    def reset_parameters(self) -> None:
        for proj in (self.query_proj, self.key_proj, self.value_proj, self.output_proj):
            nn.init.xavier_uniform_(proj.weight)
            nn.init.zeros_(proj.bias)

    def forward(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        for name, t in (("q", q), ("k", k), ("v", v)):
            if t.shape[-1] != self.width:
                msg = f"The trailing dimension of {name} must be {self.width}."
                hint = f"Instead, shape={tuple(t.shape)} is given."
                raise ShapeError(msg + "\n" + hint)
        if k.shape[-2] != v.shape[-2]:
            msg = "Keys and values must have the same token count."
            hint = f"Instead, {k.shape[-2]} and {v.shape[-2]} are given."
            raise ShapeError(msg + "\n" + hint)
        if k.shape[-2] == 0:
            raise DomainError("Attention over zero keys is undefined.")
        if q.shape[-2] == 0:
            return q.new_zeros(q.shape)

        head_dim = self.width // self.heads

        def split(x: Tensor) -> Tensor:
            return x.unflatten(-1, (self.heads, head_dim)).transpose(-3, -2)

        out = F.scaled_dot_product_attention(
            split(self.query_proj(q)),
            split(self.key_proj(k)),
            split(self.value_proj(v)),
        )
        return self.output_proj(out.transpose(-3, -2).flatten(-2))


def multi_head_attention(spec: Attention, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    return spec(q, k, v)


@dataclass(slots=True, eq=False, match_args=False)
class OptimizerState:
    """AdamW moments plus the optional cosine schedule driving its learning rate."""
    optimizer: torch.optim.AdamW
    scheduler: CosineAnnealingLR | None = None
    steps: int = 0

    @property
    def lr(self) -> float:
        return float(self.optimizer.param_groups[0]["lr"])

    def state_dict(self) -> dict[str, Any]:
        return {
            "optimizer": self.optimizer.state_dict(),
            "scheduler": None if self.scheduler is None else self.scheduler.state_dict(),
            "steps": self.steps,
        }

    def load_state_dict(self, state: dict[str, Any]) -> None:
        self.optimizer.load_state_dict(state["optimizer"])
        if self.scheduler is not None and state["scheduler"] is not None:
            self.scheduler.load_state_dict(state["scheduler"])
        self.steps = int(state["steps"])


def make_optimizer_state(params: Iterable[nn.Parameter],
                         /, *,
                         lr: float = 4e-4,
                         betas: tuple[float, float] = (0.9, 0.999),
                         eps: float = 1e-8,
                         weight_decay: float = 0.01,
                         total_steps: int | None = None) -> OptimizerState:
    """Create AdamW (decoupled weight decay) with an optional cosine annealing
    schedule over `total_steps`.
    """
    if lr < 0:
        msg = "The learning rate must not be negative."
        hint = f"Instead, {lr=} is given."
        raise ConfigurationError(msg + "\n" + hint)
    optimizer = torch.optim.AdamW(
        list(params), lr=lr, betas=betas, eps=eps, weight_decay=weight_decay, foreach=False,
    )
    scheduler = CosineAnnealingLR(optimizer, T_max=total_steps) if total_steps else None
    return OptimizerState(optimizer, scheduler)


def adam_step(params: Sequence[Tensor],
              grads: Sequence[Tensor | None],
              state: OptimizerState) -> OptimizerState:
    """Apply one bias-corrected AdamW update in place.

    `params` must be the tensors `state` was created for. A missing gradient is
    treated as zero. Raise `TrainingError` on non-finite gradients.
    """
    if len(params) != len(grads):
        msg = "Each parameter needs exactly one gradient."
        hint = f"Instead, {len(params)} parameters and {len(grads)} gradients are given."
        raise ShapeError(msg + "\n" + hint)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = torch.zeros_like(p)
        if g.shape != p.shape:
            msg = f"The gradient #{i} does not match its parameter."
            hint = f"Instead, {tuple(g.shape)} and {tuple(p.shape)} are given."
            raise ShapeError(msg + "\n" + hint)
        if not bool(torch.isfinite(g).all()):
            raise TrainingError(f"The gradient #{i} has non-finite values.")
        p.grad = g.detach().clone()

    state.optimizer.step()
    if state.scheduler is not None:
        state.scheduler.step()
    state.steps += 1
    return state


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], /, *, h: float = 1e-5) -> float:
    """Return the largest error between the reverse-mode gradient of the scalar
    `f()` with respect to `params` and central differences (f(θ+h)-f(θ-h))/2h.

    The error of each coordinate is |g_rev - g_fd| / max(|g_rev|, |g_fd|, 1e-8).
    `params` are perturbed in place and restored afterwards.
    """
    if h <= 0:
        msg = "The finite-difference step must be positive."
        hint = f"Instead, {h=} is given."
        raise ConfigurationError(msg + "\n" + hint)

    params = list(params)
    value = f()
    if value.numel() != 1 or not bool(torch.isfinite(value).all()):
        raise GradientCheckError("f must return one finite scalar.")
    analytic = torch.autograd.grad(value, params, allow_unused=True)

    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            flat = p.view(-1)
            flat_grad = torch.zeros_like(flat) if g is None else g.reshape(-1)
            for i in range(flat.numel()):
                origin = flat[i].item()
                flat[i] = origin + h
                plus = f().item()
                flat[i] = origin - h
                minus = f().item()
                flat[i] = origin
                numeric = (plus - minus) / (2 * h)
                if not torch.isfinite(torch.tensor(numeric)):
                    raise GradientCheckError(f"f is not finite around coordinate {i}.")
                reverse = flat_grad[i].item()
                error = abs(reverse - numeric) / max(abs(reverse), abs(numeric), RELATIVE_ERROR_FLOOR)
                worst = max(worst, error)
    return worst
