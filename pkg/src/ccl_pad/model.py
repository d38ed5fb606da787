"""Online/target networks, EMA target update and checkpoints.

The online branch is encoder ``f``, projector ``g``, predictor ``h`` and
classifier ``l``; the target branch is ``f'``, ``g'`` and never receives
gradients.
"""

from __future__ import annotations

import copy
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils import parameters_to_vector, vector_to_parameters

_ACTIVATIONS: dict[str, Callable[[], nn.Module]] = {"relu": nn.ReLU, "tanh": nn.Tanh, "gelu": nn.GELU}


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 64
    hidden: tuple[int, ...] = (64, 64)
    encoder_dim: int = 32
    proj_hidden: int = 64
    embed_dim: int = 32
    batch_norm: bool = False
    activation: str = "relu"


# Head sizes of the ResNet50 setting: 128-d encoder output, 512-d hidden FC with BN+ReLU.
PAPER_PRESET = ModelConfig(encoder_dim=128, proj_hidden=512, embed_dim=128, batch_norm=True)


def mlp(sizes: Sequence[int], activation: str = "relu", batch_norm: bool = False) -> nn.Sequential:
    """Affine layers with activation between them; the last layer is affine only."""
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(sizes) - 2:
            if batch_norm:
                # Batch statistics only: heads are used during training, never at inference.
                layers.append(nn.BatchNorm1d(b, track_running_stats=False))
            layers.append(_ACTIVATIONS[activation]())
    return nn.Sequential(*layers)


class CCLNet(nn.Module):
    """Online and target branches.

    Any module mapping ``(B, input_dim)`` to ``(B, encoder_dim)`` may be
    passed as ``encoder``; by default a small perceptron is built.
    """

    def __init__(self, config: ModelConfig = ModelConfig(), encoder: nn.Module | None = None):
        super().__init__()
        self.config = config
        c = config
        self.encoder = encoder if encoder is not None else mlp([c.input_dim, *c.hidden, c.encoder_dim], c.activation)
        self.projector = mlp([c.encoder_dim, c.proj_hidden, c.embed_dim], c.activation, c.batch_norm)
        self.predictor = mlp([c.embed_dim, c.proj_hidden, c.embed_dim], c.activation, c.batch_norm)
        self.classifier = nn.Linear(c.encoder_dim, 1)
        self.target_encoder = copy.deepcopy(self.encoder)
        self.target_projector = copy.deepcopy(self.projector)
        for p in self.target_parameters():
            p.requires_grad_(False)

    def online_parameters(self) -> list[nn.Parameter]:
        mods = (self.encoder, self.projector, self.predictor, self.classifier)
        return [p for m in mods for p in m.parameters()]

    def online_fg_parameters(self) -> list[nn.Parameter]:
        return [*self.encoder.parameters(), *self.projector.parameters()]

    def target_parameters(self) -> list[nn.Parameter]:
        return [*self.target_encoder.parameters(), *self.target_projector.parameters()]

    def forward_online(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (logit ``l(f(x))`` of shape (B,), embedding ``h(g(f(x)))``)."""
        self._check_input(x)
        e = self.encoder(x)
        return self.classifier(e).squeeze(-1), self.predictor(self.projector(e))

    @torch.no_grad()
    def forward_target(self, x: torch.Tensor) -> torch.Tensor:
        """Target embedding ``g'(f'(x))``; carries no autograd history."""
        self._check_input(x)
        return self.target_projector(self.target_encoder(x))

    def forward_target_graph(self, x: torch.Tensor) -> torch.Tensor:
        """Same as ``forward_target`` but keeps the graph; for gradient audits only."""
        return self.target_projector(self.target_encoder(x))

    @torch.no_grad()
    def score(self, x: torch.Tensor) -> torch.Tensor:
        """Liveness probability ``sigmoid(l(f(x)))``; only ``f`` and ``l`` are used."""
        self._check_input(x)
        return torch.sigmoid(self.classifier(self.encoder(x)).squeeze(-1))

    def _check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(f"expected input of shape (B, {self.config.input_dim}), got {tuple(x.shape)}")

    @torch.no_grad()
    def reset_target(self) -> None:
        for t, o in zip(self.target_parameters(), self.online_fg_parameters()):
            t.copy_(o)

    @torch.no_grad()
    def update_target(self, tau: float) -> None:
        """In-place EMA: ``theta' <- tau * theta' + (1 - tau) * theta``."""
        if not 0.0 <= tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {tau}")
        for t, o in zip(self.target_parameters(), self.online_fg_parameters()):
            t.copy_(tau * t + (1.0 - tau) * o)


@torch.no_grad()
def init_weights(net: CCLNet, seed: int) -> None:
    """Fan-in scaled uniform init of every affine layer, then ``theta' = theta``."""
    gen = torch.Generator().manual_seed(seed)
    for module in [net.encoder, net.projector, net.predictor, net.classifier]:
        for layer in module.modules():
            if isinstance(layer, nn.Linear):
                bound = 1.0 / math.sqrt(layer.in_features)
                layer.weight.copy_(torch.rand(layer.weight.shape, generator=gen, dtype=layer.weight.dtype) * 2 * bound - bound)
                layer.bias.copy_(torch.rand(layer.bias.shape, generator=gen, dtype=layer.bias.dtype) * 2 * bound - bound)
    net.reset_target()


def build_model(config: ModelConfig = ModelConfig(), seed: int = 0, dtype: torch.dtype = torch.float64) -> CCLNet:
    net = CCLNet(config).to(dtype)
    init_weights(net, seed)
    return net


def tau_schedule(s: int, S: int, tau_base: float = 0.996) -> float:
    """Cosine target-decay schedule rising from ``tau_base`` at s=0 to 1 at s=S."""
    if S < 1:
        raise ValueError("S must be >= 1")
    if s < 0 or s > S:
        raise ValueError(f"step {s} outside [0, {S}]")
    return 1.0 - (1.0 - tau_base) * (math.cos(math.pi * s / S) + 1.0) / 2.0


def ema_update(theta, theta_prime, tau: float):
    """Functional EMA on arrays/tensors of equal shape."""
    if tuple(np.shape(theta)) != tuple(np.shape(theta_prime)):
        raise ValueError(f"shape mismatch: {np.shape(theta)} vs {np.shape(theta_prime)}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    return tau * theta_prime + (1.0 - tau) * theta


@dataclass
class ModelState:
    """Network plus EMA bookkeeping (step counter, horizon, base decay)."""

    net: CCLNet
    step: int = 0
    max_steps: int = 1
    tau_base: float = 0.996

    @property
    def theta(self) -> torch.Tensor:
        return parameters_to_vector(self.net.online_parameters()).detach()

    @property
    def theta_fg(self) -> torch.Tensor:
        return parameters_to_vector(self.net.online_fg_parameters()).detach()

    @property
    def theta_prime(self) -> torch.Tensor:
        return parameters_to_vector(self.net.target_parameters()).detach()


# --------------------------------------------------------------------------
# Checkpoints: magic, uint32 header length, JSON header, float64 LE theta, theta'.

CHECKPOINT_MAGIC = b"CCLCKPT\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    theta = state.theta.to(torch.float64).numpy().astype("<f8")
    theta_prime = state.theta_prime.to(torch.float64).numpy().astype("<f8")
    cfg = asdict(state.net.config)
    cfg["hidden"] = list(cfg["hidden"])
    header = {
        "version": CHECKPOINT_VERSION,
        "model": cfg,
        "step": state.step,
        "max_steps": state.max_steps,
        "tau_base": state.tau_base,
        "n_theta": int(theta.size),
        "n_theta_prime": int(theta_prime.size),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(theta.tobytes())
        fh.write(theta_prime.tobytes())


def load_checkpoint(path: str | Path) -> ModelState:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    (n,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12 : 12 + n])
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['version']}")
    cfg = header["model"]
    cfg["hidden"] = tuple(cfg["hidden"])
    net = CCLNet(ModelConfig(**cfg)).to(torch.float64)
    body = np.frombuffer(raw, dtype="<f8", offset=12 + n)
    n_theta, n_prime = header["n_theta"], header["n_theta_prime"]
    if body.size != n_theta + n_prime:
        raise ValueError(f"{path}: parameter count mismatch")
    with torch.no_grad():
        vector_to_parameters(torch.from_numpy(body[:n_theta].copy()), net.online_parameters())
        vector_to_parameters(torch.from_numpy(body[n_theta:].copy()), net.target_parameters())
    return ModelState(net, header["step"], header["max_steps"], header["tau_base"])
