"""Cascaded residual denoiser for coarse channel estimates.

The input is a ``2 x L`` matrix whose rows are the least-squares estimates
from two consecutive coherence windows.  Each of the ``D`` blocks predicts
the noise left in its input and subtracts it, so the network output is the
input minus the accumulated noise estimate.  Training minimises the
normalized squared error of the second row against the true channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..channel import ChannelTrace
from ..coherence import CoherenceResult
from ..estimation import PilotDesign, ls_estimate, transmit_pilot
from .layers import BatchNorm2d, Conv2d, ReLU, Sequential, make_optimizer


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch


@dataclass(frozen=True)
class CdrnConfig:
    D: int = 2
    layers_per_block: int = 3
    filters: int = 8
    kernel: int = 3
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "sgd"

    def __post_init__(self):
        for name in ("D", "layers_per_block", "filters", "kernel", "epochs", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def full_size(cls, **overrides) -> "CdrnConfig":
        """Full-size architecture: 16 convolution layers of 64 filters per block."""
        return cls(**{"layers_per_block": 16, "filters": 64, **overrides})


@dataclass(frozen=True)
class TrainingPair:
    """LS estimates from windows ``k`` and ``k+1`` with the true ``h_{k+1}``."""

    prev: np.ndarray
    curr: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, n), dtype=float) for n in ("prev", "curr", "target")]
        if any(a.ndim != 1 for a in arrs) or len({a.size for a in arrs}) != 1:
            raise ValueError("training pair vectors must be 1-D with equal lengths")
        if not all(np.isfinite(a).all() for a in arrs):
            raise ValueError("training pair contains non-finite values")
        for n, a in zip(("prev", "curr", "target"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, n, a)

    @property
    def input(self) -> np.ndarray:
        return np.stack([self.prev, self.curr])


def _block(cfg: CdrnConfig, rng: np.random.Generator) -> Sequential:
    k, f = cfg.kernel, cfg.filters
    if cfg.layers_per_block == 1:
        return Sequential([Conv2d(1, 1, k, rng, zero_init=True)])
    layers = [Conv2d(1, f, k, rng), BatchNorm2d(f), ReLU()]
    for _ in range(cfg.layers_per_block - 2):
        layers += [Conv2d(f, f, k, rng), BatchNorm2d(f), ReLU()]
    # the last layer starts at zero so an untrained block passes its input through
    layers.append(Conv2d(f, 1, k, rng, zero_init=True))
    return Sequential(layers)


@dataclass
class Cdrn:
    """Network state.  ``scale`` normalises inputs to order one."""

    config: CdrnConfig
    blocks: list = field(default_factory=list)
    scale: float = 1.0

    @classmethod
    def init(cls, cfg: CdrnConfig) -> "Cdrn":
        rng = np.random.default_rng(cfg.seed)
        return cls(cfg, [_block(cfg, rng) for _ in range(cfg.D)])

    def layers(self):
        for d, block in enumerate(self.blocks):
            for i, layer in enumerate(block.layers):
                yield f"block{d}.layer{i}", layer

    def parameters(self) -> list[tuple[object, str]]:
        return [(layer, key) for _, layer in self.layers() for key in layer.params]

    def forward(self, P: np.ndarray, train: bool = False) -> np.ndarray:
        """``P - scale * sum_d f_d(Pn_{d-1})`` for a ``(B, 2, L)`` batch."""
        x = P[:, None, :, :] / self.scale
        total = np.zeros_like(x)
        for block in self.blocks:
            r = block.forward(x, train)
            total = total + r
            x = x - r
        return P - self.scale * total[:, 0]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        """Gradient of the loss w.r.t. the input; fills every layer's ``grads``."""
        # out = scale * Pn_D where Pn_d = Pn_{d-1} - f_d(Pn_{d-1}) and Pn_0 = P / scale
        g = self.scale * dout[:, None, :, :]
        for block in reversed(self.blocks):
            g = g + block.backward(-g)
        return g[:, 0] / self.scale


def _as_batch(P) -> tuple[np.ndarray, bool]:
    P = np.asarray(P, dtype=float)
    single = P.ndim == 2
    if single:
        P = P[None]
    if P.ndim != 3 or P.shape[1] != 2:
        raise ValueError(f"expected a (2, L) or (B, 2, L) input, got {P.shape}")
    if not np.isfinite(P).all():
        raise ValueError("input contains non-finite values")
    return P, single


def cdrn_forward(P, model: Cdrn) -> np.ndarray:
    """Denoise one ``(2, L)`` matrix or a ``(B, 2, L)`` batch in inference mode."""
    P, single = _as_batch(P)
    out = model.forward(P, train=False)
    return out[0] if single else out


def nmse_loss(out: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-sample NMSE of the second output row and its gradient w.r.t. ``out``."""
    err = out[:, 1] - target
    ref = np.sum(target * target, axis=1)
    loss = float(np.mean(np.sum(err * err, axis=1) / ref))
    grad = np.zeros_like(out)
    grad[:, 1] = 2 * err / ref[:, None] / out.shape[0]
    return loss, grad


def _stack(pairs) -> tuple[np.ndarray, np.ndarray]:
    if not pairs:
        raise ValueError("need at least one training pair")
    sizes = {p.target.size for p in pairs}
    if len(sizes) != 1:
        raise ValueError(f"training pairs have mixed lengths {sorted(sizes)}")
    X = np.stack([p.input for p in pairs])
    Y = np.stack([p.target for p in pairs])
    if np.any(np.sum(Y * Y, axis=1) == 0):
        raise ValueError("a training target is all zero")
    return X, Y


def cdrn_train(pairs: list[TrainingPair], cfg: CdrnConfig = CdrnConfig()) -> tuple[Cdrn, list[float]]:
    """Fit a fresh network by minibatch gradient descent on the NMSE loss.

    Returns the model and the mean training loss of every epoch.

    Raises
    ------
    TrainingDivergedError
        When a batch loss becomes non-finite.
    """
    X, Y = _stack(pairs)
    model = Cdrn.init(cfg)
    model.scale = float(np.sqrt(np.mean(X * X))) or 1.0
    rng = np.random.default_rng([cfg.seed, 1])
    opt = make_optimizer(cfg.optimizer, cfg.learning_rate)
    params = model.parameters()
    history: list[float] = []
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            out = model.forward(X[idx], train=True)
            loss, grad = nmse_loss(out, Y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            model.backward(grad)
            opt.step([layer.params[k] for layer, k in params], [layer.grads[k] for layer, k in params])
            total += loss * idx.size
        history.append(total / n)
        if not np.isfinite(history[-1]):
            raise TrainingDivergedError(epoch, history[-1])
    return model, history


def build_training_pairs(
    trace,
    coherence: CoherenceResult,
    pilot: PilotDesign,
    sigma2: float,
    seed: int = 0,
    led: int = 0,
    pd: int = 0,
) -> list[TrainingPair]:
    """Cut a gain series into coherence windows and pair consecutive LS estimates.

    Every slot of a window is estimated from its own pilot block, so each
    window yields a vector of ``n_c`` estimates.  ``W`` complete windows give
    ``W - 1`` pairs.
    """
    if coherence.outage or coherence.n_c <= 0 or coherence.T_c <= 0:
        raise ValueError("cannot build training pairs without a positive coherence time")
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    h = trace.series(led, pd) if isinstance(trace, ChannelTrace) else np.asarray(trace, dtype=float)
    if h.ndim != 1:
        raise ValueError("expected a scalar gain series")
    n_c = int(coherence.n_c)
    windows = h.size // n_c
    if windows < 2:
        raise ValueError(f"series of {h.size} slots holds fewer than two windows of {n_c}")
    rng = np.random.default_rng(seed)
    truth = h[: windows * n_c].reshape(windows, n_c)
    est = np.empty_like(truth)
    for w in range(windows):
        for j in range(n_c):
            y = transmit_pilot(truth[w, j], pilot.a, sigma2, rng)
            est[w, j] = ls_estimate(y, pilot.a)
    return [TrainingPair(est[w], est[w + 1], truth[w + 1]) for w in range(windows - 1)]

