"""LSTM channel tracker and a plain tanh RNN baseline.

Both networks read a window of ``time_step`` past gains and regress the
next one through a dense readout of the final hidden state.  Gradients are
computed by backpropagation through time over the window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cdrn import TrainingDivergedError
from .layers import make_optimizer, sigmoid

GATES = ("f", "c", "i", "o")
MODEL_KINDS = ("lstm", "rnn")


@dataclass
class LstmParams:
    """Gate weights for one LSTM cell.

    ``W_*`` act on the input and ``U_*`` on the previous output.  With
    ``U_* = None`` the cell uses one matrix per gate for both terms, applied
    to ``x + s`` (the input is broadcast across the hidden units, so it must
    have size 1 or ``hidden_size``).
    """

    W_f: np.ndarray
    W_c: np.ndarray
    W_i: np.ndarray
    W_o: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    U_f: np.ndarray | None = None
    U_c: np.ndarray | None = None
    U_i: np.ndarray | None = None
    U_o: np.ndarray | None = None

    def __post_init__(self):
        H = self.hidden_size
        if len({getattr(self, f"U_{g}") is None for g in GATES}) != 1:
            raise ValueError("recurrent weights must be given for all gates or none")
        for g in GATES:
            W, b, U = getattr(self, f"W_{g}"), getattr(self, f"b_{g}"), getattr(self, f"U_{g}")
            if W.ndim != 2 or W.shape[1] != H or b.shape != (H,):
                raise ValueError(f"gate {g}: inconsistent weight shapes {W.shape}, {b.shape}")
            if U is not None and U.shape != (H, H):
                raise ValueError(f"gate {g}: recurrent weights must be ({H}, {H})")
            if self.shared and W.shape[0] != H:
                raise ValueError("shared-weight cells need square gate matrices")
            for a in (W, b) if U is None else (W, b, U):
                if not np.isfinite(a).all():
                    raise ValueError("LSTM parameters must be finite")

    @property
    def hidden_size(self) -> int:
        return self.b_f.shape[0]

    @property
    def shared(self) -> bool:
        return self.U_f is None

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int, shared: bool = False) -> "LstmParams":
        H = hidden_size
        kw = {f"W_{g}": np.zeros((H if shared else input_size, H)) for g in GATES}
        kw.update({f"b_{g}": np.zeros(H) for g in GATES})
        if not shared:
            kw.update({f"U_{g}": np.zeros((H, H)) for g in GATES})
        return cls(**kw)

    @classmethod
    def random(cls, input_size: int, hidden_size: int, rng: np.random.Generator, shared: bool = False,
               scale: float | None = None) -> "LstmParams":
        p = cls.zeros(input_size, hidden_size, shared)
        bound = 1.0 / np.sqrt(hidden_size) if scale is None else scale
        for name, arr in p.arrays().items():
            arr[...] = rng.uniform(-bound, bound, arr.shape)
        return p

    def arrays(self) -> dict[str, np.ndarray]:
        names = [f"{k}_{g}" for k in ("W", "b", "U") for g in GATES]
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}


def _gate_inputs(x: np.ndarray, s: np.ndarray, p: LstmParams) -> dict[str, np.ndarray]:
    if p.shared:
        z = x + s
        return {g: z @ getattr(p, f"W_{g}") + getattr(p, f"b_{g}") for g in GATES}
    return {g: x @ getattr(p, f"W_{g}") + s @ getattr(p, f"U_{g}") + getattr(p, f"b_{g}") for g in GATES}


def lstm_cell(h_in, prev_state, params: LstmParams):
    """One LSTM step.

    Parameters
    ----------
    h_in : array_like
        Input of shape ``(I,)`` or ``(B, I)``.
    prev_state : tuple
        ``(C, s)``, previous cell state and previous output, each of
        shape ``(H,)`` or ``(B, H)``.
    params : LstmParams

    Returns
    -------
    out, (C, s)
        The new output ``tanh(C) * o`` and the new state, with ``s = out``.
    """
    x = np.asarray(h_in, dtype=float)
    C_prev, s_prev = (np.asarray(v, dtype=float) for v in prev_state)
    H = params.hidden_size
    if C_prev.shape != s_prev.shape or C_prev.shape[-1] != H:
        raise ValueError(f"state shapes {C_prev.shape}, {s_prev.shape} do not match hidden size {H}")
    if params.shared and x.shape[-1] not in (1, H):
        raise ValueError(f"shared-weight cell needs input size 1 or {H}, got {x.shape[-1]}")
    if not params.shared and x.shape[-1] != params.W_f.shape[0]:
        raise ValueError(f"input size {x.shape[-1]} does not match weights ({params.W_f.shape[0]})")
    a = _gate_inputs(x, s_prev, params)
    f, i, o = sigmoid(a["f"]), sigmoid(a["i"]), sigmoid(a["o"])
    c_tilde = np.tanh(a["c"])
    C = c_tilde * i + C_prev * f
    out = np.tanh(C) * o
    return out, (C, out)


class _Readout:
    def _init_readout(self, hidden: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(hidden)
        self.params["V"] = rng.uniform(-bound, bound, (hidden, 1))
        self.params["c"] = np.zeros(1)


class LstmRegressor(_Readout):
    """Window-to-next-value regressor built on :func:`lstm_cell`."""

    kind = "lstm"

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator, shared: bool = False):
        cell = LstmParams.random(input_size, hidden_size, rng, shared)
        self.shared = shared
        self.params: dict[str, np.ndarray] = dict(cell.arrays())
        self._init_readout(hidden_size, rng)
        self.grads: dict[str, np.ndarray] = {}

    def cell(self) -> LstmParams:
        return LstmParams(**{k: v for k, v in self.params.items() if k not in ("V", "c")})

    @property
    def hidden_size(self) -> int:
        return self.params["b_f"].shape[0]

    def forward(self, X: np.ndarray) -> np.ndarray:
        """Predict from windows ``X`` of shape ``(B, T, I)``; returns ``(B, 1)``."""
        p = self.cell()
        B, T, _ = X.shape
        C = np.zeros((B, self.hidden_size))
        s = np.zeros_like(C)
        self._cache = []
        for t in range(T):
            x = X[:, t, :]
            a = _gate_inputs(x, s, p)
            f, i, o = sigmoid(a["f"]), sigmoid(a["i"]), sigmoid(a["o"])
            g = np.tanh(a["c"])
            C_new = g * i + C * f
            tc = np.tanh(C_new)
            s_new = tc * o
            self._cache.append((x, s, C, f, g, i, o, tc))
            C, s = C_new, s_new
        self._s = s
        return s @ self.params["V"] + self.params["c"]

    def backward(self, dy: np.ndarray):
        P = self.params
        grads = {k: np.zeros_like(v) for k, v in P.items()}
        grads["V"] = self._s.T @ dy
        grads["c"] = dy.sum(axis=0)
        ds = dy @ P["V"].T
        dC = np.zeros_like(ds)
        for x, s_prev, C_prev, f, g, i, o, tc in reversed(self._cache):
            dC = dC + ds * o * (1 - tc**2)
            da = {
                "o": ds * tc * o * (1 - o),
                "f": dC * C_prev * f * (1 - f),
                "c": dC * i * (1 - g**2),
                "i": dC * g * i * (1 - i),
            }
            ds = np.zeros_like(ds)
            for gate, d in da.items():
                grads[f"b_{gate}"] += d.sum(axis=0)
                if self.shared:
                    grads[f"W_{gate}"] += (x + s_prev).T @ d
                    ds += d @ P[f"W_{gate}"].T
                else:
                    grads[f"W_{gate}"] += x.T @ d
                    grads[f"U_{gate}"] += s_prev.T @ d
                    ds += d @ P[f"U_{gate}"].T
            dC = dC * f
        self.grads = grads


class RnnRegressor(_Readout):
    """Single tanh recurrent layer with the same readout as the LSTM."""

    kind = "rnn"

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(hidden_size)
        self.params = {
            "W": rng.uniform(-bound, bound, (input_size, hidden_size)),
            "U": rng.uniform(-bound, bound, (hidden_size, hidden_size)),
            "b": rng.uniform(-bound, bound, hidden_size),
        }
        self._init_readout(hidden_size, rng)
        self.grads = {}

    @property
    def hidden_size(self) -> int:
        return self.params["b"].shape[0]

    def forward(self, X: np.ndarray) -> np.ndarray:
        P = self.params
        B, T, _ = X.shape
        s = np.zeros((B, self.hidden_size))
        self._cache = []
        for t in range(T):
            x = X[:, t, :]
            s_new = np.tanh(x @ P["W"] + s @ P["U"] + P["b"])
            self._cache.append((x, s, s_new))
            s = s_new
        self._s = s
        return s @ P["V"] + P["c"]

    def backward(self, dy: np.ndarray):
        P = self.params
        grads = {k: np.zeros_like(v) for k, v in P.items()}
        grads["V"] = self._s.T @ dy
        grads["c"] = dy.sum(axis=0)
        ds = dy @ P["V"].T
        for x, s_prev, s_new in reversed(self._cache):
            da = ds * (1 - s_new**2)
            grads["W"] += x.T @ da
            grads["U"] += s_prev.T @ da
            grads["b"] += da.sum(axis=0)
            ds = da @ P["U"].T
        self.grads = grads


@dataclass(frozen=True)
class TrackerConfig:
    """Hyperparameters for one-step-ahead tracking.

    ``iterations`` counts passes over the training windows.  ``batch_size``
    of ``None`` uses the whole training set per update.  ``norm_bounds``
    fixes the min-max range instead of taking it from the training split.
    """

    hidden_size: int = 100
    time_step: int = 4
    learning_rate: float = 0.01
    iterations: int = 150
    split: float = 0.7
    batch_size: int | None = 16
    optimizer: str = "sgd"
    norm_bounds: tuple[float, float] | None = None
    shared_weights: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("hidden_size", "time_step", "iterations"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.split < 1:
            raise ValueError("split must lie in (0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.norm_bounds is not None and not self.norm_bounds[1] >= self.norm_bounds[0]:
            raise ValueError("norm_bounds must be (low, high) with high >= low")


@dataclass(frozen=True)
class TrackingResult:
    """Predictions for the test slots ``n``.

    ``delta_h`` is NaN where the true gain is zero; ``gap`` flags those slots.
    ``bounds`` is the ``(low, span)`` pair used to normalise the series.
    """

    n: np.ndarray
    h_true: np.ndarray
    h_pred: np.ndarray
    delta_h: np.ndarray
    gap: np.ndarray
    loss_history: list[float] = field(default_factory=list)
    model: object = None
    bounds: tuple[float, float] = (0.0, 1.0)

    @property
    def mean_delta_h(self) -> float:
        return float(np.nanmean(self.delta_h)) if (~self.gap).any() else float("nan")


def _bounds(train: np.ndarray, cfg: TrackerConfig) -> tuple[float, float]:
    lo, hi = cfg.norm_bounds if cfg.norm_bounds is not None else (float(train.min()), float(train.max()))
    span = hi - lo
    if span == 0:
        # flat training data: shift only, keep the original units
        span = abs(lo) or 1.0
    return lo, span


def windows(x: np.ndarray, time_step: int, targets: range) -> tuple[np.ndarray, np.ndarray]:
    """Inputs ``x[n-T:n]`` and targets ``x[n]`` for each ``n`` in ``targets``."""
    idx = np.asarray(targets)
    X = np.stack([x[n - time_step:n] for n in idx])[:, :, None]
    return X, x[idx][:, None]


def make_regressor(kind: str, cfg: TrackerConfig, rng: np.random.Generator):
    if kind == "lstm":
        return LstmRegressor(1, cfg.hidden_size, rng, cfg.shared_weights)
    if kind == "rnn":
        return RnnRegressor(1, cfg.hidden_size, rng)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def _relative_error(h_true: np.ndarray, h_pred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gap = h_true == 0
    out = np.full(h_true.shape, np.nan)
    ok = ~gap
    out[ok] = np.abs(h_true[ok] - h_pred[ok]) / h_true[ok]
    return out, gap


def naive_prediction(h, cfg: TrackerConfig = TrackerConfig()) -> TrackingResult:
    """Repeat-last-value predictor on the same test slots as :func:`track_channel`."""
    h = np.asarray(h, dtype=float)
    n_train = _split_point(h, cfg)
    n = np.arange(n_train, h.size)
    pred = h[n - 1]
    d, gap = _relative_error(h[n], pred)
    return TrackingResult(n, h[n], pred, d, gap)


def _split_point(h: np.ndarray, cfg: TrackerConfig) -> int:
    if h.ndim != 1:
        raise ValueError("expected a scalar gain series")
    if h.size <= cfg.time_step + 1:
        raise ValueError(f"series of {h.size} samples is too short for time step {cfg.time_step}")
    n_train = int(round(cfg.split * h.size))
    if n_train <= cfg.time_step or n_train >= h.size:
        raise ValueError("split leaves no training windows or no test slots")
    return n_train


def track_channel(trace, cfg: TrackerConfig = TrackerConfig(), model_kind: str = "lstm") -> TrackingResult:
    """Train on the leading ``split`` fraction and predict every later slot one step ahead.

    Values are min-max normalised with bounds from the training part only.
    Test inputs are the true past gains (online tracking).
    """
    h = np.asarray(trace, dtype=float)
    n_train = _split_point(h, cfg)
    if not np.isfinite(h).all():
        raise ValueError("gain series contains non-finite values")
    lo, span = _bounds(h[:n_train], cfg)
    x = (h - lo) / span
    rng = np.random.default_rng(cfg.seed)
    model = make_regressor(model_kind, cfg, rng)
    X, Y = windows(x, cfg.time_step, range(cfg.time_step, n_train))
    opt = make_optimizer(cfg.optimizer, cfg.learning_rate)
    keys = list(model.params)
    batch = cfg.batch_size or X.shape[0]
    history = []
    for it in range(cfg.iterations):
        order = rng.permutation(X.shape[0])
        total = 0.0
        for start in range(0, X.shape[0], batch):
            idx = order[start:start + batch]
            err = model.forward(X[idx]) - Y[idx]
            loss = float(np.mean(err**2))
            if not np.isfinite(loss):
                raise TrainingDivergedError(it, loss)
            model.backward(2 * err / idx.size)
            opt.step([model.params[k] for k in keys], [model.grads[k] for k in keys])
            total += loss * idx.size
        history.append(total / X.shape[0])
    n = np.arange(n_train, h.size)
    Xt, _ = windows(x, cfg.time_step, n)
    pred = model.forward(Xt)[:, 0] * span + lo
    d, gap = _relative_error(h[n], pred)
    return TrackingResult(n, h[n], pred, d, gap, history, model, (lo, span))
