"""Central finite-difference gradient checks shared by the layer and acceptance tests."""

import numpy as np

from mobilifi.neural.cdrn import Cdrn, CdrnConfig, nmse_loss
from mobilifi.neural.layers import BatchNorm2d, Conv2d, Dense, ReLU, Sigmoid, Tanh
from mobilifi.neural.recurrent import LstmRegressor, RnnRegressor

STEP = 1e-5
# gradients whose analytic and numeric norms both sit below this are structurally zero
# (e.g. a bias feeding batch norm) and only carry finite-difference round-off
ZERO_NORM = 1e-8


def numeric_grad(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        up = f()
        x[i] = orig - step
        down = f()
        x[i] = orig
        g[i] = (up - down) / (2 * step)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    na, nn = np.linalg.norm(analytic), np.linalg.norm(numeric)
    if max(na, nn) < ZERO_NORM:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / max(na, nn))


def check_layer(layer, x: np.ndarray, rng: np.random.Generator, train: bool = True) -> dict[str, float]:
    """Relative errors for the input gradient and every parameter of ``layer``."""
    G = rng.standard_normal(layer.forward(x, train).shape)

    def loss():
        return float(np.sum(layer.forward(x, train) * G))

    loss()
    dx = layer.backward(G)
    errors = {"input": rel_error(dx, numeric_grad(loss, x))}
    analytic = {k: v.copy() for k, v in layer.grads.items()}
    for key, arr in layer.params.items():
        errors[key] = rel_error(analytic[key], numeric_grad(loss, arr))
    return errors


def check_cdrn(cfg: CdrnConfig, batch: int, rng: np.random.Generator) -> dict[str, float]:
    model = Cdrn.init(cfg)
    # zero-initialised output convolutions would hide most paths; perturb them
    for _, layer in model.layers():
        for arr in layer.params.values():
            arr += 0.1 * rng.standard_normal(arr.shape)
    L = 5
    P = rng.standard_normal((batch, 2, L)) + 2.0
    target = rng.standard_normal((batch, L)) + 2.0
    model.scale = 1.3

    def loss():
        return nmse_loss(model.forward(P, train=True), target)[0]

    _, grad = nmse_loss(model.forward(P, train=True), target)
    dP = model.backward(grad)
    errors = {"input": rel_error(dP, numeric_grad(loss, P))}
    analytic = {(name, k): layer.grads[k].copy() for name, layer in model.layers() for k in layer.params}
    for name, layer in model.layers():
        for key, arr in layer.params.items():
            errors[f"{name}.{key}"] = rel_error(analytic[(name, key)], numeric_grad(loss, arr))
    return errors


def check_regressor(model, X: np.ndarray, rng: np.random.Generator) -> dict[str, float]:
    G = rng.standard_normal((X.shape[0], 1))

    def loss():
        return float(np.sum(model.forward(X) * G))

    loss()
    model.backward(G)
    analytic = {k: v.copy() for k, v in model.grads.items()}
    return {k: rel_error(analytic[k], numeric_grad(loss, arr)) for k, arr in model.params.items()}


def kink_free(rng, shape, margin=1e-3):
    """Random values kept at least ``margin`` away from zero (ReLU kink)."""
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin * 2, x)


def random_check(kind: str, rng: np.random.Generator) -> dict[str, float]:
    """One randomized gradient check of the named layer or model."""
    if kind == "dense":
        n_in, n_out, b = rng.integers(1, 6, 3)
        return check_layer(Dense(n_in, n_out, rng), rng.standard_normal((b, n_in)), rng)
    if kind == "conv":
        c_in, c_out, b = rng.integers(1, 4, 3)
        k = int(rng.choice([1, 3, 5]))
        h, w = rng.integers(2, 6, 2)
        layer = Conv2d(c_in, c_out, k, rng)
        layer.params["b"] = rng.standard_normal(c_out)
        return check_layer(layer, rng.standard_normal((b, c_in, h, w)), rng)
    if kind in ("bn_train", "bn_eval"):
        c, b, h, w = rng.integers(1, 4), rng.integers(2, 4), rng.integers(1, 4), rng.integers(2, 5)
        layer = BatchNorm2d(c)
        layer.params["gamma"] = rng.uniform(0.5, 2.0, c)
        layer.params["beta"] = rng.standard_normal(c)
        layer.running_mean = rng.standard_normal(c)
        layer.running_var = rng.uniform(0.5, 2.0, c)
        x = rng.standard_normal((b, c, h, w)) * 2 + 1
        return check_layer(layer, x, rng, train=kind == "bn_train")
    if kind in ("relu", "sigmoid", "tanh"):
        layer = {"relu": ReLU, "sigmoid": Sigmoid, "tanh": Tanh}[kind]()
        return check_layer(layer, kink_free(rng, tuple(rng.integers(1, 5, 3))), rng)
    if kind == "cdrn":
        cfg = CdrnConfig(D=int(rng.integers(1, 3)), layers_per_block=int(rng.integers(1, 4)), filters=2, kernel=3)
        return check_cdrn(cfg, int(rng.integers(2, 4)), rng)
    if kind in ("lstm", "lstm_shared"):
        shared = kind == "lstm_shared"
        H = int(rng.integers(1, 5))
        I = H if shared else int(rng.integers(1, 4))
        model = LstmRegressor(I, H, rng, shared=shared)
        return check_regressor(model, rng.standard_normal((int(rng.integers(1, 4)), int(rng.integers(1, 5)), I)), rng)
    if kind == "rnn":
        H, I = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        model = RnnRegressor(I, H, rng)
        return check_regressor(model, rng.standard_normal((int(rng.integers(1, 4)), int(rng.integers(1, 5)), I)), rng)
    raise ValueError(kind)


KINDS = ("dense", "conv", "bn_train", "bn_eval", "relu", "sigmoid", "tanh", "cdrn", "lstm", "lstm_shared", "rnn")
