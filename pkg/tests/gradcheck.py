"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

STEP = 1e-4
REL_TOL = 1e-4
ABS_TOL = 1e-7


def numeric_gradient(f, x, h=STEP):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def gradient_agrees(analytic, numeric) -> bool:
    """Every component within the relative tolerance or the absolute one."""
    err = np.abs(np.asarray(analytic) - np.asarray(numeric))
    rel = err / np.maximum(np.abs(numeric), 1e-300)
    return bool(np.all((err <= ABS_TOL) | (rel <= REL_TOL)))


def check_model(model, X, y, loss_kind, params):
    from qnnbench.training import loss_and_grad

    def f(p):
        return loss_and_grad(loss_kind, model.predict(X, p), y)[0]

    _, _, g = model.value_and_grad(X, params, lambda pred: loss_and_grad(loss_kind, pred, y))
    return g, numeric_gradient(f, params)


def closest_relu_kink(net, X, params) -> float:
    """Smallest |pre-activation| over a dense net's hidden layers; near zero the derivative jumps."""
    h, closest = X, np.inf
    for W, b in net.unflatten(params)[:-1]:
        z = h @ W + b
        closest = min(closest, float(np.abs(z).min()))
        h = np.maximum(z, 0)
    return closest
