"""Shared test utilities: finite-difference gradient checking."""

import numpy as np

from hdsa.autodiff import GradTape, Tensor


def numeric_grad(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of scalar-valued f at x (mutates a copy)."""
    x = x.copy()
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def check_gradients(build, arrays, h=1e-3, tol=1e-4, seed=0):
    """Compare tape gradients of ``build(*tensors)`` against central differences.

    ``build`` maps float64 Tensors to an output Tensor of any shape; the
    output is contracted to a scalar with fixed random weights so every
    output element influences the check. Asserts max relative error < tol
    for every input.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with GradTape() as tape:
        out = build(*tensors)
        rng = np.random.default_rng(seed)
        w = rng.random(out.shape) + 0.5
        loss_val = float((out.data * w).sum())
        # contract via the tape so the backward pass is exercised end to end
        from hdsa import autodiff as ad

        loss = ad.tensor_sum(ad.mul(out, Tensor(w)))
    assert np.isclose(loss.item(), loss_val)
    tape.backward(loss)

    for idx, (arr, t) in enumerate(zip(arrays, tensors)):
        def scalar(x, idx=idx):
            probe = [a.copy() for a in arrays]
            probe[idx] = x
            outs = build(*[Tensor(p) for p in probe])
            return float((outs.data * w).sum())

        num = numeric_grad(scalar, arr, h=h)
        ana = t.grad if t.grad is not None else np.zeros_like(arr)
        denom = max(float(np.max(np.abs(num))), 1.0)
        err = float(np.max(np.abs(ana - num))) / denom
        assert err < tol, f"input {idx}: max rel err {err:.3e} >= {tol}"
