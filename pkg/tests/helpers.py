"""Shared test utilities: central finite differences against the tape's gradients."""
import numpy as np

from tikuda import autodiff as ad


def numeric_grad(f, arrays, eps=1e-5):
    """Central differences of scalar ``f()`` w.r.t. each array in ``arrays`` (perturbed in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        for i in np.ndindex(a.shape):
            orig = a[i]
            a[i] = orig + eps
            fp = f()
            a[i] = orig - eps
            fm = f()
            a[i] = orig
            g[i] = (fp - fm) / (2 * eps)
        out.append(g)
    return out


def gradcheck(build, inputs, eps=1e-5):
    """Largest relative error between tape and finite-difference gradients.

    ``build(*values)`` returns a scalar Value; ``inputs`` are numpy arrays.
    Errors are scaled by ``max(1, |numeric|)``.
    """
    vals = [ad.parameter(x.copy()) for x in inputs]
    loss = build(*vals)
    ad.backward(loss)
    analytic = [v.grad.copy() for v in vals]

    def f():
        return float(build(*[ad.Value(v.data) for v in vals]).data.reshape(-1)[0])

    numeric = numeric_grad(f, [v.data for v in vals], eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        worst = max(worst, float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(n)))) if a.size else 0.0)
    return worst
