"""Fourth-order finite-difference stencils for callables and gridded arrays."""

import numpy as np

_EPS = np.finfo(float).eps

# Step exponents that balance truncation (h^4) against roundoff for the
# fourth-order stencils below: eps^(1/5) for first, eps^(1/6) for second
# derivatives.
FIRST_STEP = _EPS ** 0.2
SECOND_STEP = _EPS ** (1.0 / 6.0)


def _scaled_step(x, base):
    return base * max(1.0, float(np.max(np.abs(x))) if np.size(x) else 1.0)


def jacobian(F, x, h=None):
    """Return dF with dF[p] = dF/dx_p at x, for an array-valued callable F."""
    x = np.asarray(x, dtype=float)
    h = _scaled_step(x, FIRST_STEP) if h is None else h
    out = []
    for p in range(x.size):
        e = np.zeros_like(x)
        e[p] = h
        fp2, fp1 = np.asarray(F(x + 2 * e)), np.asarray(F(x + e))
        fm1, fm2 = np.asarray(F(x - e)), np.asarray(F(x - 2 * e))
        out.append((-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h))
    return np.stack(out)


def hessian(F, x, h=None):
    """Return d2F with d2F[p, r] = d^2F/dx_p dx_r at x (symmetric in p, r)."""
    x = np.asarray(x, dtype=float)
    h = _scaled_step(x, SECOND_STEP) if h is None else h
    d = x.size
    f0 = np.asarray(F(x), dtype=float)
    out = np.zeros((d, d) + f0.shape)
    w = (-1.0, 8.0, -8.0, 1.0)
    s = (2, 1, -1, -2)
    for p in range(d):
        ep = np.zeros(d)
        ep[p] = h
        vals = [np.asarray(F(x + k * ep)) for k in (2, 1, -1, -2)]
        out[p, p] = (-vals[0] + 16.0 * vals[1] - 30.0 * f0 + 16.0 * vals[2] - vals[3]) / (12.0 * h * h)
        for r in range(p + 1, d):
            er = np.zeros(d)
            er[r] = h
            acc = np.zeros_like(f0)
            for wi, si in zip(w, s):
                for wj, sj in zip(w, s):
                    acc = acc + wi * wj * np.asarray(F(x + si * ep + sj * er))
            out[p, r] = out[r, p] = acc / (144.0 * h * h)
    return out


def grid_diff(values, axis, spacing, periodic=False):
    """Fourth-order first derivative along one axis of a gridded array.

    Interior nodes use the centered five-point stencil; the two outermost
    nodes on each side of a non-periodic axis use one-sided fourth-order
    closures so the result has the same shape as the input.
    """
    f = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    if periodic:
        d = (-np.roll(f, -2, 0) + 8.0 * np.roll(f, -1, 0)
             - 8.0 * np.roll(f, 1, 0) + np.roll(f, 2, 0)) / (12.0 * spacing)
        return np.moveaxis(d, 0, axis)
    n = f.shape[0]
    if n < 5:
        raise ValueError("need at least 5 nodes per axis for fourth-order stencils")
    d = np.empty_like(f)
    d[2:-2] = (-f[4:] + 8.0 * f[3:-1] - 8.0 * f[1:-3] + f[:-4]) / (12.0 * spacing)
    d[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12.0 * spacing)
    d[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12.0 * spacing)
    d[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12.0 * spacing)
    d[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12.0 * spacing)
    return np.moveaxis(d, 0, axis)


def grid_jet(values, spacing, periodic):
    """Gradient, Hessian and third-derivative tensor of a gridded scalar.

    Derivatives are nested first-derivative stencils, so the third
    derivative is not exactly symmetric; it is symmetrized here.
    Returned arrays carry the derivative indices last.
    """
    dim = np.ndim(values)
    grad = [grid_diff(values, p, spacing[p], periodic[p]) for p in range(dim)]
    hess = [[None] * dim for _ in range(dim)]
    for p in range(dim):
        for r in range(p, dim):
            hpr = grid_diff(grad[p], r, spacing[r], periodic[r])
            if r != p:
                hpr = 0.5 * (hpr + grid_diff(grad[r], p, spacing[p], periodic[p]))
            hess[p][r] = hess[r][p] = hpr
    third = np.empty(np.shape(values) + (dim, dim, dim))
    for p in range(dim):
        for r in range(dim):
            for s in range(dim):
                third[..., p, r, s] = grid_diff(hess[p][r], s, spacing[s], periodic[s])
    # average over the permutations so the tensor is symmetric
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    base = third.ndim - 3
    sym = sum(np.transpose(third, tuple(range(base)) + tuple(base + q for q in pm)) for pm in perms) / 6.0
    U = np.stack(grad, axis=-1)
    X = np.stack([np.stack(row, axis=-1) for row in hess], axis=-2)
    return U, X, sym
