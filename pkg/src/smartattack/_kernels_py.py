"""Pure-numpy reference kernels; the compiled core mirrors these signatures exactly.

All arrays are float64. Sequences are laid out ``(batch, time, channels)``.
"""

import numpy as np


def im2col(x, k, pad):
    """Unfold ``x`` (B, T, C) into (B, T + 2*pad - k + 1, k*C) windows, tap-major."""
    b, t, c = x.shape
    xp = np.zeros((b, t + 2 * pad, c))
    xp[:, pad:pad + t] = x
    t_out = t + 2 * pad - k + 1
    cols = np.empty((b, t_out, k * c))
    for i in range(k):
        cols[:, :, i * c:(i + 1) * c] = xp[:, i:i + t_out]
    return cols


def col2im(cols, t, c, k, pad):
    """Adjoint of :func:`im2col`."""
    b, t_out, _ = cols.shape
    xp = np.zeros((b, t + 2 * pad, c))
    for i in range(k):
        xp[:, i:i + t_out] += cols[:, :, i * c:(i + 1) * c]
    return np.ascontiguousarray(xp[:, pad:pad + t])


def bone_lengths(x, child, parent):
    """Per-row bone lengths of ``x`` (N, 3*J) -> (N, len(child))."""
    j = x.reshape(x.shape[0], -1, 3)
    d = j[:, child] - j[:, parent]
    return np.sqrt(np.einsum("nbk,nbk->nb", d, d))


def bone_lengths_vjp(x, lengths, g, child, parent):
    """Pull ``g`` (N, B) back through :func:`bone_lengths`; zero-length bones pass no gradient."""
    n = x.shape[0]
    j = x.reshape(n, -1, 3)
    d = j[:, child] - j[:, parent]
    safe = np.where(lengths > 0, lengths, 1.0)
    coef = np.where(lengths > 0, g / safe, 0.0)[:, :, None] * d
    out = np.zeros_like(j)
    np.add.at(out, (slice(None), child), coef)
    np.add.at(out, (slice(None), parent), -coef)
    return out.reshape(x.shape)


def forward_diff(x, n):
    """Apply ``x[t+1] - x[t]`` along axis 1, ``n`` times."""
    out = x
    for _ in range(n):
        out = out[:, 1:] - out[:, :-1]
    return np.ascontiguousarray(out)


def forward_diff_adjoint(g, n):
    """Transpose of :func:`forward_diff`: (B, T-n, D) -> (B, T, D)."""
    out = g
    for _ in range(n):
        b, t, d = out.shape
        up = np.zeros((b, t + 1, d))
        up[:, 1:] += out
        up[:, :-1] -= out
        out = up
    return out
