"""Periodic differentiation kernels shared by the field and form modules.

Arrays live on a "compact" shape: one entry per real axis
(x_1, y_1, ..., x_n, y_n), each either N or 1.  A length-1 axis means the
array is constant along that axis; every operator here treats it exactly
that way (zero derivative, trivial FFT).
"""
from __future__ import annotations

import numpy as np

MODES = ("spectral", "finite_difference")


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown differentiation mode {mode!r}; expected one of {MODES}")
    return mode


def wavenumbers(shape):
    """Integer frequency arrays, one per axis, shaped for broadcasting."""
    ks = []
    nd = len(shape)
    for a, size in enumerate(shape):
        k = np.rint(np.fft.fftfreq(size, d=1.0 / size)).astype(np.int64) if size > 1 else np.zeros(1, np.int64)
        view = [1] * nd
        view[a] = size
        ks.append(k.reshape(view))
    return ks


def first_symbols(shape, N: int, mode: str):
    """Fourier symbols of d/dz_j and d/dzbar_j for every complex coordinate.

    Nyquist frequencies are zeroed in spectral mode so that all
    odd-order multipliers stay real-to-real.
    """
    ks = wavenumbers(shape)
    h = 1.0 / N
    d, dbar = [], []
    for j in range(len(shape) // 2):
        kx, ky = ks[2 * j], ks[2 * j + 1]
        if mode == "spectral":
            sx = np.where(np.abs(kx) * 2 == N, 0, 2 * np.pi * kx)
            sy = np.where(np.abs(ky) * 2 == N, 0, 2 * np.pi * ky)
        else:
            sx = np.sin(2 * np.pi * kx * h) / h
            sy = np.sin(2 * np.pi * ky * h) / h
        # d/dz = (d/dx - i d/dy)/2 ; symbol of d/dx is i*sx
        d.append(0.5 * (1j * sx + sy))
        dbar.append(0.5 * (1j * sx - sy))
    return d, dbar


def drop_nyquist(data, N: int):
    """Remove every Fourier mode with a Nyquist wavenumber on some axis.

    These modes lie outside the range of the spectral Hessian, so a
    collocation equation driven by it can only be solved on the rest.
    """
    data = np.asarray(data, dtype=float)
    keep = np.ones(data.shape, dtype=bool)
    for k in wavenumbers(data.shape):
        keep = keep & (np.abs(k) * 2 != N)
    if keep.all():
        return data
    return np.fft.ifftn(np.fft.fftn(data) * keep).real


def hessian_symbol(shape, N: int, mode: str):
    """Symbol matrix S[..., j, k] of the complex Hessian d^2/dz_j dzbar_k."""
    n = len(shape) // 2
    d, dbar = first_symbols(shape, N, mode)
    full = np.broadcast_shapes(*[np.shape(x) for x in d + dbar])
    S = np.zeros(full + (n, n), dtype=complex)
    ks = wavenumbers(shape)
    h = 1.0 / N
    for j in range(n):
        for k in range(n):
            if j != k:
                S[..., j, k] = d[j] * dbar[k]
            elif mode == "finite_difference":
                cx = (2 * np.cos(2 * np.pi * ks[2 * j] * h) - 2) / h**2
                cy = (2 * np.cos(2 * np.pi * ks[2 * j + 1] * h) - 2) / h**2
                S[..., j, j] = 0.25 * (cx + cy)
            else:
                S[..., j, j] = d[j] * dbar[j]
    return S


def _shift(a, axis, step):
    # value at x + step*h along `axis`
    if a.shape[axis] == 1:
        return a
    return np.roll(a, -step, axis=axis)


def _dx(a, axis, N):
    if a.shape[axis] == 1:
        return np.zeros_like(a)
    return (_shift(a, axis, 1) - _shift(a, axis, -1)) * (N / 2.0)


def _dxx(a, axis, N):
    if a.shape[axis] == 1:
        return np.zeros_like(a)
    return (_shift(a, axis, 1) - 2 * a + _shift(a, axis, -1)) * float(N * N)


def hessian(data, N: int, mode: str):
    """Complex Hessian d^2 u / dz_j dzbar_k of a real compact array."""
    check_mode(mode)
    data = np.asarray(data, dtype=float)
    nd = data.ndim
    n = nd // 2
    H = np.zeros(data.shape + (n, n), dtype=complex)
    if mode == "spectral":
        uh = np.fft.fftn(data)
        d, dbar = first_symbols(data.shape, N, mode)
        for j in range(n):
            for k in range(j, n):
                # Nyquist modes are dropped so that the Hessian is the exact
                # composition of the first-order operators (discrete Stokes)
                H[..., j, k] = np.fft.ifftn(d[j] * dbar[k] * uh)
    else:
        first = [_dx(data, a, N) for a in range(nd)]
        for j in range(n):
            xj, yj = 2 * j, 2 * j + 1
            H[..., j, j] = 0.25 * (_dxx(data, xj, N) + _dxx(data, yj, N))
            for k in range(j + 1, n):
                xk, yk = 2 * k, 2 * k + 1
                dxx = _dx(first[xj], xk, N)
                dyy = _dx(first[yj], yk, N)
                dxy = _dx(first[xj], yk, N)
                dyx = _dx(first[yj], xk, N)
                H[..., j, k] = 0.25 * (dxx + dyy + 1j * (dxy - dyx))
    for j in range(n):
        H[..., j, j] = H[..., j, j].real
        for k in range(j + 1, n):
            H[..., k, j] = np.conj(H[..., j, k])
    return H


def partial(data, N: int, j: int, bar: bool, mode: str):
    """d/dz_j (or d/dzbar_j when ``bar``) of a complex compact array."""
    check_mode(mode)
    data = np.asarray(data, dtype=complex)
    if mode == "spectral":
        d, dbar = first_symbols(data.shape, N, mode)
        sym = dbar[j] if bar else d[j]
        return np.fft.ifftn(sym * np.fft.fftn(data))
    ux = _dx(data, 2 * j, N)
    uy = _dx(data, 2 * j + 1, N)
    return 0.5 * (ux + 1j * uy) if bar else 0.5 * (ux - 1j * uy)


def apply_symbol(data, symbol):
    """Real part of the Fourier multiplier ``symbol`` applied to ``data``."""
    return np.fft.ifftn(symbol * np.fft.fftn(data)).real


def _axis_operator(shape, axis, D):
    import scipy.sparse as sp

    mats = [sp.identity(s, format="csr") for s in shape]
    mats[axis] = D
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def fd_hessian_matrices(shape, N: int):
    """Sparse matrices ``H[j][k]`` with ``vec(hessian(u)[..., j, k]) = H[j][k] @ vec(u)``.

    Finite-difference mode only; vectors are C-ordered over the compact shape.
    """
    import scipy.sparse as sp

    nd = len(shape)
    n = nd // 2
    D1, D2 = [], []
    for a, s in enumerate(shape):
        if s == 1:
            z = sp.csr_matrix((1, 1))
            d1 = d2 = z
        else:
            plus = sp.diags([np.ones(s - 1), np.ones(1)], [1, -(s - 1)], shape=(s, s))
            minus = plus.T
            d1 = (plus - minus) * (N / 2.0)
            d2 = (plus + minus - 2 * sp.identity(s)) * float(N * N)
        D1.append(_axis_operator(shape, a, sp.csr_matrix(d1)))
        D2.append(_axis_operator(shape, a, sp.csr_matrix(d2)))
    H = [[None] * n for _ in range(n)]
    for j in range(n):
        xj, yj = 2 * j, 2 * j + 1
        H[j][j] = (0.25 * (D2[xj] + D2[yj])).astype(complex)
        for k in range(j + 1, n):
            xk, yk = 2 * k, 2 * k + 1
            H[j][k] = 0.25 * ((D1[xk] @ D1[xj] + D1[yk] @ D1[yj]) + 1j * (D1[yk] @ D1[xj] - D1[xk] @ D1[yj]))
            H[k][j] = H[j][k].conj()
    return H
