"""Two-qubit ion-photon states.

Basis order is |ion, photon> with ion |0> = D', |1> = D and photon |0> = V,
|1> = H, i.e. {|D'V>, |D'H>, |DV>, |DH>}. The ion is the first tensor factor.
"""

from __future__ import annotations

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (I2, X, Y, Z)
_YY = np.kron(Y, Y)


def bell_state(theta: float = 0.0) -> np.ndarray:
    """(|D'V> + e^{i theta} |DH>) / sqrt(2) as a ket."""
    psi = np.zeros(4, complex)
    psi[0] = 1 / np.sqrt(2)
    psi[3] = np.exp(1j * theta) / np.sqrt(2)
    return psi


def density(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, complex)
    return np.outer(psi, psi.conj())


def werner(p: float, theta: float = 0.0) -> np.ndarray:
    return p * density(bell_state(theta)) + (1 - p) * np.eye(4) / 4


def ion_z_rotation(phi: float) -> np.ndarray:
    """diag(1, e^{i phi}) on the ion, identity on the photon."""
    return np.kron(np.diag([1.0, np.exp(1j * phi)]), I2)


def su2(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Rz(alpha) Ry(beta) Rz(gamma)."""
    rz = lambda a: np.diag([np.exp(-0.5j * a), np.exp(0.5j * a)])
    c, s = np.cos(beta / 2), np.sin(beta / 2)
    ry = np.array([[c, -s], [s, c]], complex)
    return rz(alpha) @ ry @ rz(gamma)


def photon_unitary(params) -> np.ndarray:
    return np.kron(I2, su2(*params))


def is_state(rho: np.ndarray, atol: float = 1e-9) -> bool:
    rho = np.asarray(rho)
    if rho.shape != (4, 4):
        return False
    if not np.allclose(rho, rho.conj().T, atol=1e-10) or abs(np.trace(rho) - 1) > 1e-10:
        return False
    return bool(np.linalg.eigvalsh(rho).min() >= -atol)


def psd_sqrt(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Uhlmann fidelity (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2. Kets are accepted."""
    rho = np.asarray(rho, complex)
    sigma = np.asarray(sigma, complex)
    if sigma.ndim == 1:
        return float(np.clip(np.real(sigma.conj() @ rho @ sigma), 0, 1))
    if rho.ndim == 1:
        return float(np.clip(np.real(rho.conj() @ sigma @ rho), 0, 1))
    s = np.linalg.svd(psd_sqrt(rho) @ psd_sqrt(sigma), compute_uv=False)
    return float(np.clip(np.sum(s) ** 2, 0, 1))


def concurrence(rho: np.ndarray) -> float:
    """Wootters concurrence."""
    rho = np.asarray(rho, complex)
    tilde = _YY @ rho.conj() @ _YY
    lam = np.linalg.eigvals(rho @ tilde)
    r = np.sort(np.sqrt(np.clip(lam.real, 0, None)))[::-1]
    return float(max(0.0, r[0] - r[1] - r[2] - r[3]))
