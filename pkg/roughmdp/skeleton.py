"""
Objetos determinísticos do limite:

- matriz fundamental M_t (dM = grad b(y^0) M dt) e sua inversa pelo adjunto
- ODE esqueleto  dXi^h = grad b(y^0)<Xi^h> dt + sigma(y^0) dh,  Xi^h_0 = 0
- covariância do processo gaussiano limite Xi = Phi(0, W^H)
- taxa do evento terminal {<d, xi_1> >= z}:  z^2 / (2 d' Sigma_1 d)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import linalg

from roughmdp.errors import NumericalError, ValidationError
from roughmdp.fbm import MAX_DENSE_BYTES, HurstParam, TimeGrid, _hurst, increment_autocovariance
from roughmdp.fields import CoefficientField
from roughmdp.rde import Trajectory, rk4_increment

logger = logging.getLogger(__name__)

INVERSE_WARN = 1e-8
INVERSE_ABORT = 1e-6
PSD_TOL = 1e-8
DEGENERATE_VARIANCE = 1e-12


@dataclass(frozen=True)
class FundamentalMatrix:
    grid: TimeGrid
    M: np.ndarray  # (n_nodes, e, e)
    M_inv: np.ndarray  # (n_nodes, e, e)

    def inverse_error(self) -> float:
        eye = np.eye(self.M.shape[-1])
        return float(np.max(np.abs(self.M @ self.M_inv - eye)))


@dataclass(frozen=True)
class LimitLaw:
    grid: TimeGrid
    H: float
    marginal: np.ndarray  # (n_nodes, e, e) Cov(Xi_t, Xi_t)
    terminal_covariance: np.ndarray  # (e, e)
    covariance: np.ndarray | None = None  # (n_nodes*e, n_nodes*e), ordem nó-major

    @property
    def marginal_variances(self) -> np.ndarray:
        return np.diagonal(self.marginal, axis1=-2, axis2=-1).copy()

    def marginal_frame(self) -> pd.DataFrame:
        var = self.marginal_variances
        df = pd.DataFrame(var, columns=[f"var_{i}" for i in range(var.shape[1])])
        df.insert(0, "t", self.grid.nodes)
        return df

    def terminal_frame(self) -> pd.DataFrame:
        e = self.terminal_covariance.shape[0]
        return pd.DataFrame(self.terminal_covariance, columns=[f"c{j}" for j in range(e)])

    def to_csv(self, out_dir: Path | str) -> list[Path]:
        out_dir = Path(out_dir)
        marg = out_dir / "limit_marginal_variances.csv"
        term = out_dir / "limit_terminal_covariance.csv"
        self.marginal_frame().to_csv(marg, index=False, float_format="%.17g")
        self.terminal_frame().to_csv(term, index=False, float_format="%.17g")
        return [marg, term]


@dataclass(frozen=True)
class EnergyControl:
    h: np.ndarray  # (n_nodes, d)
    energy: float
    variance: float


# =========================
# Matriz fundamental
# =========================
def solve_fundamental_matrix(coeff: CoefficientField, y0: Trajectory) -> FundamentalMatrix:
    """
    RK4 conjunto para (y^0, M, N), N a solução de dN = -N grad b(y^0) dt.
    y^0 é reintegrado junto para ter grad b nos estágios intermediários.
    """
    grid = y0.grid
    e = coeff.e
    if y0.values.ndim != 2 or y0.dim != e:
        raise ValidationError(f"y0 precisa ser uma trajetória em R^{e} sem eixo de lote", field="y0")

    def f(state):
        y = state[:e]
        M = state[e:e + e * e].reshape(e, e)
        N = state[e + e * e:].reshape(e, e)
        jac = coeff.grad_b(y)
        return np.concatenate([coeff.b(y), (jac @ M).ravel(), (-N @ jac).ravel()])

    eye = np.eye(e).ravel()
    state = np.concatenate([y0.values[0], eye, eye])
    M = np.empty((grid.n_nodes, e, e))
    N = np.empty((grid.n_nodes, e, e))
    ys = np.empty((grid.n_nodes, e))
    M[0] = N[0] = np.eye(e)
    ys[0] = state[:e]
    for n in range(grid.n_steps):
        state = state + rk4_increment(f, state, grid.mesh)
        if not np.all(np.isfinite(state)):
            raise NumericalError(f"matriz fundamental não finita no passo {n}", stage="solve_fundamental_matrix")
        ys[n + 1] = state[:e]
        M[n + 1] = state[e:e + e * e].reshape(e, e)
        N[n + 1] = state[e + e * e:].reshape(e, e)

    if not np.allclose(ys, y0.values, rtol=1e-10, atol=1e-12):
        raise ValidationError("y0 não corresponde a solve_base_ode na mesma grade", field="y0")

    fm = FundamentalMatrix(grid=grid, M=M, M_inv=N)
    err = fm.inverse_error()
    if err > INVERSE_ABORT:
        raise NumericalError(
            f"M_t N_t difere da identidade em {err:.3e} (> {INVERSE_ABORT})", stage="solve_fundamental_matrix"
        )
    if err > INVERSE_WARN:
        logger.warning("consistência M_t N_t = Id só até %.3e", err)
    return fm


# =========================
# ODE esqueleto
# =========================
def _as_control(h, grid: TimeGrid, d: int) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.ndim == 1 and d == 1:
        h = h[:, None]
    if h.shape[-2:] != (grid.n_nodes, d):
        raise ValidationError(f"controle com shape {h.shape}, esperado (..., {grid.n_nodes}, {d})", field="grid")
    if np.any(np.abs(h[..., 0, :]) > 1e-14):
        raise ValidationError("controle precisa começar em 0 (h_0 = 0)", field="h")
    return h


def solve_skeleton_ode(
    coeff: CoefficientField, y0: Trajectory, h, fm: FundamentalMatrix | None = None
) -> Trajectory:
    """Variação das constantes, regra do ponto à esquerda: Xi_t = M_t sum_{s_i<t} M_{s_i}^-1 sigma(y^0_{s_i}) dh_i."""
    grid = y0.grid
    fm = solve_fundamental_matrix(coeff, y0) if fm is None else fm
    if fm.grid != grid:
        raise ValidationError("matriz fundamental em outra grade", field="grid")
    h = _as_control(h, grid, coeff.d)

    K = fm.M_inv[:-1] @ coeff.sigma(y0.values[:-1])  # (n, e, d)
    dh = np.diff(h, axis=-2)
    U = np.cumsum(np.einsum("iac,...ic->...ia", K, dh), axis=-2)
    xi = np.zeros(h.shape[:-2] + (grid.n_nodes, coeff.e))
    xi[..., 1:, :] = np.einsum("nab,...nb->...na", fm.M[1:], U)
    return Trajectory(grid=grid, values=xi)


def solve_skeleton_ode_direct(coeff: CoefficientField, y0: Trajectory, h) -> Trajectory:
    """Integração direta (RK4, h linear por partes) de (y^0, Xi^h) em conjunto."""
    grid = y0.grid
    e = coeff.e
    h = _as_control(h, grid, coeff.d)
    if h.ndim != 2:
        raise ValidationError("integração direta aceita um controle por vez", field="h")
    hdot = np.diff(h, axis=0) / grid.mesh

    state = np.concatenate([y0.values[0], np.zeros(e)])
    xi = np.zeros((grid.n_nodes, e))
    for n in range(grid.n_steps):
        rate = hdot[n]

        def f(s, rate=rate):
            y, x = s[:e], s[e:]
            return np.concatenate([coeff.b(y), coeff.grad_b(y) @ x + coeff.sigma(y) @ rate])

        state = state + rk4_increment(f, state, grid.mesh)
        xi[n + 1] = state[e:]
    return Trajectory(grid=grid, values=xi)


# =========================
# Lei limite
# =========================
def _check_psd(block: np.ndarray, what: str) -> None:
    eig = linalg.eigvalsh(block)
    scale = max(float(np.max(np.abs(eig))), 0.0)
    if eig.min() < -PSD_TOL * max(scale, 1e-300):
        raise NumericalError(f"{what} não é PSD (autovalor mínimo {eig.min():.3e})", stage="limit_covariance")


def _strict_lower_toeplitz(gamma: np.ndarray, K: np.ndarray, workers: int | None = None) -> np.ndarray:
    # P[n] = sum_{i<n} gamma(n-i) K_i sem montar a matriz n x n
    n = K.shape[0]
    col = np.concatenate([[0.0], gamma[1:n]])
    if not np.any(col):
        return np.zeros_like(K)
    flat = linalg.matmul_toeplitz((col, np.zeros(n)), K.reshape(n, -1), check_finite=False, workers=workers)
    return flat.reshape(K.shape)


def limit_covariance(
    coeff: CoefficientField,
    y0: Trajectory,
    grid: TimeGrid,
    H: HurstParam | float,
    *,
    fm: FundamentalMatrix | None = None,
    full: bool = True,
    workers: int | None = None,
) -> LimitLaw:
    """
    Cov(Xi_s, Xi_t) = sum_{i,j} F(s,s_i) E[dw_i dw_j] F(t,s_j)',
    F(t,s) = 1_{s<t} M_t M_s^-1 sigma(y^0_s), coordenadas do driver independentes.

    Com full=False só as marginais por nó e o bloco terminal são montados:
    a Gram dos incrementos é Toeplitz, então memória O(n e d) e custo O(n log n).
    `workers` vai para a FFT do produto Toeplitz.
    A covariância completa (full=True) é densa e tem limite de MAX_DENSE_BYTES.
    """
    h = _hurst(H)
    if y0.grid != grid:
        raise ValidationError("y0 e grade diferentes", field="grid")
    if full:
        n_bytes = 4 * 8 * (grid.n_nodes * coeff.e) ** 2
        if n_bytes > MAX_DENSE_BYTES:
            raise NumericalError(
                f"covariância completa precisa de ~{n_bytes / 2**30:.1f} GiB para m={grid.m}; "
                "use full=False (marginais e bloco terminal)",
                stage="limit_covariance",
            )
    fm = solve_fundamental_matrix(coeff, y0) if fm is None else fm

    try:
        gamma = increment_autocovariance(grid, h)
        K = fm.M_inv[:-1] @ coeff.sigma(y0.values[:-1])  # (n, e, d)

        # Var(U_{n+1}) = Var(U_n) + C_n + C_n' + gamma(0) K_n K_n',  C_n = P_n K_n'
        P = _strict_lower_toeplitz(gamma, K, workers)
        C = np.einsum("nac,nbc->nab", P, K)
        step = C + np.swapaxes(C, -1, -2) + gamma[0] * np.einsum("nac,nbc->nab", K, K)
        var_u = np.zeros((grid.n_nodes, coeff.e, coeff.e))
        var_u[1:] = np.cumsum(step, axis=0)
        marginal = fm.M @ var_u @ np.swapaxes(fm.M, -1, -2)
        marginal = 0.5 * (marginal + np.swapaxes(marginal, -1, -2))
        terminal = marginal[-1].copy()
        _check_psd(terminal, "covariância terminal")

        covariance = None
        if full:
            G = linalg.toeplitz(gamma)
            Q = np.einsum("iac,ij,jbc->iajb", K, G, K)
            cu = np.zeros((grid.n_nodes, coeff.e, grid.n_nodes, coeff.e))
            cu[1:, :, 1:, :] = np.cumsum(np.cumsum(Q, axis=0), axis=2)
            cov = np.einsum("nab,nbpc,pdc->napd", fm.M, cu, fm.M)
            covariance = cov.reshape(grid.n_nodes * coeff.e, grid.n_nodes * coeff.e)
            covariance = 0.5 * (covariance + covariance.T)
            _check_psd(covariance, "covariância do processo limite")
    except MemoryError as exc:
        raise NumericalError(f"memória insuficiente para m={grid.m}, e={coeff.e}", stage="limit_covariance") from exc

    logger.debug("limit_covariance: m=%d H=%.4f terminal=%s", grid.m, h, terminal.tolist())
    return LimitLaw(grid=grid, H=h, marginal=marginal, terminal_covariance=terminal, covariance=covariance)


def event_variance(limit: LimitLaw, direction) -> float:
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    if d.shape != (limit.terminal_covariance.shape[0],):
        raise ValidationError(f"direção com shape {d.shape}, esperado ({limit.terminal_covariance.shape[0]},)",
                              field="event.direction")
    return float(d @ limit.terminal_covariance @ d)


def terminal_rate(limit: LimitLaw, direction, z: float) -> float:
    """Taxa do evento {<direction, xi_1> >= z}: z^2 / (2 v), v = d' Sigma_1 d."""
    v = event_variance(limit, direction)
    if v <= DEGENERATE_VARIANCE:
        raise ValidationError(
            f"variância do evento v={v:.3e} degenerada: direção não alcançável", field="event.direction"
        )
    return float(z) ** 2 / (2.0 * v)


def minimal_energy_control(
    coeff: CoefficientField,
    y0: Trajectory,
    direction,
    z: float,
    *,
    H: HurstParam | float = 0.5,
    fm: FundamentalMatrix | None = None,
) -> EnergyControl:
    """
    Só para H = 1/2 (energia = int |h'|^2 / 2): controle de energia mínima com
    <direction, Xi^h_1> = z.  h'_s = (z / v) F(1,s)' d,  energia = z^2 / (2 v).
    """
    if _hurst(H) != 0.5:
        raise ValidationError("controle de energia mínima só está disponível para H = 1/2", field="H")
    grid = y0.grid
    fm = solve_fundamental_matrix(coeff, y0) if fm is None else fm
    d = np.atleast_1d(np.asarray(direction, dtype=float))

    F = fm.M[-1] @ fm.M_inv[:-1] @ coeff.sigma(y0.values[:-1])  # (n, e, d)
    g = np.einsum("nab,a->nb", F, d)
    v = float(np.sum(g**2) * grid.mesh)
    if v <= DEGENERATE_VARIANCE:
        raise ValidationError(f"variância do evento v={v:.3e} degenerada", field="event.direction")
    dh = (float(z) / v) * g * grid.mesh
    h = np.zeros((grid.n_nodes, coeff.d))
    h[1:] = np.cumsum(dh, axis=0)
    energy = 0.5 * float(np.sum(dh**2)) / grid.mesh
    return EnergyControl(h=h, energy=energy, variance=v)
