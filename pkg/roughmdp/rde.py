"""
Solvers das RDEs:

    dy^eps = b(y^eps) dt + eps sigma(y^eps) dx            (solve_rde)
    dy^0   = b(y^0) dt                                    (solve_base_ode)
    dz     = [int_0^1 grad b(y^0 + th u z)<z> dth] dt
             + sigma(y^0 + u z) dx,   u = eps kappa(eps)  (solve_coupled_system)

Esquema: um passo de Taylor por intervalo (tipo Davie) com os tensores do lift,
na ordem da profundidade do lift. O incremento de drift dentro do mesmo passo é
o de RK4, então com ruído desligado o resultado coincide bit a bit com o do ODE.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import roots_legendre

from roughmdp.errors import NumericalError, ValidationError
from roughmdp.fbm import TimeGrid, depth_for_alpha
from roughmdp.fields import CoefficientField, Evaluator
from roughmdp.roughpath import RoughPathLift

logger = logging.getLogger(__name__)

GAUSS_ORDER = 8
_GL_NODES, _GL_WEIGHTS = roots_legendre(GAUSS_ORDER)
THETA_NODES = 0.5 * (_GL_NODES + 1.0)
THETA_WEIGHTS = 0.5 * _GL_WEIGHTS


# =========================
# Tipos
# =========================
@dataclass(frozen=True)
class KappaSpec:
    """kappa(eps): forma potência eps^(-theta) ou tabela (eps, kappa)."""

    form: str
    theta: float | None = None
    table: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if self.form == "power":
            if self.theta is None or not (0.0 < self.theta < 1.0):
                raise ValidationError(f"theta deve estar em (0,1), recebido {self.theta}", field="kappa.theta")
        elif self.form == "table":
            if not self.table:
                raise ValidationError("tabela de kappa vazia", field="kappa.table")
            eps = np.array([p[0] for p in self.table], dtype=float)
            kap = np.array([p[1] for p in self.table], dtype=float)
            if np.any(~np.isfinite(eps)) or np.any(eps <= 0.0) or np.any(eps > 1.0):
                raise ValidationError("valores de eps da tabela devem estar em (0,1]", field="kappa.table")
            if np.any(~np.isfinite(kap)) or np.any(kap <= 0.0):
                raise ValidationError("valores de kappa devem ser positivos e finitos", field="kappa.table")
            if len(np.unique(eps)) != len(eps):
                raise ValidationError("eps repetido na tabela de kappa", field="kappa.table")
            order = np.argsort(eps)
            if np.any(np.diff(kap[order]) > 0.0):
                raise ValidationError("kappa deve ser não crescente em eps", field="kappa.table")
        else:
            raise ValidationError(f"forma de kappa desconhecida: {self.form!r}", field="kappa.form")

    @classmethod
    def power(cls, theta: float) -> "KappaSpec":
        return cls(form="power", theta=float(theta))

    @classmethod
    def from_table(cls, pairs: Sequence[Sequence[float]]) -> "KappaSpec":
        table = tuple(sorted((float(e), float(k)) for e, k in pairs))
        return cls(form="table", table=table)

    @classmethod
    def constant(cls, eps_grid: Sequence[float], value: float = 1.0) -> "KappaSpec":
        return cls.from_table([(e, value) for e in eps_grid])

    def __call__(self, eps: float) -> float:
        eps = float(eps)
        if not (0.0 < eps <= 1.0):
            raise ValidationError(f"kappa definido só em (0,1], recebido eps={eps}", field="eps")
        if self.form == "power":
            return eps ** (-self.theta)
        for e, k in self.table:
            if e == eps:
                return k
        xs = [p[0] for p in self.table]
        if not (xs[0] <= eps <= xs[-1]):
            raise ValidationError(f"eps={eps} fora da faixa da tabela [{xs[0]}, {xs[-1]}]", field="eps")
        return float(np.interp(eps, xs, [p[1] for p in self.table]))

    def scale(self, eps: float) -> float:
        """u = eps * kappa(eps), com a convenção 0 * kappa(0) = 0."""
        if eps == 0.0:
            return 0.0
        return float(eps) * self(eps)

    def check_mdp_regime(self, eps_grid: Sequence[float]) -> None:
        """Na grade: kappa não decresce quando eps desce, e eps*kappa(eps) desce."""
        grid = sorted(float(e) for e in eps_grid)
        kap = np.array([self(e) for e in grid])
        u = np.array([self.scale(e) for e in grid])
        if np.any(np.diff(kap) > 0.0):
            raise ValidationError("kappa deve ser não crescente em eps", field="kappa")
        if len(grid) > 1:
            if not kap[0] > kap[-1]:
                raise ValidationError("kappa precisa crescer quando eps desce (kappa -> infinito)", field="kappa")
            if np.any(np.diff(u) <= 0.0):
                raise ValidationError("eps*kappa(eps) precisa descer junto com eps (-> 0)", field="kappa")

    def to_dict(self) -> dict:
        if self.form == "power":
            return {"form": "power", "theta": self.theta}
        return {"form": "table", "table": [list(p) for p in self.table]}


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    values: np.ndarray  # (*lote, n_nodes, dim)

    def __post_init__(self) -> None:
        if self.values.ndim < 2 or self.values.shape[-2] != self.grid.n_nodes:
            raise ValidationError(f"trajetória com shape {self.values.shape} para {self.grid.n_nodes} nós")

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def initial(self) -> np.ndarray:
        return self.values[..., 0, :]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[..., -1, :]

    def sup_norm(self) -> np.ndarray:
        return np.max(np.linalg.norm(self.values, axis=-1), axis=-1)

    def to_frame(self) -> pd.DataFrame:
        if self.values.ndim != 2:
            raise ValidationError("exportação CSV só para uma trajetória (sem eixo de lote)")
        df = pd.DataFrame(self.values, columns=[f"y{i}" for i in range(self.dim)])
        df.insert(0, "t", self.grid.nodes)
        df.insert(0, "node", np.arange(self.grid.n_nodes))
        return df

    def to_csv(self, path: Path | str) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path


# =========================
# Passos elementares
# =========================
def rk4_increment(f: Evaluator, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _taylor_increment(field: CoefficientField, y: np.ndarray, x: Sequence[np.ndarray]) -> np.ndarray:
    """
    sum_k (V_{j1} ... V_{jk} Id)(y) x^{j1..jk}, com V_j = coluna j de sigma.
    Nível 3 usa derivadas de sigma até ordem 2.
    """
    sig = field.sigma(y)
    out = np.einsum("...ij,...j->...i", sig, x[0])
    if len(x) >= 2:
        dsig = field.grad_sigma(y)
        out = out + np.einsum("...iak,...kb,...ba->...i", dsig, sig, x[1])
    if len(x) >= 3:
        d2sig = field.hess_sigma(y)
        out = out + np.einsum("...icKL,...Kb,...La,...abc->...i", d2sig, sig, sig, x[2])
        out = out + np.einsum("...icK,...KbL,...La,...abc->...i", dsig, dsig, sig, x[2])
    return out


def advance(
    field: CoefficientField,
    y: np.ndarray,
    grid: TimeGrid,
    x: RoughPathLift | None = None,
    eps: float = 1.0,
    *,
    start: int = 0,
    stop: int | None = None,
    drift: Evaluator | None = None,
    stage: str = "rde",
) -> np.ndarray:
    """
    Avança o estado pelos intervalos [start, stop) da grade.

    Retorna os valores nos nós start..stop, shape (*lote, stop-start+1, dim).
    """
    stop = grid.n_steps if stop is None else stop
    if not (0 <= start <= stop <= grid.n_steps):
        raise ValidationError(f"intervalos [{start}, {stop}) fora da grade")
    drift = field.b if drift is None else drift
    dt = grid.mesh

    y = np.asarray(y, dtype=float)
    noisy = x is not None and eps != 0.0
    if x is not None:
        if x.grid != grid:
            raise ValidationError(f"lift na grade m={x.grid.m}, solver na grade m={grid.m}", field="grid")
        if x.dim != field.d:
            raise ValidationError(f"lift com d={x.dim}, campo com d={field.d}", field="d")
        y = np.broadcast_to(y, x.batch_shape + y.shape[-1:]).copy()
        scaled = [lvl * eps**k for k, lvl in enumerate(x.levels, start=1)] if noisy else None

    out = np.empty(y.shape[:-1] + (stop - start + 1, y.shape[-1]))
    out[..., 0, :] = y
    for n in range(start, stop):
        y = y + rk4_increment(drift, y, dt)
        if noisy:
            xi = [lvl[(Ellipsis, n) + (slice(None),) * k] for k, lvl in enumerate(scaled, start=1)]
            y = y + _taylor_increment(field, out[..., n - start, :], xi)
        if not np.all(np.isfinite(y)):
            raise NumericalError(
                f"estado não finito no passo {n} (t={n * dt:.6g}); verifique o campo '{field.name}'",
                stage=stage,
            )
        out[..., n - start + 1, :] = y
    return out


def _initial(a, e: int) -> np.ndarray:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape[-1] != e:
        raise ValidationError(f"ponto inicial com dimensão {a.shape[-1]}, esperado e={e}", field="a")
    if not np.all(np.isfinite(a)):
        raise ValidationError("ponto inicial não finito", field="a")
    return a


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not (0.0 <= eps <= 1.0):
        raise ValidationError(f"eps deve estar em [0,1], recebido {eps}", field="eps")
    return eps


# =========================
# Operações
# =========================
def solve_base_ode(coeff: CoefficientField, a, grid: TimeGrid) -> Trajectory:
    """Fluxo sem ruído y^0 por RK4."""
    y = _initial(a, coeff.e)
    values = advance(coeff, y, grid, stage="solve_base_ode")
    return Trajectory(grid=grid, values=values)


def solve_rde(
    coeff: CoefficientField,
    a,
    x: RoughPathLift,
    eps: float,
    grid: TimeGrid | None = None,
    *,
    alpha: float | None = None,
) -> Trajectory:
    grid = x.grid if grid is None else grid
    eps = _check_eps(eps)
    if alpha is not None and depth_for_alpha(alpha) != x.depth:
        raise ValidationError(
            f"lift de profundidade {x.depth} não corresponde a alpha={alpha}", field="alpha"
        )
    y = _initial(a, coeff.e)
    values = advance(coeff, y, grid, x, eps, stage="solve_rde")
    return Trajectory(grid=grid, values=values)


def theta_drift(coeff: CoefficientField, y0: np.ndarray, z: np.ndarray, u: float) -> np.ndarray:
    """int_0^1 grad b(y0 + th u z)<z> dth por Gauss-Legendre de 8 pontos."""
    if u < 0.0:
        raise ValidationError(f"u = eps*kappa(eps) deve ser >= 0, recebido {u}")
    y0 = np.asarray(y0, dtype=float)
    z = np.asarray(z, dtype=float)
    if u == 0.0:
        return np.einsum("...ik,...k->...i", coeff.grad_b(y0), z)
    shape = (GAUSS_ORDER,) + (1,) * z.ndim
    points = y0 + (u * THETA_NODES).reshape(shape) * z
    jac = coeff.grad_b(points)
    weighted = np.einsum("q,q...ik->...ik", THETA_WEIGHTS, jac)
    return np.einsum("...ik,...k->...i", weighted, z)


def coupled_field(
    coeff: CoefficientField, u: float, drift: CoefficientField | None = None
) -> CoefficientField:
    """
    Campo em bloco do sistema (y^0, z) em R^{e+e}: difusão (0; sigma(y + u z)),
    drift (b(y); theta_drift). Com `drift` (ex.: drift de Itô) o termo de z vira
    (drift.b(y + u z) - b(y)) / u, escrito como theta_drift + (drift.b - b)(y)/u.
    """
    e, d = coeff.e, coeff.d
    shifted = drift is not None and drift is not coeff

    def split(Y):
        return Y[..., :e], Y[..., e:]

    def b(Y):
        y, z = split(Y)
        dz = theta_drift(drift if shifted else coeff, y, z, u)
        if shifted and u > 0.0:
            dz = dz + (drift.b(y) - coeff.b(y)) / u
        return np.concatenate([coeff.b(y), dz], axis=-1)

    def sigma(Y):
        y, z = split(Y)
        s = coeff.sigma(y + u * z)
        out = np.zeros(s.shape[:-2] + (2 * e, d))
        out[..., e:, :] = s
        return out

    def dsigma(Y):
        y, z = split(Y)
        ds = coeff.grad_sigma(y + u * z)
        out = np.zeros(ds.shape[:-3] + (2 * e, d, 2 * e))
        out[..., e:, :, :e] = ds
        out[..., e:, :, e:] = u * ds
        return out

    def d2sigma(Y):
        y, z = split(Y)
        h = coeff.hess_sigma(y + u * z)
        out = np.zeros(h.shape[:-4] + (2 * e, d, 2 * e, 2 * e))
        out[..., e:, :, :e, :e] = h
        out[..., e:, :, :e, e:] = u * h
        out[..., e:, :, e:, :e] = u * h
        out[..., e:, :, e:, e:] = u * u * h
        return out

    return CoefficientField(
        d=d, e=2 * e, b=b, sigma=sigma, dsigma=dsigma, d2sigma=d2sigma, name=f"{coeff.name}+coupled"
    )


def solve_coupled_system(
    coeff: CoefficientField,
    a,
    x: RoughPathLift,
    eps: float,
    kappa: KappaSpec,
    grid: TimeGrid | None = None,
    *,
    drift: CoefficientField | None = None,
) -> tuple[Trajectory, Trajectory]:
    """Resolve (y^0, z^hat) juntos; z^hat_0 = 0."""
    grid = x.grid if grid is None else grid
    eps = _check_eps(eps)
    u = kappa.scale(eps)
    block = coupled_field(coeff, u, drift)
    y = _initial(a, coeff.e)
    start = np.concatenate([y, np.zeros(coeff.e)])
    values = advance(block, start, grid, x, 1.0, stage="solve_coupled_system")
    e = coeff.e
    return (
        Trajectory(grid=grid, values=values[..., :e]),
        Trajectory(grid=grid, values=values[..., e:]),
    )


def phi_map(
    coeff: CoefficientField,
    a,
    eps: float,
    x: RoughPathLift,
    kappa: KappaSpec,
    grid: TimeGrid | None = None,
    *,
    drift: CoefficientField | None = None,
) -> Trajectory:
    """Phi(eps, x) = z^hat^eps."""
    _, z_hat = solve_coupled_system(coeff, a, x, eps, kappa, grid, drift=drift)
    return z_hat


def z_from_solutions(y_eps: Trajectory, y_0: Trajectory, eps: float, kappa: KappaSpec) -> Trajectory:
    """z^eps = (y^eps - y^0) / (eps kappa(eps))."""
    eps = float(eps)
    if not (0.0 < eps <= 1.0):
        raise ValidationError(f"eps deve estar em (0,1] (divisão por eps*kappa), recebido {eps}", field="eps")
    if y_eps.grid != y_0.grid:
        raise ValidationError("trajetórias em grades diferentes", field="grid")
    return Trajectory(grid=y_eps.grid, values=(y_eps.values - y_0.values) / kappa.scale(eps))


# =========================
# Correção de Itô (caso H = 1/2)
# =========================
def ito_drift_correction(coeff: CoefficientField, eps: float) -> CoefficientField:
    """
    b~_eps^i = b^i - (eps^2 / 2) sum_{j,k} sigma_kj d_k sigma_ij; sigma inalterado.
    As derivadas de b~ só ficam fechadas quando as de sigma (e de b) também são.
    """
    eps = float(eps)
    if eps == 0.0:
        return coeff.with_name(f"{coeff.name}+ito(0)")
    half = 0.5 * eps * eps

    def corr(y):
        return np.einsum("...kj,...ijk->...i", coeff.sigma(y), coeff.grad_sigma(y))

    def grad_corr(y):
        ds = coeff.grad_sigma(y)
        return np.einsum("...kjl,...ijk->...il", ds, ds) + np.einsum(
            "...kj,...ijkl->...il", coeff.sigma(y), coeff.hess_sigma(y)
        )

    def hess_corr(y):
        s, ds, d2s = coeff.sigma(y), coeff.grad_sigma(y), coeff.hess_sigma(y)
        return (
            np.einsum("...kjlm,...ijk->...ilm", d2s, ds)
            + np.einsum("...kjl,...ijkm->...ilm", ds, d2s)
            + np.einsum("...kjm,...ijkl->...ilm", ds, d2s)
            + np.einsum("...kj,...ijklm->...ilm", s, coeff.third_sigma(y))
        )

    closed_db = None not in (coeff.db, coeff.dsigma, coeff.d2sigma)
    closed_d2b = closed_db and None not in (coeff.d2b, coeff.d3sigma)

    return CoefficientField(
        d=coeff.d,
        e=coeff.e,
        b=lambda y: coeff.b(y) - half * corr(y),
        db=(lambda y: coeff.db(y) - half * grad_corr(y)) if closed_db else None,
        d2b=(lambda y: coeff.d2b(y) - half * hess_corr(y)) if closed_d2b else None,
        sigma=coeff.sigma,
        dsigma=coeff.dsigma,
        d2sigma=coeff.d2sigma,
        d3sigma=coeff.d3sigma,
        name=f"{coeff.name}+ito({eps:g})",
        params=coeff.params,
    )


def solve_ito_sde_euler(
    coeff: CoefficientField, a, dw: np.ndarray, eps: float, grid: TimeGrid
) -> Trajectory:
    """Euler-Maruyama para dy = b(y) dt + eps sigma(y) dw (Itô). dw: (*lote, n_steps, d)."""
    dw = np.asarray(dw, dtype=float)
    if dw.shape[-2:] != (grid.n_steps, coeff.d):
        raise ValidationError(f"incrementos com shape {dw.shape}, esperado (..., {grid.n_steps}, {coeff.d})")
    y = np.broadcast_to(_initial(a, coeff.e), dw.shape[:-2] + (coeff.e,)).copy()
    out = np.empty(dw.shape[:-2] + (grid.n_nodes, coeff.e))
    out[..., 0, :] = y
    for n in range(grid.n_steps):
        y = y + coeff.b(y) * grid.mesh + eps * np.einsum("...ij,...j->...i", coeff.sigma(y), dw[..., n, :])
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"estado não finito no passo {n}", stage="solve_ito_sde_euler")
        out[..., n + 1, :] = y
    return Trajectory(grid=grid, values=out)


