"""
Movimento browniano fracionário (fBm) em grade diádica.

- covariância R(s,t) e matriz de covariância dos incrementos
- amostragem exata na grade: embedding circulante (Davies-Harte) com
  fallback para Cholesky denso quando o espectro tem entradas negativas
- cada (seed, caminho, coordenada) usa um substream próprio do gerador Philox,
  então dividir o lote em pedaços (ou em threads) não muda os valores
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import linalg

from roughmdp.errors import DomainError, NumericalError, ValidationError

logger = logging.getLogger(__name__)

H_MIN = 0.25
H_MAX = 0.5
MAX_LEVEL = 24
# limite de memória de um lote (valores float64)
MAX_BATCH_BYTES = 8 * 2**30
# limite para matrizes densas n x n (Cholesky, covariância completa do limite)
MAX_DENSE_BYTES = 2 * 2**30
SPECTRUM_TOL = 1e-10


# =========================
# Tipos
# =========================
@dataclass(frozen=True)
class HurstParam:
    H: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.H) or not (H_MIN < self.H <= H_MAX):
            raise ValidationError(f"H deve estar em (1/4, 1/2], recebido {self.H}", field="H")

    def __float__(self) -> float:
        return float(self.H)


def _hurst(H: HurstParam | float) -> float:
    if isinstance(H, HurstParam):
        return H.H
    return HurstParam(float(H)).H


def default_alpha(H: HurstParam | float) -> float:
    """alpha = H - 0.01, mas sempre dentro da janela admissível (1/3, H) ou (1/4, H)."""
    h = _hurst(H)
    lower = 1.0 / 3.0 if h > 1.0 / 3.0 else 0.25
    return max(h - 0.01, 0.5 * (lower + h))


def depth_for_alpha(alpha: float) -> int:
    if not (0.25 < alpha <= 0.5):
        raise ValidationError(f"alpha deve estar em (1/4, 1/2], recebido {alpha}", field="alpha")
    return int(np.floor(1.0 / alpha))


@dataclass(frozen=True)
class TimeGrid:
    """Partição uniforme {i/2^m : 0 <= i <= 2^m} de [0,1]."""

    m: int

    def __post_init__(self) -> None:
        if int(self.m) != self.m or not (0 <= self.m <= MAX_LEVEL):
            raise ValidationError(f"nível diádico m deve ser inteiro em [0, {MAX_LEVEL}], recebido {self.m}", field="m")

    @classmethod
    def from_nodes(cls, nodes) -> "TimeGrid":
        t = np.asarray(nodes, dtype=float)
        n_steps = t.size - 1
        if t.ndim != 1 or n_steps < 1 or n_steps & (n_steps - 1):
            raise ValidationError("a grade precisa ter 2^m + 1 nós", field="grid")
        grid = cls(int(np.log2(n_steps)))
        if not np.allclose(t, grid.nodes, rtol=0.0, atol=1e-12):
            raise ValidationError("somente grades diádicas uniformes em [0,1] são aceitas", field="grid")
        return grid

    @property
    def n_steps(self) -> int:
        return 2**self.m

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @property
    def mesh(self) -> float:
        return 2.0 ** (-self.m)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_nodes, dtype=float) * self.mesh


@dataclass(frozen=True)
class FbmBatch:
    grid: TimeGrid
    H: float
    dim: int
    n_paths: int
    seed: int
    values: np.ndarray  # (n_paths, n_nodes, dim)
    method: str
    first_path: int = 0

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    def to_frame(self) -> pd.DataFrame:
        cols = {"t": self.grid.nodes}
        for p in range(self.n_paths):
            for c in range(self.dim):
                cols[f"p{self.first_path + p}_x{c}"] = self.values[p, :, c]
        return pd.DataFrame(cols)

    def to_csv(self, path: Path | str) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path


# =========================
# Covariâncias
# =========================
def fbm_covariance(s, t, H: HurstParam | float):
    """R(s,t) = (s^2H + t^2H - |t-s|^2H) / 2. Aceita escalares ou arrays."""
    h = _hurst(H)
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    for name, arr in (("s", s_arr), ("t", t_arr)):
        if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
            raise DomainError(f"{name} fora de [0,1]: {arr}", field=name)
    two_h = 2.0 * h
    out = 0.5 * (s_arr**two_h + t_arr**two_h - np.abs(t_arr - s_arr) ** two_h)
    if out.ndim == 0:
        return float(out)
    return out


def _increment_autocovariance(grid: TimeGrid, h: float, n_lags: int) -> np.ndarray:
    # gamma(k) = E[dw_0 dw_k] = mesh^2H * (|k+1|^2H - 2|k|^2H + |k-1|^2H) / 2
    k = np.arange(n_lags, dtype=float)
    two_h = 2.0 * h
    return 0.5 * grid.mesh**two_h * (
        np.abs(k + 1.0) ** two_h - 2.0 * np.abs(k) ** two_h + np.abs(k - 1.0) ** two_h
    )


def increment_autocovariance(grid: TimeGrid, H: HurstParam | float) -> np.ndarray:
    """Primeira coluna gamma(0), ..., gamma(2^m - 1) da matriz de Gram (Toeplitz) dos incrementos."""
    return _increment_autocovariance(grid, _hurst(H), grid.n_steps)


def increment_covariance(grid: TimeGrid, H: HurstParam | float) -> np.ndarray:
    """Matriz de Gram E[dw_i dw_j] dos incrementos unidimensionais (2^m x 2^m)."""
    return linalg.toeplitz(increment_autocovariance(grid, H))


# =========================
# Amostragem
# =========================
def path_substream(seed: int, path: int, coordinate: int) -> np.random.Generator:
    """Substream Philox: chave = (seed, caminho), palavra alta do contador = coordenada."""
    key = int(seed) + (int(path) << 64)
    counter = np.array([0, 0, 0, int(coordinate)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


@lru_cache(maxsize=32)
def _sampling_plan(m: int, h: float, method: str) -> tuple[str, np.ndarray]:
    grid = TimeGrid(m)
    n = grid.n_steps

    if method in ("auto", "circulant"):
        gamma = _increment_autocovariance(grid, h, n + 1)
        row = np.concatenate([gamma, gamma[n - 1:0:-1]])
        eig = np.fft.fft(row).real
        lowest, largest = float(eig.min()), float(eig.max())
        if lowest >= -SPECTRUM_TOL * largest:
            scale = np.sqrt(np.clip(eig, 0.0, None) / (2 * n))
            return "circulant", scale
        if method == "circulant":
            raise NumericalError(
                f"espectro do embedding circulante negativo (min={lowest:.3e}, max={largest:.3e})",
                stage="sample_fbm",
            )
        logger.info("embedding circulante com espectro negativo (min=%.3e); usando Cholesky", lowest)

    n_bytes = 2 * 8 * n * n
    if n_bytes > MAX_DENSE_BYTES:
        raise NumericalError(
            f"Cholesky denso precisa de {n_bytes / 2**30:.1f} GiB para m={m}; use o embedding circulante",
            stage="sample_fbm",
        )
    cov = increment_covariance(grid, h)
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky falhou para m={m}, H={h}: {exc}", stage="sample_fbm") from exc
    return "cholesky", chol


def sample_fbm(
    grid: TimeGrid,
    H: HurstParam | float,
    dim: int,
    n_paths: int,
    seed: int,
    *,
    first_path: int = 0,
    method: str = "auto",
) -> FbmBatch:
    """
    Amostra `n_paths` caminhos de fBm d-dimensional (coordenadas independentes).

    Os caminhos são indexados globalmente a partir de `first_path`; o caminho p
    é sempre o mesmo para o mesmo seed, não importa como o lote foi dividido.
    """
    h = _hurst(H)
    if n_paths < 1:
        raise ValidationError(f"n_paths deve ser >= 1, recebido {n_paths}", field="n_paths")
    if dim < 1:
        raise ValidationError(f"dimensão deve ser >= 1, recebido {dim}", field="d")
    if not (0 <= int(seed) < 2**64):
        raise ValidationError(f"seed deve ser um inteiro de 64 bits sem sinal, recebido {seed}", field="seed")
    if method not in ("auto", "circulant", "cholesky"):
        raise ValidationError(f"método de amostragem desconhecido: {method!r}", field="sampler")

    n = grid.n_steps
    n_bytes = 8 * n_paths * dim * max(2 * n, grid.n_nodes) * 2
    if n_bytes > MAX_BATCH_BYTES:
        raise NumericalError(
            f"lote grande demais ({n_bytes / 2**30:.1f} GiB) para m={grid.m}, n_paths={n_paths}, d={dim}",
            stage="sample_fbm",
            seed=seed,
        )

    used, plan = _sampling_plan(grid.m, h, method)

    if used == "circulant":
        noise = np.empty((n_paths, dim, 2, 2 * n))
        for p in range(n_paths):
            for c in range(dim):
                noise[p, c] = path_substream(seed, first_path + p, c).standard_normal((2, 2 * n))
        spectral = plan * (noise[:, :, 0, :] + 1j * noise[:, :, 1, :])
        increments = np.fft.fft(spectral, axis=-1).real[..., :n]
    else:
        noise = np.empty((n_paths, dim, n))
        for p in range(n_paths):
            for c in range(dim):
                noise[p, c] = path_substream(seed, first_path + p, c).standard_normal(n)
        increments = noise @ plan.T

    values = np.zeros((n_paths, grid.n_nodes, dim))
    values[:, 1:, :] = np.cumsum(np.moveaxis(increments, 1, 2), axis=1)

    logger.debug("sample_fbm: m=%d H=%.4f d=%d n=%d metodo=%s", grid.m, h, dim, n_paths, used)
    return FbmBatch(
        grid=grid,
        H=h,
        dim=dim,
        n_paths=n_paths,
        seed=int(seed),
        values=values,
        method=used,
        first_path=first_path,
    )


def sample_fbm_chunked(
    grid: TimeGrid,
    H: HurstParam | float,
    dim: int,
    n_paths: int,
    seed: int,
    *,
    chunk_size: int = 1000,
    threads: int = 1,
    method: str = "auto",
) -> FbmBatch:
    """sample_fbm em pedaços de `chunk_size` caminhos, distribuídos em threads; mesmo resultado de uma chamada só."""
    if chunk_size < 1:
        raise ValidationError(f"chunk_size deve ser >= 1, recebido {chunk_size}", field="chunk_size")
    if n_paths < 1:
        raise ValidationError(f"n_paths deve ser >= 1, recebido {n_paths}", field="n_paths")
    jobs = (
        delayed(sample_fbm)(grid, H, dim, min(chunk_size, n_paths - first), seed, first_path=first, method=method)
        for first in range(0, n_paths, chunk_size)
    )
    parts = Parallel(n_jobs=threads, prefer="threads")(jobs)
    return FbmBatch(
        grid=grid,
        H=parts[0].H,
        dim=dim,
        n_paths=n_paths,
        seed=seed,
        values=np.concatenate([p.values for p in parts], axis=0),
        method=parts[0].method,
    )
