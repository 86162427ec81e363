"""
Lift de caminhos da grade em rough paths de nível N (N = 2 ou 3).

O lift é guardado por intervalo da grade: para cada [t_i, t_{i+1}] os tensores
x^1, ..., x^N. Incrementos sobre janelas maiores saem da relação de Chen.
Todas as operações aceitam um eixo de lote à esquerda (vários caminhos de uma vez).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from roughmdp.errors import ValidationError
from roughmdp.fbm import FbmBatch, TimeGrid

DEPTHS = (2, 3)


def _tensor(a: np.ndarray, rank_a: int, b: np.ndarray, rank_b: int) -> np.ndarray:
    """Produto tensorial a ⊗ b preservando os eixos de lote."""
    a_exp = a.reshape(a.shape + (1,) * rank_b)
    b_exp = b.reshape(b.shape[: b.ndim - rank_b] + (1,) * rank_a + b.shape[b.ndim - rank_b:])
    return a_exp * b_exp


@dataclass(frozen=True)
class RoughPathLift:
    grid: TimeGrid
    dim: int
    depth: int
    levels: tuple[np.ndarray, ...]  # nível k: (*lote, n_steps, d, ..., d) com k eixos d

    def __post_init__(self) -> None:
        if self.depth not in DEPTHS:
            raise ValidationError(f"profundidade do lift deve ser 2 ou 3, recebido {self.depth}", field="depth")
        if len(self.levels) != self.depth:
            raise ValidationError(f"esperados {self.depth} níveis, recebidos {len(self.levels)}")
        batch = self.batch_shape
        for k, lvl in enumerate(self.levels, start=1):
            expected = batch + (self.grid.n_steps,) + (self.dim,) * k
            if lvl.shape != expected:
                raise ValidationError(f"nível {k} com shape {lvl.shape}, esperado {expected}")

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.levels[0].shape[:-2]

    def level(self, k: int) -> np.ndarray:
        return self.levels[k - 1]

    def interval(self, i: int) -> list[np.ndarray]:
        """Incrementos (x^1..x^N) do i-ésimo intervalo."""
        return [lvl[(Ellipsis, i) + (slice(None),) * k] for k, lvl in enumerate(self.levels, start=1)]

    def window(self, i: int, j: int) -> list[np.ndarray]:
        """x_{t_i, t_j} reconstruído por Chen a partir dos intervalos."""
        if not (0 <= i <= j <= self.grid.n_steps):
            raise ValidationError(f"janela inválida [{i}, {j}] para {self.grid.n_steps} intervalos")
        acc = [np.zeros(self.batch_shape + (self.dim,) * k) for k in range(1, self.depth + 1)]
        for idx in range(i, j):
            acc = chen_combine(acc, self.interval(idx))
        return acc

    def to_frame(self) -> pd.DataFrame:
        frames = []
        batched = len(self.batch_shape) > 0
        for k, lvl in enumerate(self.levels, start=1):
            idx = np.unravel_index(np.arange(lvl.size), lvl.shape)
            nb = len(self.batch_shape)
            data = {}
            if batched:
                data["path"] = np.ravel_multi_index(idx[:nb], self.batch_shape)
            data["interval"] = idx[nb]
            data["level"] = np.full(lvl.size, k)
            data["multi_index"] = [
                "".join(str(int(v)) for v in word) for word in zip(*idx[nb + 1:])
            ]
            data["value"] = lvl.ravel()
            frames.append(pd.DataFrame(data))
        return pd.concat(frames, ignore_index=True)

    def to_csv(self, path: Path | str) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path


# =========================
# Construção
# =========================
def lift_piecewise_linear(path, depth: int, grid: TimeGrid | None = None) -> RoughPathLift:
    """
    Lift natural S_N(w) de um caminho linear por partes.

    Num segmento com incremento v os integrais iterados são exatos:
    x^k = v^{⊗k} / k!.
    """
    if depth not in DEPTHS:
        raise ValidationError(f"profundidade do lift deve ser 2 ou 3, recebido {depth}", field="depth")
    if isinstance(path, FbmBatch):
        grid = path.grid if grid is None else grid
        path = path.values
    values = np.asarray(path, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    n_nodes = values.shape[-2]
    if grid is None:
        grid = TimeGrid.from_nodes(np.linspace(0.0, 1.0, n_nodes))
    if n_nodes != grid.n_nodes:
        raise ValidationError(f"caminho com {n_nodes} nós, grade com {grid.n_nodes}")

    v = np.diff(values, axis=-2)
    levels = [v]
    power = v
    for k in range(2, depth + 1):
        power = _tensor(power, k - 1, v, 1)
        levels.append(power / factorial(k))
    return RoughPathLift(grid=grid, dim=values.shape[-1], depth=depth, levels=tuple(levels))


def zero_lift(grid: TimeGrid, dim: int, depth: int, batch_shape: tuple[int, ...] = ()) -> RoughPathLift:
    levels = tuple(np.zeros(batch_shape + (grid.n_steps,) + (dim,) * k) for k in range(1, depth + 1))
    return RoughPathLift(grid=grid, dim=dim, depth=depth, levels=levels)


# =========================
# Álgebra
# =========================
def chen_combine(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Relação de Chen: x_{s,t}^k = sum_{i=0..k} a^i ⊗ b^{k-i}, com a^0 = b^0 = 1."""
    if len(a) != len(b):
        raise ValidationError(f"profundidades diferentes: {len(a)} e {len(b)}")
    a = [np.asarray(x, dtype=float) for x in a]
    b = [np.asarray(x, dtype=float) for x in b]
    for k, (ak, bk) in enumerate(zip(a, b), start=1):
        if ak.shape != bk.shape:
            raise ValidationError(f"shapes incompatíveis no nível {k}: {ak.shape} e {bk.shape}")

    out = []
    for k in range(1, len(a) + 1):
        acc = a[k - 1] + b[k - 1]
        for i in range(1, k):
            acc = acc + _tensor(a[i - 1], i, b[k - i - 1], k - i)
        out.append(acc)
    return out


def dilate(x: RoughPathLift, c: float) -> RoughPathLift:
    """Dilatação δ_c: nível k multiplicado por c^k."""
    c = float(c)
    if not np.isfinite(c):
        raise ValidationError(f"fator de dilatação deve ser finito, recebido {c}")
    levels = tuple(lvl * c**k for k, lvl in enumerate(x.levels, start=1))
    return RoughPathLift(grid=x.grid, dim=x.dim, depth=x.depth, levels=levels)


def holder_estimate(x: RoughPathLift, alpha: float) -> np.ndarray:
    """
    Máximo na grade de |x^k_{s,t}| / (t-s)^{k alpha}, por nível k.

    Retorna array (*lote, depth). Custo O(n^2) em combinações de Chen, vetorizado
    sobre o ponto inicial s.
    """
    if not (0.25 < alpha <= 0.5):
        raise ValidationError(f"alpha deve estar em (1/4, 1/2], recebido {alpha}", field="alpha")

    n = x.grid.n_steps
    nb = len(x.batch_shape)
    best = np.zeros(x.batch_shape + (x.depth,))
    running = [lvl.copy() for lvl in x.levels]  # janelas de comprimento L começando em cada i

    for length in range(1, n + 1):
        span = length * x.grid.mesh
        for k, lvl in enumerate(running, start=1):
            norms = np.sqrt(np.sum(lvl**2, axis=tuple(range(nb + 1, lvl.ndim))))
            ratio = norms.max(axis=-1) / span ** (k * alpha)
            best[..., k - 1] = np.maximum(best[..., k - 1], ratio)
        if length == n:
            break
        head = [lvl[(Ellipsis, slice(None, -1)) + (slice(None),) * k] for k, lvl in enumerate(running, start=1)]
        tail = [lvl[(Ellipsis, slice(length, None)) + (slice(None),) * k] for k, lvl in enumerate(x.levels, start=1)]
        running = chen_combine(head, tail)
    return best
