"""
Campos de coeficientes (b, sigma) e suas derivadas.

Convenção de shapes (y com eixos de lote à esquerda, último eixo = e):
    b(y)        (..., e)
    db(y)       (..., e, e)            [i, k]       = d_k b_i
    d2b(y)      (..., e, e, e)         [i, k, l]    = d_l d_k b_i
    sigma(y)    (..., e, d)
    dsigma(y)   (..., e, d, e)         [i, j, k]    = d_k sigma_ij
    d2sigma(y)  (..., e, d, e, e)
    d3sigma(y)  (..., e, d, e, e, e)

Derivada ausente => diferença central com passo 1e-5 (o campo fica marcado).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from roughmdp.errors import ValidationError

logger = logging.getLogger(__name__)

FD_STEP = 1e-5

Evaluator = Callable[[np.ndarray], np.ndarray]


def central_difference(f: Evaluator, y: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Derivada de f por diferenças centrais; a nova direção vai para o último eixo."""
    y = np.asarray(y, dtype=float)
    cols = []
    for k in range(y.shape[-1]):
        shift = np.zeros(y.shape[-1])
        shift[k] = step
        cols.append((f(y + shift) - f(y - shift)) / (2.0 * step))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class CoefficientField:
    d: int
    e: int
    b: Evaluator
    sigma: Evaluator
    db: Evaluator | None = None
    d2b: Evaluator | None = None
    dsigma: Evaluator | None = None
    d2sigma: Evaluator | None = None
    d3sigma: Evaluator | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    # ---------- avaliadores com fallback ----------
    def grad_b(self, y: np.ndarray) -> np.ndarray:
        if self.db is not None:
            return self.db(y)
        return central_difference(self.b, y)

    def hess_b(self, y: np.ndarray) -> np.ndarray:
        if self.d2b is not None:
            return self.d2b(y)
        return central_difference(self.grad_b, y)

    def grad_sigma(self, y: np.ndarray) -> np.ndarray:
        if self.dsigma is not None:
            return self.dsigma(y)
        return central_difference(self.sigma, y)

    def hess_sigma(self, y: np.ndarray) -> np.ndarray:
        if self.d2sigma is not None:
            return self.d2sigma(y)
        return central_difference(self.grad_sigma, y)

    def third_sigma(self, y: np.ndarray) -> np.ndarray:
        if self.d3sigma is not None:
            return self.d3sigma(y)
        return central_difference(self.hess_sigma, y)

    @property
    def finite_difference(self) -> bool:
        return any(
            ev is None for ev in (self.db, self.d2b, self.dsigma, self.d2sigma, self.d3sigma)
        )

    def with_name(self, name: str) -> "CoefficientField":
        return replace(self, name=name)

    def check_derivatives(self, points: np.ndarray, rtol: float = 1e-4) -> dict[str, float]:
        """
        Compara cada derivada fechada com a diferença central do nível abaixo.
        Erro relativo = max|fechada - fd| / max(1, max|fechada|).
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        pairs = {
            "db": (self.db, self.b),
            "d2b": (self.d2b, self.grad_b),
            "dsigma": (self.dsigma, self.sigma),
            "d2sigma": (self.d2sigma, self.grad_sigma),
            "d3sigma": (self.d3sigma, self.hess_sigma),
        }
        errors: dict[str, float] = {}
        for name, (closed, lower) in pairs.items():
            if closed is None:
                continue
            exact = closed(points)
            approx = central_difference(lower, points)
            scale = max(1.0, float(np.max(np.abs(exact))))
            errors[name] = float(np.max(np.abs(exact - approx))) / scale

        bad = {k: v for k, v in errors.items() if v >= rtol}
        if bad:
            raise ValidationError(
                f"derivadas inconsistentes com diferenças finitas em '{self.name}': {bad}",
                field="field",
            )
        return errors


# =========================
# Campos embutidos
# =========================
def _as_matrix(value, shape: tuple[int, ...], default: np.ndarray, key: str) -> np.ndarray:
    if value is None:
        return default
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0 and len(shape) > 0:
        arr = np.full(shape, float(arr))
    if arr.shape != shape:
        raise ValidationError(f"esperado shape {shape}, recebido {arr.shape}", field=f"field.params.{key}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("valores não finitos", field=f"field.params.{key}")
    return arr


def linear_field(d: int, e: int, A=None, c=None, S=None) -> CoefficientField:
    """b(y) = A y + c,  sigma(y) = S (constante)."""
    A = _as_matrix(A, (e, e), np.zeros((e, e)), "A")
    c = _as_matrix(c, (e,), np.zeros(e), "c")
    S = _as_matrix(S, (e, d), np.eye(e, d), "S")

    def lead(y):
        return np.shape(y)[:-1]

    return CoefficientField(
        d=d,
        e=e,
        b=lambda y: np.asarray(y) @ A.T + c,
        db=lambda y: np.broadcast_to(A, lead(y) + (e, e)),
        d2b=lambda y: np.zeros(lead(y) + (e, e, e)),
        sigma=lambda y: np.broadcast_to(S, lead(y) + (e, d)),
        dsigma=lambda y: np.zeros(lead(y) + (e, d, e)),
        d2sigma=lambda y: np.zeros(lead(y) + (e, d, e, e)),
        d3sigma=lambda y: np.zeros(lead(y) + (e, d, e, e, e)),
        name="linear",
        params={"A": A.tolist(), "c": c.tolist(), "S": S.tolist()},
    )


def bilinear_field(d: int, e: int, A=None, c=None, S=None, B=None) -> CoefficientField:
    """b(y) = A y + c,  sigma_ij(y) = S_ij + sum_k B_ijk y_k."""
    A = _as_matrix(A, (e, e), np.zeros((e, e)), "A")
    c = _as_matrix(c, (e,), np.zeros(e), "c")
    S = _as_matrix(S, (e, d), np.zeros((e, d)), "S")
    B = _as_matrix(B, (e, d, e), np.zeros((e, d, e)), "B")

    def lead(y):
        return np.shape(y)[:-1]

    return CoefficientField(
        d=d,
        e=e,
        b=lambda y: np.asarray(y) @ A.T + c,
        db=lambda y: np.broadcast_to(A, lead(y) + (e, e)),
        d2b=lambda y: np.zeros(lead(y) + (e, e, e)),
        sigma=lambda y: S + np.einsum("ijk,...k->...ij", B, np.asarray(y)),
        dsigma=lambda y: np.broadcast_to(B, lead(y) + (e, d, e)),
        d2sigma=lambda y: np.zeros(lead(y) + (e, d, e, e)),
        d3sigma=lambda y: np.zeros(lead(y) + (e, d, e, e, e)),
        name="bilinear",
        params={"A": A.tolist(), "c": c.tolist(), "S": S.tolist(), "B": B.tolist()},
    )


def tanh_field(d: int, e: int, A=None, c=None, S=None, gamma: float = 0.5) -> CoefficientField:
    """b_i(y) = sum_k A_ik tanh(y_k) + c_i,  sigma_ij(y) = S_ij (1 + gamma tanh(y_i))."""
    A = _as_matrix(A, (e, e), -np.eye(e), "A")
    c = _as_matrix(c, (e,), np.zeros(e), "c")
    S = _as_matrix(S, (e, d), np.eye(e, d), "S")
    gamma = float(gamma)
    if not (0.0 <= abs(gamma) < 1.0):
        raise ValidationError(f"gamma deve ter |gamma| < 1, recebido {gamma}", field="field.params.gamma")
    eye = np.eye(e)

    def t0(y):
        return np.tanh(y)

    def t1(y):
        return 1.0 - np.tanh(y) ** 2

    def t2(y):
        t = np.tanh(y)
        return -2.0 * t * (1.0 - t**2)

    def t3(y):
        t = np.tanh(y)
        return -2.0 * (1.0 - t**2) * (1.0 - 3.0 * t**2)

    return CoefficientField(
        d=d,
        e=e,
        b=lambda y: t0(y) @ A.T + c,
        db=lambda y: np.einsum("ik,...k->...ik", A, t1(y)),
        d2b=lambda y: np.einsum("ik,...k,kl->...ikl", A, t2(y), eye),
        sigma=lambda y: np.einsum("ij,...i->...ij", S, 1.0 + gamma * t0(y)),
        dsigma=lambda y: np.einsum("ij,...i,ik->...ijk", S, gamma * t1(y), eye),
        d2sigma=lambda y: np.einsum("ij,...i,ik,il->...ijkl", S, gamma * t2(y), eye, eye),
        d3sigma=lambda y: np.einsum("ij,...i,ik,il,im->...ijklm", S, gamma * t3(y), eye, eye, eye),
        name="tanh",
        params={"A": A.tolist(), "c": c.tolist(), "S": S.tolist(), "gamma": gamma},
    )


FIELD_BUILDERS: dict[str, Callable[..., CoefficientField]] = {
    "linear": linear_field,
    "bilinear": bilinear_field,
    "tanh": tanh_field,
}

_ALLOWED_PARAMS = {
    "linear": {"A", "c", "S"},
    "bilinear": {"A", "c", "S", "B"},
    "tanh": {"A", "c", "S", "gamma"},
}


def build_field(name: str, d: int, e: int, params: dict | None = None) -> CoefficientField:
    """Campo embutido pelo nome ('linear', 'bilinear', 'tanh')."""
    if name not in FIELD_BUILDERS:
        raise ValidationError(
            f"campo desconhecido {name!r}; opções: {sorted(FIELD_BUILDERS)}", field="field.name"
        )
    if d < 1 or e < 1:
        raise ValidationError(f"dimensões inválidas d={d}, e={e}", field="field")
    params = dict(params or {})
    unknown = set(params) - _ALLOWED_PARAMS[name]
    if unknown:
        raise ValidationError(
            f"parâmetros desconhecidos para '{name}': {sorted(unknown)}", field="field.params"
        )
    logger.debug("campo %s (d=%d, e=%d) com parametros %s", name, d, e, sorted(params))
    return FIELD_BUILDERS[name](d, e, **params)
