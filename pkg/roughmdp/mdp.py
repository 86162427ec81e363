"""
Experimentos de Monte Carlo: CLT (kappa = 1) e MDP (velocidade kappa(eps)^2).

Para cada eps da grade:
    1) amostra drivers fBm em pedaços (chunk_size caminhos, substreams por caminho)
    2) faz o lift, calcula Z^eps_1 (diferença de duas RDEs ou Phi no driver dilatado)
    3) estima p_hat = P(<d, Z^eps_1> >= z), a taxa normalizada e o IC de Wilson
    4) diagnósticos gaussianos: média, variância e KS contra a marginal limite

O relatório não depende do número de threads: os pedaços têm tamanho fixo e
são concatenados na ordem dos índices.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import special, stats

from roughmdp.errors import NumericalError, RoughMDPError, ValidationError
from roughmdp.fbm import HurstParam, TimeGrid, default_alpha, depth_for_alpha, sample_fbm
from roughmdp.fields import CoefficientField, build_field
from roughmdp.rde import (
    KappaSpec,
    ito_drift_correction,
    phi_map,
    solve_base_ode,
    solve_rde,
    z_from_solutions,
)
from roughmdp.roughpath import dilate, lift_piecewise_linear
from roughmdp.skeleton import event_variance, limit_covariance, terminal_rate

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1
DEFAULT_EPS = (0.5, 0.35, 0.25, 0.18, 0.12)
DEFAULT_THETA = 0.4
MIN_EXPERIMENT_PATHS = 100
RELIABLE_HITS = 20
Z_METHODS = ("difference", "phi")
SAMPLERS = ("auto", "circulant", "cholesky")

REPORT_COLUMNS = ["eps", "kappa", "n", "p_hat", "rate", "ci_lo", "ci_hi", "ks", "mean", "var", "flags"]


# =========================
# Configuração
# =========================
@dataclass(frozen=True)
class ExperimentConfig:
    field_name: str
    d: int
    e: int
    a: tuple[float, ...]
    H: float
    m: int
    seed: int
    n_paths: int
    eps: tuple[float, ...] = DEFAULT_EPS
    kappa: KappaSpec = field(default_factory=lambda: KappaSpec.power(DEFAULT_THETA))
    direction: tuple[float, ...] | None = None
    z: float = 1.0
    params: dict = field(default_factory=dict, compare=False)
    alpha: float | None = None
    z_method: str = "difference"
    ito: bool = False
    chunk_size: int = 1000
    confidence: float = 0.95
    sampler: str = "auto"

    def __post_init__(self) -> None:
        HurstParam(self.H)
        TimeGrid(self.m)
        if len(self.a) != self.e:
            raise ValidationError(f"a tem dimensão {len(self.a)}, esperado e={self.e}", field="a")
        if not self.eps:
            raise ValidationError("grade de eps vazia", field="eps")
        eps = np.asarray(self.eps, dtype=float)
        if np.any(eps <= 0.0) or np.any(eps > 1.0):
            raise ValidationError(f"eps deve estar em (0,1], recebido {list(self.eps)}", field="eps")
        if np.any(np.diff(eps) >= 0.0):
            raise ValidationError("eps deve ser estritamente decrescente", field="eps")
        if self.n_paths < 1:
            raise ValidationError(f"n_paths deve ser >= 1, recebido {self.n_paths}", field="n_paths")
        if not (0 <= self.seed < 2**64):
            raise ValidationError(f"seed deve ser um inteiro de 64 bits sem sinal, recebido {self.seed}", field="seed")
        if not self.z > 0.0:
            raise ValidationError(f"limiar do evento z deve ser > 0, recebido {self.z}", field="event.z")
        if self.direction is not None:
            d = np.asarray(self.direction, dtype=float)
            if d.shape != (self.e,):
                raise ValidationError(f"direção com {d.size} entradas, esperado e={self.e}", field="event.direction")
            if abs(float(np.linalg.norm(d)) - 1.0) > 1e-9:
                raise ValidationError("direção do evento precisa ser um vetor unitário", field="event.direction")
        if self.alpha is not None:
            if not (0.25 < self.alpha < self.H):
                raise ValidationError(f"alpha deve estar em (1/4, H={self.H}), recebido {self.alpha}", field="alpha")
            if self.H > 1.0 / 3.0 and self.alpha <= 1.0 / 3.0:
                raise ValidationError("com H > 1/3 use alpha > 1/3 (lift de nível 2)", field="alpha")
        if self.z_method not in Z_METHODS:
            raise ValidationError(f"z_method deve ser um de {Z_METHODS}", field="z_method")
        if self.sampler not in SAMPLERS:
            raise ValidationError(f"sampler deve ser um de {SAMPLERS}", field="sampler")
        if self.chunk_size < 1:
            raise ValidationError(f"chunk_size deve ser >= 1, recebido {self.chunk_size}", field="chunk_size")
        if not (0.0 < self.confidence < 1.0):
            raise ValidationError(f"confidence deve estar em (0,1), recebido {self.confidence}", field="confidence")
        if self.ito and self.H != 0.5:
            raise ValidationError("a correção de Itô só vale para H = 1/2", field="ito")

    # ---------- derivados ----------
    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.m)

    @property
    def resolved_alpha(self) -> float:
        return default_alpha(self.H) if self.alpha is None else self.alpha

    @property
    def depth(self) -> int:
        return depth_for_alpha(self.resolved_alpha)

    @property
    def event_direction(self) -> np.ndarray:
        if self.direction is None:
            return np.eye(self.e)[0]
        return np.asarray(self.direction, dtype=float)

    def build_field(self) -> CoefficientField:
        return build_field(self.field_name, self.d, self.e, self.params)

    def require_experiment(self) -> None:
        if self.n_paths < MIN_EXPERIMENT_PATHS:
            raise ValidationError(
                f"experimentos precisam de n_paths >= {MIN_EXPERIMENT_PATHS}, recebido {self.n_paths}",
                field="n_paths",
            )

    # ---------- serialização ----------
    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Constrói a partir do documento JSON (já validado pelo schema)."""
        if data.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ValidationError(f"versão de config não suportada: {data.get('version')}", field="version")
        fld = data["field"]
        kappa_doc = data.get("kappa")
        if kappa_doc is None:
            kappa = KappaSpec.power(DEFAULT_THETA)
        elif kappa_doc.get("form") == "table":
            kappa = KappaSpec.from_table(kappa_doc.get("table", []))
        else:
            kappa = KappaSpec(form=kappa_doc.get("form", "power"), theta=kappa_doc.get("theta"))
        event = data.get("event", {})
        direction = event.get("direction")
        return cls(
            field_name=fld["name"],
            d=int(fld["d"]),
            e=int(fld["e"]),
            params=dict(fld.get("params", {})),
            a=tuple(float(v) for v in data["a"]),
            H=float(data["H"]),
            alpha=None if data.get("alpha") is None else float(data["alpha"]),
            m=int(data["m"]),
            kappa=kappa,
            eps=tuple(float(v) for v in data.get("eps", DEFAULT_EPS)),
            n_paths=int(data["n_paths"]),
            direction=None if direction is None else tuple(float(v) for v in direction),
            z=float(event.get("z", 1.0)),
            seed=int(data["seed"]),
            z_method=data.get("z_method", "difference"),
            ito=bool(data.get("ito", False)),
            chunk_size=int(data.get("chunk_size", 1000)),
            confidence=float(data.get("confidence", 0.95)),
            sampler=data.get("sampler", "auto"),
        )

    def to_dict(self) -> dict:
        out = {
            "version": CONFIG_VERSION,
            "field": {"name": self.field_name, "d": self.d, "e": self.e, "params": self.params},
            "a": list(self.a),
            "H": self.H,
            "m": self.m,
            "kappa": self.kappa.to_dict(),
            "eps": list(self.eps),
            "n_paths": self.n_paths,
            "event": {"direction": self.event_direction.tolist(), "z": self.z},
            "seed": self.seed,
            "z_method": self.z_method,
            "ito": self.ito,
            "chunk_size": self.chunk_size,
            "confidence": self.confidence,
            "sampler": self.sampler,
        }
        if self.alpha is not None:
            out["alpha"] = self.alpha
        return out

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# =========================
# Estatísticas
# =========================
@dataclass(frozen=True)
class TailEstimate:
    p_hat: float
    rate: float
    ci_lo: float
    ci_hi: float
    hits: int
    n: int
    flags: tuple[str, ...] = ()


def _neg_log_rate(p: float, k2: float) -> float:
    if p <= 0.0:
        return float("inf")
    # 0.0 - ... evita -0.0 quando p = 1
    return 0.0 - float(np.log(p)) / k2


def estimate_tail_rate(samples, z: float, kappa_val: float, confidence: float = 0.95) -> TailEstimate:
    """
    p_hat = fração de amostras >= z, taxa = -log(p_hat) / kappa^2.
    O IC de Wilson para p é levado pela mesma transformação (decrescente em p,
    então os extremos trocam de lugar). p_hat = 0 devolve taxa +inf com a flag zero_hits.
    """
    if not kappa_val > 0.0:
        raise ValidationError(f"kappa deve ser > 0, recebido {kappa_val}", field="kappa")
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n == 0:
        raise ValidationError("nenhuma amostra", field="n_paths")
    hits = int(np.count_nonzero(x >= z))
    p_hat = hits / n
    ci = stats.binomtest(hits, n).proportion_ci(confidence_level=confidence, method="wilson")
    k2 = float(kappa_val) ** 2

    flags = []
    if hits < RELIABLE_HITS:
        flags.append("unreliable")
    if hits == 0:
        flags.append("zero_hits")
    return TailEstimate(
        p_hat=p_hat,
        rate=_neg_log_rate(p_hat, k2),
        ci_lo=_neg_log_rate(float(ci.high), k2),
        ci_hi=_neg_log_rate(float(ci.low), k2),
        hits=hits,
        n=n,
        flags=tuple(flags),
    )


def ks_distance(samples, sigma: float) -> float:
    """Distância sup entre a CDF empírica e a da N(0, sigma^2)."""
    if not sigma > 0.0:
        raise ValidationError(f"sigma deve ser > 0, recebido {sigma}", field="sigma")
    x = np.asarray(samples, dtype=float).ravel()
    return float(stats.kstest(x, "norm", args=(0.0, float(sigma))).statistic)


def gaussian_tail_rate(kappa_val: float, z: float, v: float = 1.0) -> float:
    """Previsão gaussiana em kappa finito: -log(1 - Phi(kappa z / sqrt(v))) / kappa^2."""
    if not kappa_val > 0.0 or not v > 0.0:
        raise ValidationError(f"kappa e v devem ser > 0, recebidos {kappa_val}, {v}")
    return 0.0 - float(special.log_ndtr(-kappa_val * z / np.sqrt(v))) / kappa_val**2


# =========================
# Relatórios
# =========================
@dataclass(frozen=True)
class EpsRecord:
    eps: float
    kappa: float
    n: int
    p_hat: float
    rate: float
    ci_lo: float
    ci_hi: float
    ks: float
    mean: float
    var: float
    flags: tuple[str, ...]
    gaussian_rate: float
    sample_mean: tuple[float, ...]
    sample_covariance: tuple[tuple[float, ...], ...]
    seed: int


def _finite_or_none(value):
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


@dataclass(frozen=True)
class ExperimentReport:
    kind: str
    config: ExperimentConfig
    records: tuple[EpsRecord, ...]
    reference_rate: float
    limit_variance: float
    config_hash: str
    wall_time: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.records:
            row = {col: getattr(r, col) for col in REPORT_COLUMNS}
            row["flags"] = ";".join(r.flags)
            rows.append(row)
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def to_csv(self, path: Path | str) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    def to_dict(self, *, timing: bool = True) -> dict:
        records = []
        for r in self.records:
            rec = {k: _finite_or_none(v) for k, v in asdict(r).items()}
            rec["flags"] = list(r.flags)
            rec["sample_mean"] = list(r.sample_mean)
            rec["sample_covariance"] = [list(row) for row in r.sample_covariance]
            records.append(rec)
        out = {
            "kind": self.kind,
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "reference_rate": self.reference_rate,
            "limit_variance": self.limit_variance,
            "records": records,
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out

    def to_json(self, path: Path | str, *, timing: bool = True) -> Path:
        """Com timing=False o JSON fica reprodutível byte a byte (sem wall_time)."""
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(timing=timing), indent=2, ensure_ascii=False), encoding="utf-8")
        return path


# =========================
# Amostragem de Z^eps_1
# =========================
def eps_seed(seed: int, eps_index: int) -> int:
    """Seed do eps de índice i, derivado de (seed, i) pelo SeedSequence."""
    return int(np.random.SeedSequence([int(seed), int(eps_index)]).generate_state(1, np.uint64)[0])


def _chunk_terminal(
    config: ExperimentConfig,
    coeff: CoefficientField,
    y0,
    eps: float,
    seed: int,
    first: int,
    count: int,
) -> np.ndarray:
    batch = sample_fbm(
        config.grid, config.H, config.d, count, seed, first_path=first, method=config.sampler
    )
    lift = lift_piecewise_linear(batch, config.depth)
    drift = ito_drift_correction(coeff, eps) if config.ito else None
    if config.z_method == "phi":
        kappa_val = config.kappa(eps)
        z_hat = phi_map(coeff, config.a, eps, dilate(lift, 1.0 / kappa_val), config.kappa, drift=drift)
        return z_hat.terminal
    y_eps = solve_rde(drift if drift is not None else coeff, config.a, lift, eps)
    return z_from_solutions(y_eps, y0, eps, config.kappa).terminal


def sample_terminal_deviation(
    config: ExperimentConfig,
    coeff: CoefficientField,
    eps: float,
    seed: int,
    *,
    threads: int = 1,
) -> np.ndarray:
    """Amostras de Z^eps_1, shape (n_paths, e), em pedaços de tamanho fixo."""
    y0 = solve_base_ode(coeff, config.a, config.grid)
    starts = range(0, config.n_paths, config.chunk_size)
    jobs = (
        delayed(_chunk_terminal)(
            config, coeff, y0, eps, seed, first, min(config.chunk_size, config.n_paths - first)
        )
        for first in starts
    )
    try:
        parts = Parallel(n_jobs=threads, prefer="threads")(jobs)
    except NumericalError as exc:
        if exc.seed is None:
            exc.seed = seed
        raise
    return np.concatenate(parts, axis=0)


# =========================
# Experimentos
# =========================
def _run(config: ExperimentConfig, kind: str, *, threads: int) -> ExperimentReport:
    started = time.perf_counter()
    config.require_experiment()
    coeff = config.build_field()
    if coeff.finite_difference:
        logger.info("campo '%s' usa diferenças finitas em alguma derivada", coeff.name)

    y0 = solve_base_ode(coeff, config.a, config.grid)
    limit = limit_covariance(coeff, y0, config.grid, config.H, full=False)
    direction = config.event_direction
    v = event_variance(limit, direction)
    reference = terminal_rate(limit, direction, config.z)
    sigma = float(np.sqrt(v))

    records = []
    for idx, eps in enumerate(config.eps):
        seed = eps_seed(config.seed, idx)
        kappa_val = config.kappa(eps)
        try:
            zs = sample_terminal_deviation(config, coeff, eps, seed, threads=threads)
        except RoughMDPError:
            logger.error("falha em eps=%g (seed=%d)", eps, seed)
            raise
        proj = zs @ direction
        tail = estimate_tail_rate(proj, config.z, kappa_val, config.confidence)
        flags = list(tail.flags)
        if coeff.finite_difference:
            flags.append("finite_difference")
        cov = np.atleast_2d(np.cov(zs, rowvar=False))
        records.append(
            EpsRecord(
                eps=float(eps),
                kappa=float(kappa_val),
                n=tail.n,
                p_hat=tail.p_hat,
                rate=tail.rate,
                ci_lo=tail.ci_lo,
                ci_hi=tail.ci_hi,
                # Z^eps_1 ~ Xi_1 / kappa, então a comparação é feita em kappa * Z
                ks=ks_distance(kappa_val * proj, sigma),
                mean=float(np.mean(proj)),
                var=float(np.var(proj, ddof=1)),
                flags=tuple(flags),
                gaussian_rate=gaussian_tail_rate(kappa_val, config.z, v),
                sample_mean=tuple(float(v_) for v_ in zs.mean(axis=0)),
                sample_covariance=tuple(tuple(float(c) for c in row) for row in cov),
                seed=seed,
            )
        )
        logger.info(
            "%s eps=%g kappa=%.4g p_hat=%.5g rate=%.5g (ref %.5g)",
            kind, eps, kappa_val, tail.p_hat, tail.rate, reference,
        )

    return ExperimentReport(
        kind=kind,
        config=config,
        records=tuple(records),
        reference_rate=reference,
        limit_variance=v,
        config_hash=config.config_hash(),
        wall_time=time.perf_counter() - started,
    )


def run_clt_experiment(config: ExperimentConfig, *, threads: int = 1) -> ExperimentReport:
    """Caso kappa = 1: Z^eps_1 deve ser próximo da gaussiana limite para todo eps."""
    config = replace(config, kappa=KappaSpec.constant(config.eps))
    return _run(config, "clt", threads=threads)


def run_mdp_experiment(config: ExperimentConfig, *, threads: int = 1) -> ExperimentReport:
    """Taxa normalizada -kappa^-2 log p_hat contra terminal_rate, por eps."""
    config.kappa.check_mdp_regime(config.eps)
    return _run(config, "mdp", threads=threads)


def rate_curve(report: ExperimentReport) -> Sequence[tuple[float, float]]:
    """(kappa, taxa) dos eps confiáveis, na ordem da grade."""
    return [(r.kappa, r.rate) for r in report.records if "unreliable" not in r.flags]
