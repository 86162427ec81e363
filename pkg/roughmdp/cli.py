"""
Linha de comando: python -m roughmdp <sample|clt|mdp|rate> --config CFG [--out DIR] [--seed N] [--threads N]

Cada execução grava um manifest.json com a config resolvida e o sha256 de cada
artefato; o próprio manifest é aceito de volta como --config.

Códigos de saída: 0 ok, 2 validação, 3 falha numérica, 4 I/O.
Verbosidade pela variável ROUGHMDP_LOG (DEBUG, INFO, WARNING, ERROR).
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import os
from pathlib import Path

import click
import numpy as np

from roughmdp.config import MANIFEST_KIND, load_config
from roughmdp.errors import NumericalError, RoughMDPError, exit_code_for
from roughmdp.fbm import sample_fbm_chunked
from roughmdp.mdp import ExperimentConfig, ExperimentReport, run_clt_experiment, run_mdp_experiment
from roughmdp.rde import solve_base_ode
from roughmdp.roughpath import lift_piecewise_linear
from roughmdp.skeleton import event_variance, limit_covariance, terminal_rate

logger = logging.getLogger("roughmdp")

LOG_ENV = "ROUGHMDP_LOG"


def configure_logging() -> None:
    level_name = os.environ.get(LOG_ENV, "WARNING").upper()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger("roughmdp").setLevel(level)


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(
    command: str,
    config_path: Path,
    config: ExperimentConfig,
    out_dir: Path,
    artifacts: list[Path],
    wall_time: float | None = None,
) -> Path:
    manifest = {
        "kind": MANIFEST_KIND,
        "version": 1,
        "command": command,
        "config_path": str(config_path),
        "config": config.to_dict(),
        "out_dir": str(out_dir),
        "artifacts": {p.name: sha256_file(p) for p in artifacts},
    }
    if wall_time is not None:
        manifest["wall_time"] = wall_time
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, ensure_ascii=False), encoding="utf-8")
    return path


def report_markdown(report: ExperimentReport) -> str:
    cfg = report.config
    titulo = "CLT (kappa = 1)" if report.kind == "clt" else "MDP (velocidade kappa(eps)^2)"
    linhas = [
        "| eps | kappa | n | p_hat | taxa | IC | KS | média | var | flags |",
        "|---|---|---|---|---|---|---|---|---|---|",
    ]
    for r in report.records:
        linhas.append(
            f"| {r.eps:g} | {r.kappa:.4g} | {r.n} | {r.p_hat:.5g} | {r.rate:.5g} | "
            f"[{r.ci_lo:.4g}, {r.ci_hi:.4g}] | {r.ks:.4g} | {r.mean:.4g} | {r.var:.4g} | "
            f"{', '.join(r.flags) or '-'} |"
        )
    tabela = "\n".join(linhas)
    return f"""# Experimento {titulo}

## Configuração
- Campo: **{cfg.field_name}** (d={cfg.d}, e={cfg.e})
- H = {cfg.H}, alpha = {cfg.resolved_alpha:.4g} (lift de nível {cfg.depth}), grade m = {cfg.m}
- Evento: <d, Z_1> >= {cfg.z:g}, d = {cfg.event_direction.tolist()}
- Caminhos por eps: {cfg.n_paths}, seed = {cfg.seed}
- Cálculo de Z: `{cfg.z_method}`{" (Itô)" if cfg.ito else ""}
- Hash da config: `{report.config_hash}`

## Referência do limite
- Variância do evento v = d' Sigma_1 d = **{report.limit_variance:.6g}**
- Taxa terminal z^2 / (2v) = **{report.reference_rate:.6g}**

## Resultados por eps
{tabela}

Linhas marcadas com `unreliable` têm p_hat * n < 20 e não entram na leitura da curva.
"""


def _run_guarded(command: str):
    """Converte erros do pacote em mensagens e códigos de saída."""

    def decorator(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            configure_logging()
            try:
                fn(*args, **kwargs)
            except MemoryError as exc:
                err = NumericalError("memória insuficiente", stage=command)
                click.echo(f"erro em '{command}': {err}", err=True)
                raise SystemExit(exit_code_for(err)) from exc
            except (RoughMDPError, OSError) as exc:
                code = exit_code_for(exc)
                click.echo(f"erro em '{command}': {exc}", err=True)
                raise SystemExit(code) from exc

        return wrapper

    return decorator


def _common_options(default_out: Path | None = Path("out")):
    def decorator(fn):
        fn = click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True,
                          help="Threads (pedaços de caminhos ou FFT do limite).")(fn)
        fn = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
                          help="Substitui o seed da config.")(fn)
        fn = click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path),
                          default=default_out, show_default=default_out is not None,
                          help="Diretório de saída.")(fn)
        fn = click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path),
                          required=True, help="Config JSON (ou manifest.json).")(fn)
        return fn

    return decorator


@click.group()
def main() -> None:
    """Experimentos de desvios moderados para RDEs guiadas por fBm."""


@main.command("sample")
@_common_options()
@_run_guarded("sample")
def cmd_sample(config_path: Path, out_dir: Path, seed: int | None, threads: int) -> None:
    """Amostra drivers fBm e grava os caminhos e o lift em CSV."""
    cfg = load_config(config_path, seed=seed)
    batch = sample_fbm_chunked(
        cfg.grid, cfg.H, cfg.d, cfg.n_paths, cfg.seed,
        chunk_size=cfg.chunk_size, threads=threads, method=cfg.sampler,
    )
    lift = lift_piecewise_linear(batch, cfg.depth)

    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = [batch.to_csv(out_dir / "fbm_paths.csv"), lift.to_csv(out_dir / "lift.csv")]
    write_manifest("sample", config_path, cfg, out_dir, artifacts)
    click.echo(f"✅ {cfg.n_paths} caminhos (método {batch.method}) gravados em {out_dir}")


def _experiment(command: str, runner, config_path: Path, out_dir: Path, seed: int | None, threads: int) -> None:
    cfg = load_config(config_path, seed=seed)
    report = runner(cfg, threads=threads)

    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = [
        report.to_csv(out_dir / "report.csv"),
        report.to_json(out_dir / "report.json", timing=False),
    ]
    readme = out_dir / "README.md"
    readme.write_text(report_markdown(report), encoding="utf-8")
    artifacts.append(readme)
    write_manifest(command, config_path, cfg, out_dir, artifacts, wall_time=report.wall_time)
    click.echo(f"✅ {command} concluído ({len(report.records)} valores de eps) em {out_dir}")


@main.command("clt")
@_common_options()
@_run_guarded("clt")
def cmd_clt(config_path: Path, out_dir: Path, seed: int | None, threads: int) -> None:
    """CLT: kappa = 1, diagnósticos gaussianos por eps."""
    _experiment("clt", run_clt_experiment, config_path, out_dir, seed, threads)


@main.command("mdp")
@_common_options()
@_run_guarded("mdp")
def cmd_mdp(config_path: Path, out_dir: Path, seed: int | None, threads: int) -> None:
    """MDP: taxa normalizada -kappa^-2 log p_hat por eps."""
    _experiment("mdp", run_mdp_experiment, config_path, out_dir, seed, threads)


@main.command("rate")
@_common_options(default_out=None)
@_run_guarded("rate")
def cmd_rate(config_path: Path, out_dir: Path | None, seed: int | None, threads: int) -> None:
    """
    Imprime a taxa terminal z^2 / (2v) do evento da config.

    Com --out grava também rate.json, as marginais do limite e o manifest.
    """
    cfg = load_config(config_path, seed=seed)
    coeff = cfg.build_field()
    y0 = solve_base_ode(coeff, cfg.a, cfg.grid)
    limit = limit_covariance(coeff, y0, cfg.grid, cfg.H, full=False, workers=threads)
    rate = terminal_rate(limit, cfg.event_direction, cfg.z)
    terminal = np.asarray(limit.terminal_covariance).tolist()
    logger.info("taxa terminal %.17g (variância terminal %s)", rate, terminal)

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        rate_path = out_dir / "rate.json"
        doc = {
            "rate": rate,
            "event_variance": event_variance(limit, cfg.event_direction),
            "z": cfg.z,
            "direction": cfg.event_direction.tolist(),
            "terminal_covariance": terminal,
        }
        rate_path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
        artifacts = [rate_path, *limit.to_csv(out_dir)]
        write_manifest("rate", config_path, cfg, out_dir, artifacts)
    click.echo(f"{rate:.10g}")


if __name__ == "__main__":
    main()
