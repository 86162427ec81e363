"""
Regera os CSVs golden usados em tests/test_cli.py.

Roda `mdp` e `clt` com configs/identity_mdp_small.json e grava os report.csv em
tests/golden/identity_mdp_small.csv e tests/golden/identity_clt_small.csv.
Só rode de novo quando uma mudança na numérica for intencional.

Como rodar (na raiz do repo):
    python3 -m scripts.update_golden
"""

from __future__ import annotations

from pathlib import Path

from roughmdp.config import load_config
from roughmdp.mdp import run_clt_experiment, run_mdp_experiment


REPO_ROOT = Path(__file__).resolve().parents[1]
CONFIG_PATH = REPO_ROOT / "configs" / "identity_mdp_small.json"
GOLDEN_DIR = REPO_ROOT / "tests" / "golden"

GOLDEN_RUNS = {
    "identity_mdp_small.csv": run_mdp_experiment,
    "identity_clt_small.csv": run_clt_experiment,
}


def main() -> None:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    cfg = load_config(CONFIG_PATH)
    for name, runner in GOLDEN_RUNS.items():
        path = runner(cfg).to_csv(GOLDEN_DIR / name)
        print("✅ Golden atualizado:", path)


if __name__ == "__main__":
    main()
