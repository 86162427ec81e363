"""
Leitura e validação do JSON de configuração (schema estrito, chaves desconhecidas
são rejeitadas). Um manifest de execução também é aceito: a config resolvida
embutida nele é usada.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import jsonschema
from jsonschema.exceptions import best_match

from roughmdp.errors import ValidationError
from roughmdp.mdp import CONFIG_VERSION, SAMPLERS, Z_METHODS, ExperimentConfig

logger = logging.getLogger(__name__)

MANIFEST_KIND = "roughmdp.run_manifest"

_MATRIX = {"type": "array", "items": {"type": ["number", "array"]}}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "field", "a", "H", "m", "n_paths", "seed"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "field": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name", "d", "e"],
            "properties": {
                "name": {"enum": ["linear", "bilinear", "tanh"]},
                "d": {"type": "integer", "minimum": 1},
                "e": {"type": "integer", "minimum": 1},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "A": _MATRIX,
                        "c": {"type": "array", "items": {"type": "number"}},
                        "S": _MATRIX,
                        "B": _MATRIX,
                        "gamma": {"type": "number"},
                    },
                },
            },
        },
        "a": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "H": {"type": "number", "exclusiveMinimum": 0.25, "maximum": 0.5},
        "alpha": {"type": "number", "exclusiveMinimum": 0.25, "maximum": 0.5},
        "m": {"type": "integer", "minimum": 0, "maximum": 24},
        "kappa": {
            "type": "object",
            "additionalProperties": False,
            "required": ["form"],
            "properties": {
                "form": {"enum": ["power", "table"]},
                "theta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "table": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                },
            },
        },
        "eps": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        },
        "n_paths": {"type": "integer", "minimum": 1},
        "event": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "direction": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "z": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "z_method": {"enum": list(Z_METHODS)},
        "ito": {"type": "boolean"},
        "chunk_size": {"type": "integer", "minimum": 1},
        "confidence": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "sampler": {"enum": list(SAMPLERS)},
    },
}


def validate_document(doc: dict) -> None:
    """Valida contra o schema; o erro aponta o caminho da chave problemática."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    error = best_match(validator.iter_errors(doc))
    if error is None:
        return
    path = ".".join(str(p) for p in error.absolute_path)
    if error.validator == "required":
        missing = error.message.split("'")[1] if "'" in error.message else ""
        path = f"{path}.{missing}" if path else missing
    elif error.validator == "additionalProperties" and not path:
        path = "<raiz>"
    raise ValidationError(error.message, field=path or None)


def config_from_document(doc: dict, *, seed: int | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ValidationError("a config precisa ser um objeto JSON")
    if doc.get("kind") == MANIFEST_KIND:
        logger.info("manifest de execução recebido; usando a config resolvida")
        doc = doc.get("config", {})
    doc = dict(doc)
    if seed is not None:
        doc["seed"] = int(seed)
    validate_document(doc)
    return ExperimentConfig.from_dict(doc)


def load_config(path: Path | str, *, seed: int | None = None) -> ExperimentConfig:
    """Lê o JSON (config ou manifest), aplica o override de seed e valida."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config não encontrada: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"JSON inválido em {path}: {exc}", field="config") from exc
    return config_from_document(doc, seed=seed)
