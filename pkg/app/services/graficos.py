"""
Saída de dados para gráficos
CSV e JSON validados antes da escrita e gráfico de linhas em SVG
"""
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
from xml.sax.saxutils import escape

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..utils.erros import DomainError, ShapeError

logger = logging.getLogger(__name__)

Caminho = Union[str, Path]


# ---------------------------------------------------------------------------
# Schemas dos relatórios JSON

class _Schema(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class EvalReportSchema(_Schema):
    role: str
    observable_set: Optional[str] = None
    sample_budget: int = Field(ge=0)
    n_samples: int = Field(ge=1)
    overall_mse: float = Field(ge=0)
    per_timestep_mse: List[float]
    per_sample_mse: List[float]
    worst_index: int = Field(ge=0)
    worst_seed: int
    bootstrap_variance: float = Field(ge=0)


class ExperimentReportSchema(_Schema):
    experiment: str
    config_hash: str
    rows: List[Dict[str, Any]]
    summary: Dict[str, Any] = Field(default_factory=dict)


def _formatar(valor: Any) -> str:
    if isinstance(valor, (bool, np.bool_)):
        return str(int(valor))
    if isinstance(valor, (int, np.integer)):
        return str(int(valor))
    if isinstance(valor, (float, np.floating)):
        if not math.isfinite(valor):
            raise DomainError(f"Valor não finito na saída CSV: {valor}")
        return format(float(valor), ".17g")
    if isinstance(valor, str):
        return valor
    raise DomainError(f"Tipo não suportado na saída CSV: {type(valor).__name__}")


def escrever_csv(path: Caminho, colunas: Sequence[str], linhas: Sequence[Sequence[Any]]) -> Path:
    """
    Grava um CSV conferindo largura das linhas e finitude dos números

    Args:
        path: destino
        colunas: cabeçalho
        linhas: valores (int, float ou str)

    Returns:
        Path: caminho gravado
    """
    path = Path(path)
    if len(set(colunas)) != len(colunas):
        raise DomainError(f"Colunas duplicadas no CSV: {list(colunas)}")

    texto = [",".join(colunas)]
    for i, linha in enumerate(linhas):
        if len(linha) != len(colunas):
            raise ShapeError(f"Linha {i} com {len(linha)} valores, esperado {len(colunas)}")
        texto.append(",".join(_formatar(v) for v in linha))

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(texto) + "\n", encoding="utf-8")
    logger.debug(f"CSV gravado: {path} ({len(linhas)} linhas)")
    return path


def escrever_json(path: Caminho, schema: type, dados: Dict[str, Any]) -> Path:
    """Valida `dados` com o schema pydantic e grava com chaves ordenadas"""
    try:
        modelo = schema.model_validate(dados)
    except ValidationError as e:
        raise DomainError(f"Relatório inválido para {schema.__name__}: {e}") from e
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(modelo.model_dump(mode="json"), indent=2, sort_keys=True), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# SVG

LARGURA, ALTURA, MARGEM = 640, 400, 60
CORES = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def grafico_linhas(
    path: Caminho,
    series: Dict[str, Tuple[Sequence[float], Sequence[float]]],
    titulo: str = "",
    rotulo_x: str = "",
    rotulo_y: str = "",
    log_y: bool = False,
) -> Path:
    """Gráfico de linhas simples; com log_y os valores precisam ser positivos"""
    if not series:
        raise DomainError("Nenhuma série para desenhar")

    pontos = {}
    for nome, (x, y) in series.items():
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape or x.ndim != 1 or x.size == 0:
            raise ShapeError(f"Série '{nome}' com formas {x.shape} e {y.shape}")
        if log_y:
            if np.any(y <= 0):
                raise DomainError(f"Série '{nome}' tem valores <= 0 em escala log")
            y = np.log10(y)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DomainError(f"Série '{nome}' contém valores não finitos")
        pontos[nome] = (x, y)

    todos_x = np.concatenate([x for x, _ in pontos.values()])
    todos_y = np.concatenate([y for _, y in pontos.values()])
    x_min, x_max = float(todos_x.min()), float(todos_x.max())
    y_min, y_max = float(todos_y.min()), float(todos_y.max())
    if x_max == x_min:
        x_max = x_min + 1.0
    if y_max == y_min:
        y_max = y_min + 1.0

    def px(valor: float) -> float:
        return MARGEM + (valor - x_min) / (x_max - x_min) * (LARGURA - 2 * MARGEM)

    def py(valor: float) -> float:
        return ALTURA - MARGEM - (valor - y_min) / (y_max - y_min) * (ALTURA - 2 * MARGEM)

    partes = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{LARGURA}" height="{ALTURA}" font-family="sans-serif" font-size="12">',
        f'<rect width="{LARGURA}" height="{ALTURA}" fill="white"/>',
        f'<line x1="{MARGEM}" y1="{ALTURA - MARGEM}" x2="{LARGURA - MARGEM}" y2="{ALTURA - MARGEM}" stroke="black"/>',
        f'<line x1="{MARGEM}" y1="{MARGEM}" x2="{MARGEM}" y2="{ALTURA - MARGEM}" stroke="black"/>',
        f'<text x="{LARGURA / 2}" y="{MARGEM / 2}" text-anchor="middle" font-size="14">{escape(titulo)}</text>',
        f'<text x="{LARGURA / 2}" y="{ALTURA - 15}" text-anchor="middle">{escape(rotulo_x)}</text>',
        f'<text x="15" y="{ALTURA / 2}" text-anchor="middle" transform="rotate(-90 15 {ALTURA / 2})">'
        f"{escape(('log10 ' if log_y else '') + rotulo_y)}</text>",
        f'<text x="{MARGEM}" y="{ALTURA - MARGEM + 15}" text-anchor="middle">{x_min:.3g}</text>',
        f'<text x="{LARGURA - MARGEM}" y="{ALTURA - MARGEM + 15}" text-anchor="middle">{x_max:.3g}</text>',
        f'<text x="{MARGEM - 5}" y="{ALTURA - MARGEM}" text-anchor="end">{y_min:.3g}</text>',
        f'<text x="{MARGEM - 5}" y="{MARGEM + 4}" text-anchor="end">{y_max:.3g}</text>',
    ]
    for i, (nome, (x, y)) in enumerate(pontos.items()):
        cor = CORES[i % len(CORES)]
        coords = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        partes.append(f'<polyline fill="none" stroke="{cor}" stroke-width="1.5" points="{coords}"/>')
        y_legenda = MARGEM + 16 * i
        partes.append(f'<text x="{LARGURA - MARGEM + 5}" y="{y_legenda}" fill="{cor}">{escape(nome)}</text>')
    partes.append("</svg>")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(partes) + "\n", encoding="utf-8")
    return path
