"""
Gerador de trajetórias do campo transversal B(t)
Processo gaussiano (distribuição de treino/teste) e campos de quench e
periódico para checar generalização
"""
import logging
from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache
from typing import Any, Dict, Optional

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from ..utils.erros import DomainError, NumericalError, ShapeError
from .quantum import TimeGrid

logger = logging.getLogger(__name__)

FIELD_KINDS = ("gaussian_process", "quench", "periodic")


@dataclass(frozen=True)
class GpParams:
    """Kernel quadrático-exponencial σ²·exp(−(t−t')²/(2ℓ_c²)) + jitter·δ"""

    mean: float = 0.0
    variance: float = 1.0
    correlation_time: float = 1.0
    jitter: float = 1e-8

    def __post_init__(self):
        if not self.variance > 0:
            raise DomainError(f"variance deve ser positiva (recebido {self.variance})")
        if not self.correlation_time > 0:
            raise DomainError(f"correlation_time deve ser positivo (recebido {self.correlation_time})")
        if not self.jitter >= 0:
            raise DomainError(f"jitter deve ser >= 0 (recebido {self.jitter})")

    def as_dict(self) -> Dict[str, float]:
        return {
            "mean": self.mean,
            "variance": self.variance,
            "correlation_time": self.correlation_time,
            "jitter": self.jitter,
        }


@dataclass(frozen=True)
class FieldTrajectory:
    """Valores de B(t_k) alinhados à grade, com metadados do gerador"""

    values: np.ndarray
    grid: TimeGrid
    kind: str
    params: Dict[str, Any] = dc_field(default_factory=dict)
    seed: Optional[int] = None

    def __post_init__(self):
        valores = np.asarray(self.values, dtype=np.float64)
        if valores.shape != (self.grid.n_steps + 1,):
            raise ShapeError(f"Campo com forma {valores.shape}, esperado ({self.grid.n_steps + 1},)")
        if not np.all(np.isfinite(valores)):
            raise DomainError("Campo contém valores não finitos")
        valores.setflags(write=False)
        object.__setattr__(self, "values", valores)

    def metadata(self) -> Dict[str, Any]:
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed}


def gp_covariance(params: GpParams, grid: TimeGrid) -> np.ndarray:
    """Matriz de covariância do processo na grade (com jitter na diagonal)"""
    t = grid.times
    diferencas = t[:, None] - t[None, :]
    cov = params.variance * np.exp(-(diferencas ** 2) / (2.0 * params.correlation_time ** 2))
    return cov + params.jitter * np.eye(t.size)


@lru_cache(maxsize=32)
def _fator_cholesky(params: GpParams, grid: TimeGrid) -> np.ndarray:
    try:
        fator = cholesky(gp_covariance(params, grid), lower=True)
    except LinAlgError as e:
        raise NumericalError(
            f"Covariância não é positiva-definida com jitter={params.jitter:g}; "
            f"aumente o jitter ({e})"
        ) from e
    fator.setflags(write=False)
    return fator


def sample_gp(params: GpParams, grid: TimeGrid, seed: int) -> FieldTrajectory:
    """
    Sorteia uma trajetória do processo gaussiano via Cholesky

    Args:
        params: parâmetros do kernel
        grid: grade temporal
        seed: semente (mesma seed → trajetória idêntica bit a bit)

    Returns:
        FieldTrajectory
    """
    fator = _fator_cholesky(params, grid)
    ruido = np.random.default_rng(seed).standard_normal(grid.n_steps + 1)
    valores = params.mean + fator @ ruido
    return FieldTrajectory(valores, grid, "gaussian_process", params.as_dict(), seed)


def quench_field(b_before: float, b_after: float, t_quench: float, grid: TimeGrid) -> FieldTrajectory:
    """Degrau: b_before para t < t_quench, b_after a partir de t_quench"""
    if not 0.0 <= t_quench <= grid.t_final:
        raise DomainError(f"t_quench={t_quench} fora de [0, {grid.t_final}]")
    # tolerância relativa para pontos da grade que coincidem com t_quench
    antes = grid.times < t_quench - 1e-12 * grid.t_final
    valores = np.where(antes, b_before, b_after).astype(np.float64)
    parametros = {"b_before": b_before, "b_after": b_after, "t_quench": t_quench}
    return FieldTrajectory(valores, grid, "quench", parametros)


def periodic_field(
    amplitude: float, frequency: float, phase: float, offset: float, grid: TimeGrid
) -> FieldTrajectory:
    """offset + amplitude·cos(2π·frequency·t + phase)"""
    if frequency < 0:
        raise DomainError(f"frequency deve ser >= 0 (recebido {frequency})")
    valores = offset + amplitude * np.cos(2.0 * np.pi * frequency * grid.times + phase)
    parametros = {"amplitude": amplitude, "frequency": frequency, "phase": phase, "offset": offset}
    return FieldTrajectory(valores, grid, "periodic", parametros)


def constant_field(value: float, grid: TimeGrid) -> FieldTrajectory:
    return FieldTrajectory(np.full(grid.n_steps + 1, float(value)), grid, "constant", {"value": value})


def sample_field(kind: str, gp: GpParams, grid: TimeGrid, seed: int) -> FieldTrajectory:
    """
    Sorteia um campo do tipo pedido a partir da seed

    Quench e periódico usam a média e o desvio do processo gaussiano como
    escala, para que as amplitudes fiquem na faixa vista no treino:
    quench com b_before, b_after ~ U[μ−2σ, μ+2σ] e t_quench ~ U[0, t_final];
    periódico com amplitude ~ U[σ/2, 2σ], frequência ~ U[0.5, 3]/t_final,
    fase ~ U[0, 2π] e offset μ.

    Args:
        kind: um de FIELD_KINDS
        gp: parâmetros do processo (escala dos outros tipos)
        grid: grade temporal
        seed: semente

    Returns:
        FieldTrajectory com a seed anotada
    """
    if kind == "gaussian_process":
        return sample_gp(gp, grid, seed)
    if kind not in FIELD_KINDS:
        raise DomainError(f"Tipo de campo desconhecido: {kind} (opções: {', '.join(FIELD_KINDS)})")

    rng = np.random.default_rng(seed)
    escala = float(np.sqrt(gp.variance))
    if kind == "quench":
        antes, depois = gp.mean + escala * rng.uniform(-2.0, 2.0, size=2)
        campo = quench_field(float(antes), float(depois), float(rng.uniform(0.0, grid.t_final)), grid)
    else:
        campo = periodic_field(
            amplitude=escala * float(rng.uniform(0.5, 2.0)),
            frequency=float(rng.uniform(0.5, 3.0)) / grid.t_final,
            phase=float(rng.uniform(0.0, 2.0 * np.pi)),
            offset=gp.mean,
            grid=grid,
        )
    return replace(campo, seed=seed)
