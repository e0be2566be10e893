"""
Configurações do QuantumTL
Variáveis de ambiente do processo e configuração de experimentos (arquivo JSON)
"""
import json
import os
from pathlib import Path
from typing import List, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError, field_validator, model_validator

from .services.campos import GpParams
from .services.dataset import DatasetConfig, ObservableSet
from .services.quantum import HamiltonianParams, TimeGrid
from .services.rede import TrainConfig
from .utils.erros import ConfigValidationError

# Carregar variáveis do arquivo .env
load_dotenv()

NIVEIS_LOG = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Config:
    """Classe de configuração centralizada do processo"""

    # Diretório de saída (sobrepõe o output_dir do arquivo de experimento)
    OUTPUT_DIR = os.getenv("QTL_OUTPUT_DIR", "")

    # Registro de artefatos; vazio → SQLite dentro do diretório de saída
    DATABASE_URL = os.getenv("QTL_DATABASE_URL", "")

    WORKERS = int(os.getenv("QTL_WORKERS", "1"))
    LOG_LEVEL = os.getenv("QTL_LOG_LEVEL", "INFO").upper()

    @classmethod
    def validar_config(cls):
        """Valida as variáveis de ambiente"""
        erros = []

        if cls.WORKERS < 1:
            erros.append("QTL_WORKERS deve ser >= 1")

        if cls.LOG_LEVEL not in NIVEIS_LOG:
            erros.append(f"QTL_LOG_LEVEL inválido: {cls.LOG_LEVEL}")

        if erros:
            raise ConfigValidationError(erros)

        return True

    @staticmethod
    def resolver_output_dir(output_dir: str) -> Path:
        """A variável de ambiente é lida na chamada para valer também em testes"""
        return Path(os.getenv("QTL_OUTPUT_DIR") or output_dir)

    @staticmethod
    def resolver_workers(padrao: int) -> int:
        return int(os.getenv("QTL_WORKERS") or padrao)

    @staticmethod
    def database_url(output_dir: Path) -> str:
        return os.getenv("QTL_DATABASE_URL") or f"sqlite:///{Path(output_dir) / 'registro.db'}"


# ---------------------------------------------------------------------------
# Configuração de experimento

class _Secao(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PhysicsConfig(_Secao):
    n_spins: int = Field(8, ge=2)
    coupling: float = 1.0
    longitudinal: float = 0.0
    t_final: float = Field(10.0, gt=0)
    n_steps: PositiveInt = 100
    substeps: PositiveInt = 10
    # valores de g comparados lado a lado (integrável e não integrável)
    panels: List[float] = Field(default_factory=lambda: [0.0, 0.5], min_length=1)

    @field_validator("n_spins")
    @classmethod
    def _par(cls, v: int) -> int:
        if v % 2 != 0:
            raise ValueError("n_spins deve ser par")
        return v

    @field_validator("panels")
    @classmethod
    def _paineis(cls, v: List[float]) -> List[float]:
        if len(set(v)) != len(v):
            raise ValueError("panels com valores repetidos")
        return sorted(float(g) for g in v)


class FieldConfig(_Secao):
    mean: float = 0.0
    variance: float = Field(1.0, gt=0)
    correlation_time: float = Field(1.0, gt=0)
    jitter: float = Field(1e-8, ge=0)


class BudgetConfig(_Secao):
    source: List[PositiveInt] = Field(default_factory=lambda: [5000, 50000], min_length=1)
    tl: PositiveInt = 5000
    dt: List[PositiveInt] = Field(default_factory=lambda: [50000], min_length=1)
    frontend: PositiveInt = 5000
    test: PositiveInt = 1000

    @property
    def max_train(self) -> int:
        return max(max(self.source), self.tl, max(self.dt), self.frontend)


class TrainingConfig(_Secao):
    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    batch_size: PositiveInt = 32
    max_epochs: int = Field(500, ge=0)
    patience: PositiveInt = 30
    validation_fraction: float = Field(0.1, gt=0, lt=1)
    lstm_width: Optional[PositiveInt] = None
    head_width: Optional[PositiveInt] = None

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            validation_fraction=self.validation_fraction,
            seed=seed,
        )


class ExperimentConfig(_Secao):
    """Árvore completa de um experimento; chaves desconhecidas são erro"""

    name: str = "full"
    physics: PhysicsConfig = Field(default_factory=PhysicsConfig)
    field: FieldConfig = Field(default_factory=FieldConfig)
    observable_sets: List[ObservableSet] = Field(default_factory=lambda: list(ObservableSet), min_length=1)
    budgets: BudgetConfig = Field(default_factory=BudgetConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    data_seed: int = Field(0, ge=0)
    workers: PositiveInt = 1
    entropy_sweep: bool = False
    # campos fora da distribuição de treino usados para checar generalização
    generalization_fields: List[Literal["quench", "periodic"]] = Field(default_factory=lambda: ["quench", "periodic"])
    output_dir: str = "resultados"

    @model_validator(mode="after")
    def _coerente(self) -> "ExperimentConfig":
        if self.physics.n_spins < 4 and any(o is not ObservableSet.FIRST_ORDER for o in self.observable_sets):
            raise ValueError("correlações de dois pontos exigem physics.n_spins >= 4")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds duplicadas")
        if len(set(self.generalization_fields)) != len(self.generalization_fields):
            raise ValueError("generalization_fields com tipos repetidos")
        return self

    def hamiltonian_params(self, longitudinal: Optional[float] = None) -> HamiltonianParams:
        g = self.physics.longitudinal if longitudinal is None else longitudinal
        return HamiltonianParams(self.physics.n_spins, self.physics.coupling, g)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.physics.t_final, self.physics.n_steps)

    def gp_params(self) -> GpParams:
        return GpParams(**self.field.model_dump())

    def dataset_config(
        self,
        longitudinal: Optional[float] = None,
        entropy_sweep: Optional[bool] = None,
        field_kind: str = "gaussian_process",
    ) -> DatasetConfig:
        obs = ObservableSet.COMBINED if self.physics.n_spins >= 4 else ObservableSet.FIRST_ORDER
        return DatasetConfig(
            params=self.hamiltonian_params(longitudinal),
            grid=self.time_grid(),
            gp=self.gp_params(),
            obs=obs,
            entropy_sweep=self.entropy_sweep if entropy_sweep is None else entropy_sweep,
            substeps=self.physics.substeps,
            field_kind=field_kind,
        )


PRESETS = {
    "full": ExperimentConfig(),
    "desk": ExperimentConfig(
        name="desk",
        physics=PhysicsConfig(n_spins=6),
        budgets=BudgetConfig(source=[1000, 10000], tl=1000, dt=[1000, 10000], frontend=1000, test=500),
    ),
}


def preset(nome: str) -> ExperimentConfig:
    if nome not in PRESETS:
        raise ConfigValidationError([f"preset desconhecido: {nome} (opções: {', '.join(PRESETS)})"])
    return PRESETS[nome].model_copy(deep=True)


def _mensagens(erro: ValidationError) -> List[str]:
    return [f"{'.'.join(str(p) for p in e['loc']) or '<raiz>'}: {e['msg']}" for e in erro.errors()]


def parse_config(dados: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(dados)
    except ValidationError as e:
        raise ConfigValidationError(_mensagens(e)) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Lê e valida o arquivo JSON de experimento"""
    path = Path(path)
    if not path.exists():
        raise ConfigValidationError([f"arquivo de configuração não encontrado: {path}"])
    try:
        dados = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigValidationError([f"JSON inválido em {path}: {e}"]) from e
    return parse_config(dados)


def save_config(cfg: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def verificar_output_dir(path: Path) -> Path:
    """Cria o diretório de saída e confere permissão de escrita"""
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigValidationError([f"output_dir: não foi possível criar {path} ({e})"]) from e
    if not os.access(path, os.W_OK):
        raise ConfigValidationError([f"output_dir: sem permissão de escrita em {path}"])
    return path


# Instância global de configuração
config = Config()
