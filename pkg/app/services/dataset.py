"""
Montagem, persistência e leitura dos datasets de trajetórias
Seleção do conjunto de observáveis, divisão treino/teste e features de cada modelo
"""
import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field as dc_field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.erros import (
    ChecksumError,
    DatasetFormatError,
    DomainError,
    PropagationError,
    ShapeError,
    VersionError,
)
from ..utils.paralelo import map_ordenado
from .campos import FIELD_KINDS, FieldTrajectory, GpParams, sample_field
from .graficos import escrever_csv
from .quantum import (
    EIXOS,
    HamiltonianParams,
    TimeGrid,
    entanglement_entropy,
    expectations_batch,
    initial_state,
    propagate,
)

logger = logging.getLogger(__name__)

MAGIC = b"QTLDSET\0"
FORMAT_VERSION = 1
# seeds gravadas como float64 precisam ser exatas
LIMITE_SEED = 2 ** 53
OFFSET_TESTE = 10_000_000
TOL_ENTROPIA_INICIAL = 1e-10

PRIMEIRA_ORDEM: Tuple[tuple, ...] = tuple((a,) for a in EIXOS)
DOIS_PONTOS: Tuple[tuple, ...] = tuple((a, b, l) for a in EIXOS for b in EIXOS for l in (1, 2, 3))


def rotulo_componente(comp: tuple) -> str:
    """("x",) → "sx"; ("x", "z", 2) → "sx_sz_l2" """
    if len(comp) == 1:
        return f"s{comp[0]}"
    a, b, l = comp
    return f"s{a}_s{b}_l{l}"


class ObservableSet(str, Enum):
    """Conjuntos de observáveis usados para treinar o modelo fonte"""

    FIRST_ORDER = "sigma"
    TWO_POINT = "sigmasigma"
    COMBINED = "sigma_sigmasigma"

    @property
    def label(self) -> str:
        return {"sigma": "⟨σ⟩", "sigmasigma": "⟨σσ⟩", "sigma_sigmasigma": "⟨σ⟩⟨σσ⟩"}[self.value]

    def components(self) -> Tuple[tuple, ...]:
        if self is ObservableSet.FIRST_ORDER:
            return PRIMEIRA_ORDEM
        if self is ObservableSet.TWO_POINT:
            return DOIS_PONTOS
        return PRIMEIRA_ORDEM + DOIS_PONTOS

    @property
    def dimension(self) -> int:
        return len(self.components())

    @property
    def has_two_point(self) -> bool:
        return self is not ObservableSet.FIRST_ORDER

    def indices_in(self, outro: "ObservableSet") -> np.ndarray:
        """Colunas deste conjunto dentro das colunas de `outro`"""
        disponiveis = outro.components()
        faltando = [c for c in self.components() if c not in disponiveis]
        if faltando:
            raise DomainError(f"Conjunto {outro.label} não contém {self.label}")
        return np.array([disponiveis.index(c) for c in self.components()], dtype=np.int64)


class FeatureMode(str, Enum):
    OBSERVABLES = "observables"
    ENTROPY = "entropy"
    FRONTEND = "frontend"
    ENTROPY_SWEEP = "entropy_sweep"


@dataclass(frozen=True)
class DatasetConfig:
    """Tudo que determina o conteúdo de um dataset (exceto seeds e tamanho)"""

    params: HamiltonianParams
    grid: TimeGrid = TimeGrid()
    gp: GpParams = GpParams()
    obs: ObservableSet = ObservableSet.COMBINED
    entropy_subsystem_size: Optional[int] = None
    entropy_sweep: bool = False
    substeps: int = 10
    field_kind: str = "gaussian_process"

    def __post_init__(self):
        n = self.params.n_spins
        if self.field_kind not in FIELD_KINDS:
            raise DomainError(f"Tipo de campo desconhecido: {self.field_kind} (opções: {', '.join(FIELD_KINDS)})")
        if self.obs.has_two_point and n < 4:
            raise DomainError(f"Correlações até ℓ=3 exigem n_spins >= 4 (recebido {n})")
        if not 1 <= self.subsystem_size <= n // 2:
            raise DomainError(f"Subsistema de tamanho {self.subsystem_size} fora de [1, {n // 2}]")
        if self.substeps < 1:
            raise DomainError("substeps deve ser >= 1")

    @property
    def subsystem_size(self) -> int:
        if self.entropy_subsystem_size is None:
            return self.params.n_spins // 2
        return self.entropy_subsystem_size

    @property
    def record_length(self) -> int:
        pontos = self.grid.n_steps + 1
        tamanho = 6 + pontos * (2 + self.obs.dimension)
        if self.entropy_sweep:
            tamanho += pontos * (self.params.n_spins // 2)
        return tamanho

    def header(self) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "n_spins": self.params.n_spins,
            "coupling": self.params.coupling,
            "longitudinal": self.params.longitudinal,
            "grid": {"t_final": self.grid.t_final, "n_steps": self.grid.n_steps},
            "substeps": self.substeps,
            "generator": {"kind": self.field_kind, "params": self.gp.as_dict()},
            "observable_set": self.obs.value,
            "entropy_subsystem_size": self.subsystem_size,
            "entropy_sweep": self.entropy_sweep,
            "record_length": self.record_length,
        }

    @classmethod
    def from_header(cls, header: Dict[str, Any]) -> "DatasetConfig":
        return cls(
            params=HamiltonianParams(header["n_spins"], header["coupling"], header["longitudinal"]),
            grid=TimeGrid(header["grid"]["t_final"], header["grid"]["n_steps"]),
            gp=GpParams(**header["generator"]["params"]),
            obs=ObservableSet(header["observable_set"]),
            entropy_subsystem_size=header["entropy_subsystem_size"],
            entropy_sweep=header["entropy_sweep"],
            substeps=header["substeps"],
            field_kind=header["generator"].get("kind", "gaussian_process"),
        )


@dataclass(frozen=True)
class TrajectorySample:
    """Um registro de treino: campo, valores iniciais, observáveis e entropia"""

    field: FieldTrajectory
    initial_expectations: np.ndarray
    observables: np.ndarray
    entropy: np.ndarray
    p: float
    seed: int
    field_seed: int
    obs: ObservableSet = ObservableSet.COMBINED
    entropy_subsystem_size: int = 1
    entropy_sweep: Optional[np.ndarray] = None

    def validate(self) -> "TrajectorySample":
        limite = self.entropy_subsystem_size * np.log(2.0)
        if np.any(np.abs(self.observables) > 1.0 + 1e-12):
            raise DomainError(f"Amostra {self.seed}: observável fora de [−1, 1]")
        if np.any(self.entropy < -1e-12) or np.any(self.entropy > limite + 1e-10):
            raise DomainError(f"Amostra {self.seed}: entropia fora de [0, {limite:.6f}]")
        if self.entropy[0] >= TOL_ENTROPIA_INICIAL:
            raise DomainError(f"Amostra {self.seed}: entropia inicial {self.entropy[0]:.3e} não nula")
        return self


def generate_sample(
    params: HamiltonianParams,
    grid: TimeGrid,
    gp: GpParams,
    obs: ObservableSet,
    entropy_subsystem_size: int,
    seed: int,
    sweep: bool = False,
    substeps: int = 10,
    field_kind: str = "gaussian_process",
    field_override: Optional[FieldTrajectory] = None,
    p_override: Optional[float] = None,
) -> TrajectorySample:
    """
    Gera uma amostra totalmente reprodutível a partir da seed

    A seed sorteia p ~ U[0, 1] e depois a seed do campo; os overrides servem
    para checagens com campos fixos (quench, periódico, constante).
    O tipo do campo (`field_kind`) só muda como a seed do campo vira B(t).
    """
    rng = np.random.default_rng(seed)
    p = float(rng.uniform(0.0, 1.0))
    field_seed = int(rng.integers(0, LIMITE_SEED))
    if p_override is not None:
        p = float(p_override)
    campo = field_override if field_override is not None else sample_field(field_kind, gp, grid, field_seed)

    try:
        estados = propagate(params, campo, initial_state(p, params.n_spins), grid, substeps=substeps)
    except PropagationError as e:
        logger.error(f"Falha na propagação da amostra {seed}: {e}")
        raise e.com_seed(seed) from e

    observaveis = expectations_batch(estados, obs.components())
    iniciais = expectations_batch(estados[:1], PRIMEIRA_ORDEM)[0]
    entropia = np.array([entanglement_entropy(s, entropy_subsystem_size) for s in estados])
    varredura = None
    if sweep:
        tamanhos = range(1, params.n_spins // 2 + 1)
        varredura = np.array([[entanglement_entropy(s, k) for k in tamanhos] for s in estados])

    return TrajectorySample(
        field=campo,
        initial_expectations=iniciais,
        observables=observaveis,
        entropy=entropia,
        p=p,
        seed=seed,
        field_seed=field_seed,
        obs=obs,
        entropy_subsystem_size=entropy_subsystem_size,
        entropy_sweep=varredura,
    )


# ---------------------------------------------------------------------------
# Features

def _montar_features(
    campos: np.ndarray,
    iniciais: np.ndarray,
    observaveis: np.ndarray,
    entropia: np.ndarray,
    varredura: Optional[np.ndarray],
    mode: FeatureMode,
    colunas: np.ndarray,
    coluna_entropia: Optional[int],
) -> Tuple[np.ndarray, np.ndarray]:
    """Funciona com ou sem eixo de lote à esquerda"""
    mode = FeatureMode(mode)
    entradas_base = np.concatenate(
        [campos[..., None], np.broadcast_to(iniciais[..., None, :], campos.shape + (3,))], axis=-1
    )
    if mode is FeatureMode.OBSERVABLES:
        return entradas_base, observaveis[..., colunas]
    if mode is FeatureMode.FRONTEND:
        return observaveis[..., colunas].copy(), entropia[..., None].copy()
    if mode is FeatureMode.ENTROPY_SWEEP:
        if varredura is None:
            raise DomainError("Dataset gerado sem a varredura de subsistemas")
        return entradas_base, varredura.copy()
    if coluna_entropia is None:
        return entradas_base, entropia[..., None].copy()
    if varredura is None:
        raise DomainError("Dataset gerado sem a varredura de subsistemas")
    return entradas_base, varredura[..., coluna_entropia : coluna_entropia + 1].copy()


def assemble_features(
    sample: TrajectorySample,
    target: Union[FeatureMode, str],
    obs: Optional[ObservableSet] = None,
    entropy_size: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Entradas e alvos de uma amostra

    OBSERVABLES/ENTROPY: entrada [B(t_k), ⟨σ^x⟩₀, ⟨σ^y⟩₀, ⟨σ^z⟩₀] em cada passo.
    FRONTEND: entrada é o vetor de observáveis, alvo é a entropia.

    Returns:
        tuple: (entradas (T+1, d_in), alvos (T+1, d_out))
    """
    if sample.observables.shape[-1] != sample.obs.dimension:
        raise ShapeError(
            f"Observáveis com {sample.observables.shape[-1]} colunas, conjunto {sample.obs.label} "
            f"tem {sample.obs.dimension}"
        )
    colunas = (obs or sample.obs).indices_in(sample.obs)
    coluna = None
    if entropy_size is not None and entropy_size != sample.entropy_subsystem_size:
        coluna = entropy_size - 1
    return _montar_features(
        sample.field.values,
        np.asarray(sample.initial_expectations),
        sample.observables,
        sample.entropy,
        sample.entropy_sweep,
        target,
        colunas,
        coluna,
    )


# ---------------------------------------------------------------------------
# Dataset em memória

@dataclass(frozen=True)
class Dataset:
    """Dataset imutável carregado em memória (arrays com eixo de amostra à esquerda)"""

    config: DatasetConfig
    base_seed: int
    seeds: np.ndarray
    field_seeds: np.ndarray
    p: np.ndarray
    initial_expectations: np.ndarray
    fields: np.ndarray
    observables: np.ndarray
    entropy: np.ndarray
    entropy_sweep: Optional[np.ndarray] = None
    checksum: str = ""

    def __post_init__(self):
        for nome in ("seeds", "field_seeds", "p", "initial_expectations", "fields", "observables", "entropy", "entropy_sweep"):
            valor = getattr(self, nome)
            if valor is not None:
                valor.setflags(write=False)

    def __len__(self) -> int:
        return int(self.seeds.shape[0])

    def head(self, n: Optional[int]) -> "Dataset":
        """Primeiras n amostras (orçamentos menores reutilizam o mesmo arquivo)"""
        if n is None or n >= len(self):
            return self
        if n < 1:
            raise DomainError(f"Orçamento de amostras deve ser >= 1 (recebido {n})")
        corte = slice(0, n)
        return Dataset(
            config=self.config,
            base_seed=self.base_seed,
            seeds=self.seeds[corte],
            field_seeds=self.field_seeds[corte],
            p=self.p[corte],
            initial_expectations=self.initial_expectations[corte],
            fields=self.fields[corte],
            observables=self.observables[corte],
            entropy=self.entropy[corte],
            entropy_sweep=None if self.entropy_sweep is None else self.entropy_sweep[corte],
            checksum=self.checksum,
        )

    def sample(self, i: int) -> TrajectorySample:
        campo = FieldTrajectory(
            self.fields[i],
            self.config.grid,
            self.config.field_kind,
            self.config.gp.as_dict() if self.config.field_kind == "gaussian_process" else {},
            int(self.field_seeds[i]),
        )
        return TrajectorySample(
            field=campo,
            initial_expectations=self.initial_expectations[i],
            observables=self.observables[i],
            entropy=self.entropy[i],
            p=float(self.p[i]),
            seed=int(self.seeds[i]),
            field_seed=int(self.field_seeds[i]),
            obs=self.config.obs,
            entropy_subsystem_size=self.config.subsystem_size,
            entropy_sweep=None if self.entropy_sweep is None else self.entropy_sweep[i],
        )

    def features(
        self,
        mode: Union[FeatureMode, str],
        obs: Optional[ObservableSet] = None,
        entropy_size: Optional[int] = None,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Versão em lote de assemble_features: (S, T+1, d_in), (S, T+1, d_out)"""
        colunas = (obs or self.config.obs).indices_in(self.config.obs)
        coluna = None
        if entropy_size is not None and entropy_size != self.config.subsystem_size:
            if not 1 <= entropy_size <= self.config.params.n_spins // 2:
                raise DomainError(f"Tamanho de subsistema {entropy_size} inválido")
            coluna = entropy_size - 1
        return _montar_features(
            self.fields,
            self.initial_expectations,
            self.observables,
            self.entropy,
            self.entropy_sweep,
            mode,
            colunas,
            coluna,
        )

    def validate(self) -> "Dataset":
        """Confere os invariantes de todas as amostras (modo estrito)"""
        for i in range(len(self)):
            self.sample(i).validate()
        return self


def split_seeds(base_seed: int, n_train: int, n_test: int) -> Tuple[int, int]:
    """Faixas de seeds disjuntas para treino e teste"""
    if n_train > OFFSET_TESTE or n_test > OFFSET_TESTE:
        raise DomainError(f"Orçamentos acima de {OFFSET_TESTE} amostras não são suportados")
    return base_seed, base_seed + OFFSET_TESTE


# ---------------------------------------------------------------------------
# Formato binário

def _empacotar(amostra: TrajectorySample, sweep: bool) -> np.ndarray:
    partes = [
        np.array([amostra.seed, amostra.field_seed, amostra.p], dtype=np.float64),
        np.asarray(amostra.initial_expectations, dtype=np.float64),
        amostra.field.values,
        amostra.observables.ravel(),
        amostra.entropy,
    ]
    if sweep:
        partes.append(amostra.entropy_sweep.ravel())
    return np.concatenate(partes)


def _dataset_de_registros(
    config: DatasetConfig, base_seed: int, registros: np.ndarray, checksum: str
) -> Dataset:
    s = registros.shape[0]
    pontos = config.grid.n_steps + 1
    dim = config.obs.dimension
    pos = 6

    def fatia(tamanho: int) -> np.ndarray:
        nonlocal pos
        bloco = registros[:, pos : pos + tamanho]
        pos += tamanho
        return bloco

    campos = fatia(pontos)
    observaveis = fatia(pontos * dim).reshape(s, pontos, dim)
    entropia = fatia(pontos)
    varredura = None
    if config.entropy_sweep:
        metade = config.params.n_spins // 2
        varredura = fatia(pontos * metade).reshape(s, pontos, metade)

    return Dataset(
        config=config,
        base_seed=base_seed,
        seeds=registros[:, 0].astype(np.int64),
        field_seeds=registros[:, 1].astype(np.int64),
        p=registros[:, 2].copy(),
        initial_expectations=registros[:, 3:6].copy(),
        fields=campos.copy(),
        observables=observaveis.copy(),
        entropy=entropia.copy(),
        entropy_sweep=None if varredura is None else varredura.copy(),
        checksum=checksum,
    )


def _gerar_amostra_tarefa(tarefa: Tuple[DatasetConfig, int]) -> TrajectorySample:
    config, seed = tarefa
    return generate_sample(
        config.params,
        config.grid,
        config.gp,
        config.obs,
        config.subsystem_size,
        seed,
        sweep=config.entropy_sweep,
        substeps=config.substeps,
        field_kind=config.field_kind,
    )


def generate_dataset(
    config: DatasetConfig,
    n_samples: int,
    base_seed: int,
    path: Union[str, Path],
    workers: int = 1,
) -> Dataset:
    """
    Gera n_samples amostras com seeds base_seed..base_seed+n−1 e grava o arquivo

    A geração pode ser paralela; a escrita é feita por um único escritor com
    registros em ordem de seed, então os bytes não dependem de `workers`.
    """
    if n_samples < 1:
        raise DomainError(f"n_samples deve ser >= 1 (recebido {n_samples})")
    if base_seed < 0 or base_seed + n_samples > LIMITE_SEED:
        raise DomainError(f"Seeds devem estar em [0, 2^53) (base {base_seed})")

    path = Path(path)
    logger.info(f"Gerando {n_samples} amostra(s) (N={config.params.n_spins}, g={config.params.longitudinal}) em {path}")
    tarefas = [(config, seed) for seed in range(base_seed, base_seed + n_samples)]
    amostras = map_ordenado(_gerar_amostra_tarefa, tarefas, workers)
    registros = np.stack([_empacotar(a, config.entropy_sweep) for a in amostras])
    payload = registros.astype("<f8").tobytes()

    header = config.header()
    header["sample_count"] = n_samples
    header["base_seed"] = base_seed
    header["checksum"] = hashlib.sha256(payload).hexdigest()
    _escrever_arquivo(path, header, payload)
    logger.info(f"Dataset gravado: {path} ({len(payload)} bytes de payload)")
    return _dataset_de_registros(config, base_seed, registros, header["checksum"])


def _escrever_arquivo(path: Path, header: Dict[str, Any], payload: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    temporario = path.with_name(path.name + ".tmp")
    try:
        with open(temporario, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(header_bytes)))
            f.write(header_bytes)
            f.write(payload)
        os.replace(temporario, path)
    except BaseException:
        # arquivo parcial nunca fica no disco
        temporario.unlink(missing_ok=True)
        raise


def load_dataset(path: Union[str, Path], strict: bool = False) -> Dataset:
    """
    Lê um arquivo de dataset conferindo magic, versão e checksum

    Args:
        path: caminho do arquivo
        strict: valida os invariantes de cada amostra

    Returns:
        Dataset
    """
    dados = Path(path).read_bytes()
    if dados[: len(MAGIC)] != MAGIC:
        raise DatasetFormatError(f"{path} não é um arquivo de dataset")
    try:
        (tamanho_header,) = struct.unpack("<I", dados[len(MAGIC) : len(MAGIC) + 4])
        inicio = len(MAGIC) + 4
        header = json.loads(dados[inicio : inicio + tamanho_header].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ChecksumError(f"Cabeçalho truncado ou corrompido em {path}") from e

    if header.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"Versão {header.get('format_version')} não suportada (esperado {FORMAT_VERSION})")

    payload = dados[inicio + tamanho_header :]
    esperado = header["sample_count"] * header["record_length"] * 8
    if len(payload) != esperado:
        raise ChecksumError(f"Payload com {len(payload)} bytes, esperado {esperado} (arquivo truncado?)")
    if hashlib.sha256(payload).hexdigest() != header["checksum"]:
        raise ChecksumError(f"Checksum do payload não confere em {path}")

    config = DatasetConfig.from_header(header)
    registros = np.frombuffer(payload, dtype="<f8").reshape(header["sample_count"], header["record_length"])
    dataset = _dataset_de_registros(config, header["base_seed"], registros.astype(np.float64), header["checksum"])
    if strict:
        dataset.validate()
    return dataset


def export_csv(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Uma linha por (amostra, passo), 17 dígitos significativos"""
    componentes = [rotulo_componente(c) for c in dataset.config.obs.components()]
    colunas = ["sample", "seed", "field_seed", "p", "step", "t", "field"] + componentes + ["entropy"]
    if dataset.entropy_sweep is not None:
        colunas += [f"entropy_k{k}" for k in range(1, dataset.entropy_sweep.shape[-1] + 1)]

    tempos = dataset.config.grid.times
    linhas: List[List[Any]] = []
    for i in range(len(dataset)):
        for k, t in enumerate(tempos):
            linha = [i, int(dataset.seeds[i]), int(dataset.field_seeds[i]), dataset.p[i], k, t, dataset.fields[i, k]]
            linha += list(dataset.observables[i, k])
            linha.append(dataset.entropy[i, k])
            if dataset.entropy_sweep is not None:
                linha += list(dataset.entropy_sweep[i, k])
            linhas.append(linha)
    return escrever_csv(path, colunas, linhas)
