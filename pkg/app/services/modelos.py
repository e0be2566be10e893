"""
Papéis de modelo: fonte, TL, treino direto (DT) e front-end
Construção com as arquiteturas fixas, treino, avaliação e ablações
"""
import logging
from dataclasses import dataclass, field as dc_field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from ..utils.erros import DomainError, FrozenParameterError
from .dataset import Dataset, FeatureMode, ObservableSet
from .rede import (
    Activation,
    LayerKind,
    LayerSpec,
    LstmLayerParams,
    ModelSpec,
    Network,
    TrainConfig,
    TrainingHistory,
    init_dense,
    init_lstm,
    load_network,
    network_hash,
    save_network,
    train,
)

logger = logging.getLogger(__name__)

N_ENTRADAS = 4
# (camadas LSTM, largura) do modelo fonte para cada conjunto de observáveis
LAYOUT_FONTE = {
    ObservableSet.FIRST_ORDER: (2, 100),
    ObservableSet.TWO_POINT: (2, 500),
    ObservableSet.COMBINED: (4, 500),
}
LARGURA_DT = 100
CAMADAS_DT = 2
LARGURA_CABECA = 100
AMOSTRAS_BOOTSTRAP = 200


class Role(str, Enum):
    SOURCE = "source"
    TL = "tl"
    DT = "dt"
    FRONTEND = "frontend"


# ---------------------------------------------------------------------------
# Arquiteturas

def source_spec(obs: ObservableSet, lstm_width: Optional[int] = None, output_layer: str = "dense") -> ModelSpec:
    n_lstm, largura = LAYOUT_FONTE[ObservableSet(obs)]
    largura = lstm_width or largura
    camadas = [LayerSpec(LayerKind.LSTM, largura) for _ in range(n_lstm)]
    if output_layer == "dense":
        camadas.append(LayerSpec(LayerKind.DENSE, obs.dimension, Activation.LINEAR))
    elif output_layer == "lstm":
        camadas.append(LayerSpec(LayerKind.LSTM, obs.dimension))
    else:
        raise DomainError(f"Camada de saída desconhecida: {output_layer}")
    return ModelSpec(tuple(camadas), N_ENTRADAS)


def _cabeca(head: str, head_width: Optional[int], output_dim: int = 1) -> List[LayerSpec]:
    largura = head_width or LARGURA_CABECA
    if head == "dense":
        primeira = LayerSpec(LayerKind.DENSE, largura, Activation.SIGMOID)
    elif head == "lstm":
        primeira = LayerSpec(LayerKind.LSTM, largura)
    else:
        raise DomainError(f"Cabeça treinável desconhecida: {head}")
    return [primeira, LayerSpec(LayerKind.DENSE, output_dim, Activation.LINEAR)]


def tl_spec(frozen_layers: Sequence[LayerSpec], head: str = "dense", head_width: Optional[int] = None) -> ModelSpec:
    congeladas = [replace(c, frozen=True) for c in frozen_layers]
    return ModelSpec(tuple(congeladas + _cabeca(head, head_width)), N_ENTRADAS)


def dt_spec(output_dim: int = 1, lstm_width: Optional[int] = None) -> ModelSpec:
    largura = lstm_width or LARGURA_DT
    camadas = [LayerSpec(LayerKind.LSTM, largura) for _ in range(CAMADAS_DT)]
    camadas.append(LayerSpec(LayerKind.DENSE, output_dim, Activation.LINEAR))
    return ModelSpec(tuple(camadas), N_ENTRADAS)


def frontend_spec(obs: ObservableSet, head_width: Optional[int] = None) -> ModelSpec:
    """Mesma arquitetura da parte treinável do modelo TL"""
    return ModelSpec(tuple(_cabeca("dense", head_width)), ObservableSet(obs).dimension)


# ---------------------------------------------------------------------------
# Modelo com papel

@dataclass
class RoleModel:
    role: Role
    network: Network
    observable_set: Optional[ObservableSet] = None
    sample_budget: int = 0
    source_hash: Optional[str] = None
    entropy_size: Optional[int] = None
    metrics: Dict[str, float] = dc_field(default_factory=dict)
    history: Optional[TrainingHistory] = None

    @property
    def content_hash(self) -> str:
        return network_hash(self.network)


def _modelo(role: Role, spec: ModelSpec, seed: int, obs: Optional[ObservableSet], **metadados) -> RoleModel:
    rede = Network.initialize(spec, seed)
    rede.metadata.update({"role": role.value, "observable_set": obs.value if obs else None, **metadados})
    return RoleModel(role, rede, obs, entropy_size=metadados.get("entropy_size"))


def build_source(
    obs: ObservableSet, seed: int = 0, lstm_width: Optional[int] = None, output_layer: str = "dense"
) -> RoleModel:
    obs = ObservableSet(obs)
    spec = source_spec(obs, lstm_width, output_layer)
    return _modelo(Role.SOURCE, spec, seed, obs, lstm_width=lstm_width, output_layer=output_layer)


def build_dt(
    seed: int = 0, lstm_width: Optional[int] = None, output_dim: int = 1, entropy_size: Optional[int] = None
) -> RoleModel:
    return _modelo(Role.DT, dt_spec(output_dim, lstm_width), seed, None, lstm_width=lstm_width, entropy_size=entropy_size)


def build_frontend(obs: ObservableSet, seed: int = 0, head_width: Optional[int] = None) -> RoleModel:
    obs = ObservableSet(obs)
    return _modelo(Role.FRONTEND, frontend_spec(obs, head_width), seed, obs, head_width=head_width)


def _n_lstm_ocultas(source: RoleModel) -> int:
    # a última camada é a de saída (densa ou LSTM) e nunca é transferida
    return len(source.network.spec.layers) - 1


def build_tl(
    source: RoleModel,
    discard_last_k: int = 0,
    head: str = "dense",
    seed: int = 0,
    head_width: Optional[int] = None,
) -> RoleModel:
    """
    Copia a pilha LSTM da fonte (menos as últimas `discard_last_k`), congela e
    acrescenta a cabeça treinável

    A normalização de entrada da fonte é herdada; a de alvo é ajustada no treino.
    """
    if source.role is not Role.SOURCE:
        raise DomainError(f"build_tl exige um modelo fonte (recebido {source.role.value})")
    n_ocultas = _n_lstm_ocultas(source)
    if not 0 <= discard_last_k < n_ocultas:
        raise DomainError(f"discard_last_k={discard_last_k} fora de [0, {n_ocultas})")

    manter = n_ocultas - discard_last_k
    spec = tl_spec(source.network.spec.layers[:manter], head, head_width)
    rng = np.random.default_rng(seed)
    camadas = [
        LstmLayerParams(c.w_x.copy(), c.w_h.copy(), c.b.copy(), frozen=True)
        for c in source.network.layers[:manter]
    ]
    entrada = spec.layer_input_dims()
    for desc, dim in zip(spec.layers[manter:], entrada[manter:]):
        if desc.kind is LayerKind.LSTM:
            camadas.append(init_lstm(dim, desc.units, rng))
        else:
            camadas.append(init_dense(dim, desc.units, desc.activation, rng))

    origem = source.content_hash
    rede = Network(
        spec,
        camadas,
        normalization=source.network.normalization,
        input_normalization_fixed=source.network.normalization is not None,
    )
    rede.metadata.update(
        {
            "role": Role.TL.value,
            "observable_set": source.observable_set.value,
            "source_hash": origem,
            "discard_last_k": discard_last_k,
            "head": head,
            "head_width": head_width,
        }
    )
    return RoleModel(Role.TL, rede, source.observable_set, source_hash=origem)


def expected_spec(model: RoleModel) -> ModelSpec:
    meta = model.network.metadata
    if model.role is Role.SOURCE:
        return source_spec(model.observable_set, meta.get("lstm_width"), meta.get("output_layer", "dense"))
    if model.role is Role.DT:
        return dt_spec(model.network.spec.output_dim, meta.get("lstm_width"))
    if model.role is Role.FRONTEND:
        return frontend_spec(model.observable_set, meta.get("head_width"))
    k = model.network.frozen_prefix()
    return tl_spec(model.network.spec.layers[:k], meta.get("head", "dense"), meta.get("head_width"))


def check_conformance(model: RoleModel) -> bool:
    """Confere a lista de camadas contra a arquitetura fixa do papel"""
    esperado = expected_spec(model)
    if model.role is Role.TL:
        congeladas = model.network.spec.layers[: model.network.frozen_prefix()]
        if not congeladas or any(c.kind is not LayerKind.LSTM for c in congeladas):
            raise DomainError("Modelo TL precisa de uma pilha LSTM congelada não vazia")
    if model.network.spec != esperado:
        raise DomainError(f"Arquitetura {model.network.spec.as_dict()} difere de {esperado.as_dict()}")
    return True


# ---------------------------------------------------------------------------
# Treino

def _features(model: RoleModel, dados: Dataset):
    saida = model.network.spec.output_dim
    if model.role is Role.SOURCE:
        x, y = dados.features(FeatureMode.OBSERVABLES, obs=model.observable_set)
    elif model.role is Role.FRONTEND:
        x, y = dados.features(FeatureMode.FRONTEND, obs=model.observable_set)
    elif saida > 1:
        x, y = dados.features(FeatureMode.ENTROPY_SWEEP)
    else:
        x, y = dados.features(FeatureMode.ENTROPY, entropy_size=model.entropy_size)
    if x.shape[-1] != model.network.spec.input_dim or y.shape[-1] != saida:
        raise DomainError(
            f"Modo de features ({x.shape[-1]} → {y.shape[-1]}) não corresponde ao modelo {model.role.value}"
        )
    return x, y


def _treinar(
    model: RoleModel,
    data: Dataset,
    config: TrainConfig,
    budget: Optional[int],
    test: Optional[Dataset],
) -> RoleModel:
    dados = data.head(budget)
    x, y = _features(model, dados)
    congeladas_antes = {
        i: [a.copy() for a in c.arrays()] for i, c in enumerate(model.network.layers) if c.frozen
    }
    logger.info(f"Treinando modelo {model.role.value} com {len(dados)} amostra(s)")
    rede, historico = train(model.network, x, y, config)

    for i, antes in congeladas_antes.items():
        depois = rede.layers[i].arrays()
        if not all(np.array_equal(a, b) for a, b in zip(antes, depois)):
            raise FrozenParameterError(i)

    rede.metadata.update({"training_config": config.as_dict(), "sample_budget": len(dados)})
    treinado = replace(model, network=rede, sample_budget=len(dados), history=historico, metrics={})
    if test is not None:
        relatorio = evaluate(treinado, test)
        treinado.metrics["test_mse"] = relatorio.overall_mse
    treinado.metrics["best_val_loss"] = min(historico.val_loss) if len(historico) else float("nan")
    rede.metadata["metrics"] = {k: v for k, v in treinado.metrics.items() if np.isfinite(v)}
    return treinado


def train_source(
    obs: ObservableSet,
    data: Dataset,
    config: TrainConfig,
    budget: Optional[int] = None,
    lstm_width: Optional[int] = None,
    output_layer: str = "dense",
    test: Optional[Dataset] = None,
) -> RoleModel:
    obs = ObservableSet(obs)
    obs.indices_in(data.config.obs)
    modelo = build_source(obs, config.seed, lstm_width, output_layer)
    return _treinar(modelo, data, config, budget, test)


def _exigir_papel(model: RoleModel, role: Role):
    if model.role is not role:
        raise DomainError(f"Esperado modelo {role.value}, recebido {model.role.value}")


def train_tl(model: RoleModel, data: Dataset, config: TrainConfig, budget: Optional[int] = None, test: Optional[Dataset] = None) -> RoleModel:
    _exigir_papel(model, Role.TL)
    return _treinar(model, data, config, budget, test)


def train_dt(model: RoleModel, data: Dataset, config: TrainConfig, budget: Optional[int] = None, test: Optional[Dataset] = None) -> RoleModel:
    _exigir_papel(model, Role.DT)
    return _treinar(model, data, config, budget, test)


def train_frontend(model: RoleModel, data: Dataset, config: TrainConfig, budget: Optional[int] = None, test: Optional[Dataset] = None) -> RoleModel:
    _exigir_papel(model, Role.FRONTEND)
    return _treinar(model, data, config, budget, test)


# ---------------------------------------------------------------------------
# Avaliação

def bootstrap_variance(per_sample: np.ndarray, n_boot: int = AMOSTRAS_BOOTSTRAP, seed: int = 0) -> float:
    """Variância da MSE média sob reamostragem do conjunto de teste"""
    per_sample = np.asarray(per_sample, dtype=np.float64)
    rng = np.random.default_rng(seed)
    medias = [per_sample[rng.integers(0, per_sample.size, per_sample.size)].mean() for _ in range(n_boot)]
    return float(np.var(medias))


@dataclass
class EvalReport:
    role: Role
    observable_set: Optional[ObservableSet]
    sample_budget: int
    overall_mse: float
    per_timestep_mse: np.ndarray
    per_sample_mse: np.ndarray
    worst_index: int
    worst_seed: int
    predictions: np.ndarray
    targets: np.ndarray
    seeds: np.ndarray
    times: np.ndarray

    @property
    def worst_true(self) -> np.ndarray:
        return self.targets[self.worst_index]

    @property
    def worst_pred(self) -> np.ndarray:
        return self.predictions[self.worst_index]

    def bootstrap_variance(self, n_boot: int = AMOSTRAS_BOOTSTRAP, seed: int = 0) -> float:
        return bootstrap_variance(self.per_sample_mse, n_boot, seed)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "role": self.role.value,
            "observable_set": self.observable_set.value if self.observable_set else None,
            "sample_budget": self.sample_budget,
            "n_samples": int(self.per_sample_mse.size),
            "overall_mse": self.overall_mse,
            "per_timestep_mse": [float(v) for v in self.per_timestep_mse],
            "per_sample_mse": [float(v) for v in self.per_sample_mse],
            "worst_index": self.worst_index,
            "worst_seed": self.worst_seed,
            "bootstrap_variance": self.bootstrap_variance(),
        }


def evaluate(model: RoleModel, test: Dataset) -> EvalReport:
    """
    MSE global, por passo de tempo e por amostra, em unidades originais

    Todas as amostras têm o mesmo comprimento, então a média da curva por
    passo e a média por amostra coincidem com a MSE global.
    """
    if len(test) == 0:
        raise DomainError("Conjunto de teste vazio")
    x, y = _features(model, test)
    predicoes = model.network.predict(x)
    erro2 = (predicoes - y) ** 2
    por_amostra = erro2.mean(axis=(1, 2))
    pior = int(np.argmax(por_amostra))
    return EvalReport(
        role=model.role,
        observable_set=model.observable_set,
        sample_budget=model.sample_budget,
        overall_mse=float(erro2.mean()),
        per_timestep_mse=erro2.mean(axis=(0, 2)),
        per_sample_mse=por_amostra,
        worst_index=pior,
        worst_seed=int(test.seeds[pior]),
        predictions=predicoes,
        targets=y,
        seeds=np.asarray(test.seeds),
        times=test.config.grid.times,
    )


def summarize_seeds(values: Sequence[float]) -> Dict[str, Any]:
    valores = [float(v) for v in values]
    if not valores:
        raise DomainError("Nenhum valor para resumir")
    return {"per_seed": valores, "median": float(np.median(valores)), "variance": float(np.var(valores))}


def worst_case_union(reports: Dict[str, EvalReport]) -> List[Dict[str, Any]]:
    """
    Trajetórias reais e preditas de todos os modelos na união dos piores casos
    """
    if not reports:
        raise DomainError("Nenhum relatório informado")
    primeiro = next(iter(reports.values()))
    for nome, rel in reports.items():
        if not np.array_equal(rel.seeds, primeiro.seeds):
            raise DomainError(f"Relatório '{nome}' foi avaliado em outro conjunto de teste")

    indices = sorted({rel.worst_index for rel in reports.values()})
    linhas = []
    for idx in indices:
        linha: Dict[str, Any] = {
            "sample_index": idx,
            "seed": int(primeiro.seeds[idx]),
            "worst_of": [nome for nome, rel in reports.items() if rel.worst_index == idx],
            "true": primeiro.targets[idx][:, 0].tolist(),
        }
        for nome, rel in reports.items():
            linha[nome] = rel.predictions[idx][:, 0].tolist()
        linhas.append(linha)
    return linhas


# ---------------------------------------------------------------------------
# Ablações

def ablation_output_layer(
    obs: ObservableSet,
    data: Dataset,
    test: Dataset,
    config: TrainConfig,
    budget: Optional[int] = None,
    tl_budget: Optional[int] = None,
    lstm_width: Optional[int] = None,
    head_width: Optional[int] = None,
    reference: Optional[Dict[str, float]] = None,
) -> Dict[str, Any]:
    """
    Fonte com saída densa vs saída LSTM (mesma largura) e seus TLs

    As MSEs normalizadas usam `reference` (ex.: variante densa do caso
    integrável); sem ela, a própria variante densa desta execução.
    """
    resultado: Dict[str, Any] = {}
    for variante in ("dense", "lstm"):
        fonte = train_source(obs, data, config, budget, lstm_width, variante, test)
        tl = train_tl(build_tl(fonte, seed=config.seed, head_width=head_width), data, config, tl_budget, test)
        resultado[variante] = {"source_mse": fonte.metrics["test_mse"], "tl_mse": tl.metrics["test_mse"]}

    base = reference or resultado["dense"]
    resultado["normalized"] = {
        variante: {chave: resultado[variante][chave] / base[chave] for chave in ("source_mse", "tl_mse")}
        for variante in ("dense", "lstm")
    }
    return resultado


def ablation_trainable_kind(
    source: RoleModel,
    data: Dataset,
    test: Dataset,
    config: TrainConfig,
    budget: Optional[int] = None,
    head_width: Optional[int] = None,
) -> Dict[str, RoleModel]:
    """TL com cabeça densa vs cabeça LSTM(100)+dense(1); históricos ficam nos modelos"""
    return {
        head: train_tl(build_tl(source, head=head, seed=config.seed, head_width=head_width), data, config, budget, test)
        for head in ("dense", "lstm")
    }


def ablation_discard_layers(
    source: RoleModel,
    data: Dataset,
    test: Dataset,
    config: TrainConfig,
    budget: Optional[int] = None,
    head_width: Optional[int] = None,
) -> Dict[int, float]:
    """MSE de teste do TL para cada número de camadas LSTM descartadas do fim da fonte"""
    resultado = {}
    for k in range(_n_lstm_ocultas(source)):
        tl = train_tl(build_tl(source, k, seed=config.seed, head_width=head_width), data, config, budget, test)
        resultado[k] = tl.metrics["test_mse"]
    return resultado


def subsystem_sweep(
    data: Dataset,
    test: Dataset,
    config: TrainConfig,
    budget: Optional[int] = None,
    lstm_width: Optional[int] = None,
) -> Dict[str, Any]:
    """Um DT por tamanho de subsistema k = 1..N/2 e um DT conjunto com saída N/2"""
    if data.entropy_sweep is None or test.entropy_sweep is None:
        raise DomainError("A varredura exige datasets gerados com entropy_sweep")
    metade = data.config.params.n_spins // 2

    por_tamanho = {}
    for k in range(1, metade + 1):
        modelo = train_dt(build_dt(config.seed, lstm_width, entropy_size=k), data, config, budget, test)
        por_tamanho[k] = modelo.metrics["test_mse"]

    conjunto = train_dt(build_dt(config.seed, lstm_width, output_dim=metade), data, config, budget)
    relatorio = evaluate(conjunto, test)
    erro2 = (relatorio.predictions - relatorio.targets) ** 2
    return {
        "per_size": por_tamanho,
        "joint_per_size": {k: float(erro2[..., k - 1].mean()) for k in range(1, metade + 1)},
        "joint_overall": relatorio.overall_mse,
    }


# ---------------------------------------------------------------------------
# Persistência

def save_role_model(model: RoleModel, path: Union[str, Path]) -> Path:
    rede = model.network.copy()
    rede.metadata.update(
        {
            "role": model.role.value,
            "observable_set": model.observable_set.value if model.observable_set else None,
            "sample_budget": model.sample_budget,
            "source_hash": model.source_hash,
            "entropy_size": model.entropy_size,
            "metrics": {k: v for k, v in model.metrics.items() if np.isfinite(v)},
        }
    )
    return save_network(rede, path)


def load_role_model(path: Union[str, Path]) -> RoleModel:
    rede = load_network(path)
    meta = rede.metadata
    obs = meta.get("observable_set")
    return RoleModel(
        role=Role(meta["role"]),
        network=rede,
        observable_set=ObservableSet(obs) if obs else None,
        sample_budget=meta.get("sample_budget", 0),
        source_hash=meta.get("source_hash"),
        entropy_size=meta.get("entropy_size"),
        metrics=dict(meta.get("metrics", {})),
    )
