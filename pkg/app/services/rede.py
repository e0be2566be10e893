"""
Motor de redes recorrentes em numpy
Camadas LSTM e densas com backprop exato (BPTT), MSE, Adam, checagem de
gradiente por diferenças finitas e formato de artefato de modelo
"""
import copy
import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field as dc_field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from ..utils.erros import (
    ChecksumError,
    DatasetFormatError,
    DomainError,
    ShapeError,
    TrainingDivergenceError,
    VersionError,
)
from .graficos import escrever_csv

logger = logging.getLogger(__name__)

MAGIC_MODELO = b"QTLMODEL"
VERSAO_MODELO = 1
PISO_DESVIO = 1e-12
PISO_GRADIENTE = 1e-2
LOTE_INFERENCIA = 256


class LayerKind(str, Enum):
    LSTM = "lstm"
    DENSE = "dense"


class Activation(str, Enum):
    SIGMOID = "sigmoid"
    LINEAR = "linear"


# ---------------------------------------------------------------------------
# Especificação

@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    units: int
    activation: Activation = Activation.LINEAR
    frozen: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.units < 1:
            raise DomainError(f"Camada com {self.units} unidades")

    def as_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "units": self.units, "activation": self.activation.value, "frozen": self.frozen}


@dataclass(frozen=True)
class ModelSpec:
    """Lista ordenada de camadas; a dimensão de entrada de cada uma é a saída da anterior"""

    layers: Tuple[LayerSpec, ...]
    input_dim: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise DomainError("ModelSpec sem camadas")
        if self.input_dim < 1:
            raise DomainError(f"input_dim inválido: {self.input_dim}")

    @property
    def output_dim(self) -> int:
        return self.layers[-1].units

    @property
    def is_trainable(self) -> bool:
        return any(not camada.frozen for camada in self.layers)

    def layer_input_dims(self) -> List[int]:
        return [self.input_dim] + [c.units for c in self.layers[:-1]]

    def as_dict(self) -> Dict[str, Any]:
        return {"input_dim": self.input_dim, "layers": [c.as_dict() for c in self.layers]}

    @classmethod
    def from_dict(cls, dados: Dict[str, Any]) -> "ModelSpec":
        return cls(tuple(LayerSpec(**c) for c in dados["layers"]), dados["input_dim"])


# ---------------------------------------------------------------------------
# Parâmetros

@dataclass
class LstmLayerParams:
    """Pesos com portas na ordem (input, forget, cell, output) concatenadas em 4H"""

    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray
    frozen: bool = False

    def __post_init__(self):
        h = self.w_h.shape[0]
        if self.w_h.shape != (h, 4 * h) or self.w_x.ndim != 2 or self.w_x.shape[1] != 4 * h or self.b.shape != (4 * h,):
            raise ShapeError(f"Parâmetros LSTM inconsistentes: {self.w_x.shape}, {self.w_h.shape}, {self.b.shape}")
        if not all(np.all(np.isfinite(a)) for a in self.arrays()):
            raise DomainError("Parâmetros LSTM não finitos")

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[0]

    def arrays(self) -> List[np.ndarray]:
        return [self.w_x, self.w_h, self.b]


@dataclass
class DenseLayerParams:
    w: np.ndarray
    b: np.ndarray
    activation: Activation = Activation.LINEAR
    frozen: bool = False

    def __post_init__(self):
        self.activation = Activation(self.activation)
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[1],):
            raise ShapeError(f"Parâmetros densos inconsistentes: {self.w.shape}, {self.b.shape}")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise DomainError("Parâmetros densos não finitos")

    @property
    def input_dim(self) -> int:
        return self.w.shape[0]

    @property
    def units(self) -> int:
        return self.w.shape[1]

    def arrays(self) -> List[np.ndarray]:
        return [self.w, self.b]


LayerParams = Union[LstmLayerParams, DenseLayerParams]


def init_lstm(input_dim: int, hidden: int, rng: np.random.Generator, frozen: bool = False) -> LstmLayerParams:
    """Uniforme(±1/√fan_in); bias do forget gate = 1"""
    limite_x = 1.0 / np.sqrt(input_dim)
    limite_h = 1.0 / np.sqrt(hidden)
    w_x = rng.uniform(-limite_x, limite_x, size=(input_dim, 4 * hidden))
    w_h = rng.uniform(-limite_h, limite_h, size=(hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    return LstmLayerParams(w_x, w_h, b, frozen)


def init_dense(
    input_dim: int, units: int, activation: Activation, rng: np.random.Generator, frozen: bool = False
) -> DenseLayerParams:
    limite = 1.0 / np.sqrt(input_dim)
    return DenseLayerParams(
        rng.uniform(-limite, limite, size=(input_dim, units)), np.zeros(units), Activation(activation), frozen
    )


# ---------------------------------------------------------------------------
# Forward / backward

def lstm_forward(params: LstmLayerParams, x: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """
    Recorrência LSTM padrão com estado inicial nulo

    Args:
        params: pesos da camada
        x: entrada (B, T, D)

    Returns:
        tuple: (h (B, T, H), cache para o backward)
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != params.input_dim:
        raise ShapeError(f"Entrada LSTM com forma {x.shape}, esperado (B, T, {params.input_dim})")
    if x.shape[1] < 1:
        raise ShapeError("Sequência vazia")

    lote, passos, _ = x.shape
    hs = params.hidden_size
    zx = x @ params.w_x + params.b
    portas = np.empty((lote, passos, 4 * hs))
    c = np.empty((lote, passos, hs))
    tanh_c = np.empty((lote, passos, hs))
    h = np.empty((lote, passos, hs))

    h_ant = np.zeros((lote, hs))
    c_ant = np.zeros((lote, hs))
    for t in range(passos):
        z = zx[:, t] + h_ant @ params.w_h
        g = portas[:, t]
        g[:, : 2 * hs] = expit(z[:, : 2 * hs])
        g[:, 2 * hs : 3 * hs] = np.tanh(z[:, 2 * hs : 3 * hs])
        g[:, 3 * hs :] = expit(z[:, 3 * hs :])
        c[:, t] = g[:, hs : 2 * hs] * c_ant + g[:, :hs] * g[:, 2 * hs : 3 * hs]
        tanh_c[:, t] = np.tanh(c[:, t])
        h[:, t] = g[:, 3 * hs :] * tanh_c[:, t]
        h_ant, c_ant = h[:, t], c[:, t]

    return h, {"x": x, "portas": portas, "c": c, "tanh_c": tanh_c, "h": h}


def lstm_backward(
    params: LstmLayerParams, dh: np.ndarray, cache: Dict[str, np.ndarray]
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    BPTT exato

    Returns:
        tuple: (dL/dx, [dL/dW_x, dL/dW_h, dL/db]); gradientes de parâmetros
        são nulos em camada congelada, mas dL/dx é sempre propagado
    """
    x, portas, c, tanh_c, h = cache["x"], cache["portas"], cache["c"], cache["tanh_c"], cache["h"]
    if dh.shape != h.shape or portas.shape[2] != 4 * params.hidden_size:
        raise ShapeError(f"Cache incompatível: gradiente {dh.shape}, saída {h.shape}")

    lote, passos, hs = h.shape
    dz = np.empty_like(portas)
    dw_h = np.zeros_like(params.w_h)
    dh_prox = np.zeros((lote, hs))
    dc_prox = np.zeros((lote, hs))

    for t in reversed(range(passos)):
        i = portas[:, t, :hs]
        f = portas[:, t, hs : 2 * hs]
        g = portas[:, t, 2 * hs : 3 * hs]
        o = portas[:, t, 3 * hs :]
        c_ant = c[:, t - 1] if t > 0 else np.zeros((lote, hs))

        dh_t = dh[:, t] + dh_prox
        do = dh_t * tanh_c[:, t]
        dc = dh_t * o * (1.0 - tanh_c[:, t] ** 2) + dc_prox
        dc_prox = dc * f

        dz_t = dz[:, t]
        dz_t[:, :hs] = dc * g * i * (1.0 - i)
        dz_t[:, hs : 2 * hs] = dc * c_ant * f * (1.0 - f)
        dz_t[:, 2 * hs : 3 * hs] = dc * i * (1.0 - g ** 2)
        dz_t[:, 3 * hs :] = do * o * (1.0 - o)

        if t > 0 and not params.frozen:
            dw_h += h[:, t - 1].T @ dz_t
        dh_prox = dz_t @ params.w_h.T

    dx = dz @ params.w_x.T
    if params.frozen:
        return dx, [np.zeros_like(a) for a in params.arrays()]
    dw_x = x.reshape(-1, x.shape[2]).T @ dz.reshape(-1, 4 * hs)
    db = dz.sum(axis=(0, 1))
    return dx, [dw_x, dw_h, db]


def dense_forward(params: DenseLayerParams, x: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Aplicada passo a passo: x (..., D) → y (..., U)"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ShapeError(f"Entrada densa com forma {x.shape}, esperado (..., {params.input_dim})")
    z = x @ params.w + params.b
    y = expit(z) if params.activation is Activation.SIGMOID else z
    return y, {"x": x, "y": y}


def dense_backward(
    params: DenseLayerParams, dy: np.ndarray, cache: Dict[str, np.ndarray]
) -> Tuple[np.ndarray, List[np.ndarray]]:
    x, y = cache["x"], cache["y"]
    if dy.shape != y.shape:
        raise ShapeError(f"Cache incompatível: gradiente {dy.shape}, saída {y.shape}")
    dz = dy * y * (1.0 - y) if params.activation is Activation.SIGMOID else dy
    dx = dz @ params.w.T
    if params.frozen:
        return dx, [np.zeros_like(params.w), np.zeros_like(params.b)]
    dz2 = dz.reshape(-1, params.units)
    return dx, [x.reshape(-1, params.input_dim).T @ dz2, dz2.sum(axis=0)]


def mse_loss(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Média do erro quadrático sobre amostras, passos e componentes"""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ShapeError(f"Predições {predictions.shape} e alvos {targets.shape} incompatíveis")
    return float(np.mean((predictions - targets) ** 2))


def mse_grad(predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return 2.0 * (predictions - targets) / predictions.size


# ---------------------------------------------------------------------------
# Normalização

@dataclass
class Normalization:
    """Transformação afim por feature, ajustada só no split de treino"""

    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    @staticmethod
    def _estatisticas(dados: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        planos = dados.reshape(-1, dados.shape[-1])
        media = planos.mean(axis=0)
        desvio = planos.std(axis=0)
        desvio[desvio < PISO_DESVIO] = 1.0
        return media, desvio

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray, inputs_from: Optional["Normalization"] = None) -> "Normalization":
        if inputs_from is not None:
            media_x, desvio_x = inputs_from.input_mean.copy(), inputs_from.input_std.copy()
        else:
            media_x, desvio_x = cls._estatisticas(x)
        media_y, desvio_y = cls._estatisticas(y)
        return cls(media_x, desvio_x, media_y, desvio_y)

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        return (x - self.input_mean) / self.input_std

    def normalize_targets(self, y: np.ndarray) -> np.ndarray:
        return (y - self.target_mean) / self.target_std

    def denormalize_targets(self, y: np.ndarray) -> np.ndarray:
        return y * self.target_std + self.target_mean

    def as_dict(self) -> Dict[str, List[float]]:
        return {k: [float(v) for v in getattr(self, k)] for k in ("input_mean", "input_std", "target_mean", "target_std")}

    @classmethod
    def from_dict(cls, dados: Dict[str, List[float]]) -> "Normalization":
        return cls(**{k: np.array(v, dtype=np.float64) for k, v in dados.items()})


# ---------------------------------------------------------------------------
# Rede

@dataclass
class Network:
    """Spec + parâmetros + normalização + metadados (papel, orçamento, métricas)"""

    spec: ModelSpec
    layers: List[LayerParams]
    normalization: Optional[Normalization] = None
    input_normalization_fixed: bool = False
    metadata: Dict[str, Any] = dc_field(default_factory=dict)

    def __post_init__(self):
        if len(self.layers) != len(self.spec.layers):
            raise ShapeError(f"{len(self.layers)} camadas de parâmetros para {len(self.spec.layers)} na spec")
        for i, (camada, desc, entrada) in enumerate(zip(self.layers, self.spec.layers, self.spec.layer_input_dims())):
            esperado = LstmLayerParams if desc.kind is LayerKind.LSTM else DenseLayerParams
            if not isinstance(camada, esperado):
                raise ShapeError(f"Camada {i}: parâmetros {type(camada).__name__} para spec {desc.kind.value}")
            saida = camada.hidden_size if desc.kind is LayerKind.LSTM else camada.units
            if camada.input_dim != entrada or saida != desc.units:
                raise ShapeError(f"Camada {i}: dimensões ({camada.input_dim}, {saida}) ≠ spec ({entrada}, {desc.units})")
            if camada.frozen != desc.frozen:
                raise DomainError(f"Camada {i}: flag frozen diverge da spec")

    @classmethod
    def initialize(cls, spec: ModelSpec, seed: int) -> "Network":
        rng = np.random.default_rng(seed)
        camadas: List[LayerParams] = []
        for desc, entrada in zip(spec.layers, spec.layer_input_dims()):
            if desc.kind is LayerKind.LSTM:
                camadas.append(init_lstm(entrada, desc.units, rng, desc.frozen))
            else:
                camadas.append(init_dense(entrada, desc.units, desc.activation, rng, desc.frozen))
        return cls(spec, camadas)

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    @property
    def n_parameters(self) -> int:
        return sum(a.size for camada in self.layers for a in camada.arrays())

    def frozen_prefix(self) -> int:
        """Quantidade de camadas congeladas no início da pilha"""
        k = 0
        while k < len(self.layers) and self.layers[k].frozen:
            k += 1
        return k

    def layer_norms(self) -> List[float]:
        return [float(np.sqrt(sum(np.sum(a ** 2) for a in camada.arrays()))) for camada in self.layers]

    def forward(self, x: np.ndarray, start: int = 0, stop: Optional[int] = None) -> Tuple[np.ndarray, List[Dict]]:
        caches = []
        saida = x
        for camada in self.layers[start:stop]:
            if isinstance(camada, LstmLayerParams):
                saida, cache = lstm_forward(camada, saida)
            else:
                saida, cache = dense_forward(camada, saida)
            caches.append(cache)
        return saida, caches

    def backward(self, dy: np.ndarray, caches: List[Dict], start: int = 0) -> List[Optional[List[np.ndarray]]]:
        """Gradientes alinhados a self.layers (None abaixo de `start`)"""
        grads: List[Optional[List[np.ndarray]]] = [None] * len(self.layers)
        delta = dy
        for indice in reversed(range(start, start + len(caches))):
            camada = self.layers[indice]
            cache = caches[indice - start]
            if isinstance(camada, LstmLayerParams):
                delta, grads[indice] = lstm_backward(camada, delta, cache)
            else:
                delta, grads[indice] = dense_backward(camada, delta, cache)
        return grads

    def forward_in_batches(self, x: np.ndarray, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
        partes = [self.forward(x[i : i + LOTE_INFERENCIA], start, stop)[0] for i in range(0, len(x), LOTE_INFERENCIA)]
        return np.concatenate(partes, axis=0)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Predição em unidades originais (aplica e desfaz a normalização)"""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.spec.input_dim:
            raise ShapeError(f"Entrada com forma {x.shape}, esperado (S, T, {self.spec.input_dim})")
        if self.normalization is not None:
            x = self.normalization.normalize_inputs(x)
        y = self.forward_in_batches(x)
        if self.normalization is not None:
            y = self.normalization.denormalize_targets(y)
        return y

    def snapshot(self) -> List[List[np.ndarray]]:
        return [[a.copy() for a in camada.arrays()] for camada in self.layers]

    def restore(self, snapshot: List[List[np.ndarray]]):
        for camada, salvos in zip(self.layers, snapshot):
            for atual, salvo in zip(camada.arrays(), salvos):
                atual[...] = salvo


# ---------------------------------------------------------------------------
# Otimização

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 30
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        erros = []
        if not self.learning_rate > 0:
            erros.append("learning_rate deve ser positivo")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            erros.append("betas devem estar em [0, 1)")
        if not self.epsilon > 0:
            erros.append("epsilon deve ser positivo")
        if self.batch_size < 1:
            erros.append("batch_size deve ser >= 1")
        if self.max_epochs < 0:
            erros.append("max_epochs deve ser >= 0")
        if self.patience < 1:
            erros.append("patience deve ser >= 1")
        if not 0 < self.validation_fraction < 1:
            erros.append("validation_fraction deve estar em (0, 1)")
        if erros:
            raise DomainError("; ".join(erros))

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class AdamState:
    m: List[List[np.ndarray]]
    v: List[List[np.ndarray]]
    t: int = 0

    @classmethod
    def for_network(cls, network: Network) -> "AdamState":
        return cls(
            [[np.zeros_like(a) for a in c.arrays()] for c in network.layers],
            [[np.zeros_like(a) for a in c.arrays()] for c in network.layers],
        )


def adam_step(
    layers: Sequence[LayerParams],
    grads: Sequence[Optional[List[np.ndarray]]],
    state: AdamState,
    config: TrainConfig,
) -> AdamState:
    """Atualização Adam com correção de viés, in-place; camadas congeladas não mudam"""
    if len(state.m) != len(layers) or len(grads) != len(layers):
        raise ShapeError("Estado do otimizador não corresponde às camadas")
    state.t += 1
    correcao1 = 1.0 - config.beta1 ** state.t
    correcao2 = 1.0 - config.beta2 ** state.t
    for indice, camada in enumerate(layers):
        if camada.frozen or grads[indice] is None:
            continue
        for param, grad, m, v in zip(camada.arrays(), grads[indice], state.m[indice], state.v[indice]):
            if grad.shape != param.shape:
                raise ShapeError(f"Gradiente {grad.shape} para parâmetro {param.shape}")
            m *= config.beta1
            m += (1.0 - config.beta1) * grad
            v *= config.beta2
            v += (1.0 - config.beta2) * grad * grad
            param -= config.learning_rate * (m / correcao1) / (np.sqrt(v / correcao2) + config.epsilon)
    return state


@dataclass
class TrainingHistory:
    epochs: List[int] = dc_field(default_factory=list)
    train_loss: List[float] = dc_field(default_factory=list)
    val_loss: List[float] = dc_field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.epochs)

    def append(self, epoca: int, treino: float, validacao: float):
        self.epochs.append(epoca)
        self.train_loss.append(treino)
        self.val_loss.append(validacao)

    def to_csv(self, path: Union[str, Path]) -> Path:
        linhas = list(zip(self.epochs, self.train_loss, self.val_loss))
        return escrever_csv(path, ["epoch", "train_loss", "val_loss"], linhas)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "TrainingHistory":
        historico = cls()
        linhas = Path(path).read_text(encoding="utf-8").splitlines()[1:]
        if not linhas:
            return historico
        dados = np.loadtxt(linhas, delimiter=",", ndmin=2)
        for epoca, treino, validacao in dados:
            historico.append(int(epoca), float(treino), float(validacao))
        if len(historico):
            historico.best_epoch = historico.epochs[int(np.argmin(historico.val_loss))]
        return historico


def _dividir_validacao(n: int, fracao: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    ordem = rng.permutation(n)
    if n < 2:
        return ordem, ordem
    n_val = min(max(1, int(round(n * fracao))), n - 1)
    return ordem[n_val:], ordem[:n_val]


def train(
    model: Union[Network, ModelSpec],
    x: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
) -> Tuple[Network, TrainingHistory]:
    """
    Treino em mini-batches com checkpoint da melhor validação

    O modelo recebido não é alterado. A normalização é ajustada no split de
    treino (a de entrada é herdada quando `input_normalization_fixed`). Se as
    primeiras camadas estão congeladas, suas saídas são calculadas uma única vez.

    Returns:
        tuple: (rede treinada, histórico por época)
    """
    rede = Network.initialize(model, config.seed) if isinstance(model, ModelSpec) else model.copy()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 3 or y.ndim != 3 or x.shape[:2] != y.shape[:2]:
        raise ShapeError(f"Entradas {x.shape} e alvos {y.shape} incompatíveis")
    if x.shape[2] != rede.spec.input_dim or y.shape[2] != rede.spec.output_dim:
        raise ShapeError(
            f"Dados ({x.shape[2]} → {y.shape[2]}) não batem com o modelo ({rede.spec.input_dim} → {rede.spec.output_dim})"
        )
    if len(x) == 0:
        raise DomainError("Dataset de treino vazio")

    rng = np.random.default_rng(config.seed)
    idx_treino, idx_val = _dividir_validacao(len(x), config.validation_fraction, rng)
    herdada = rede.normalization if rede.input_normalization_fixed else None
    norm = Normalization.fit(x[idx_treino], y[idx_treino], inputs_from=herdada)
    rede.normalization = norm
    historico = TrainingHistory()
    if config.max_epochs == 0:
        return rede, historico

    inicio = rede.frozen_prefix()
    if inicio == len(rede.layers):
        raise DomainError("Modelo sem camadas treináveis")
    xn = norm.normalize_inputs(x)
    yn = norm.normalize_targets(y)
    if inicio > 0:
        logger.debug(f"Pré-calculando {inicio} camada(s) congelada(s)")
        xn = rede.forward_in_batches(xn, 0, inicio)
    x_tr, y_tr = xn[idx_treino], yn[idx_treino]
    x_val, y_val = xn[idx_val], yn[idx_val]

    estado = AdamState.for_network(rede)
    melhor_val = np.inf
    melhor = rede.snapshot()
    sem_melhora = 0
    n_tr = len(x_tr)

    for epoca in range(1, config.max_epochs + 1):
        ordem = rng.permutation(n_tr)
        soma = 0.0
        for lote, ini in enumerate(range(0, n_tr, config.batch_size)):
            indices = ordem[ini : ini + config.batch_size]
            pred, caches = rede.forward(x_tr[indices], start=inicio)
            perda = mse_loss(pred, y_tr[indices])
            if not np.isfinite(perda):
                logger.error(f"Divergência na época {epoca}, batch {lote}")
                raise TrainingDivergenceError(epoca, lote, rede.layer_norms())
            grads = rede.backward(mse_grad(pred, y_tr[indices]), caches, start=inicio)
            adam_step(rede.layers, grads, estado, config)
            soma += perda * len(indices)

        perda_val = mse_loss(rede.forward_in_batches(x_val, start=inicio), y_val)
        if not np.isfinite(perda_val):
            raise TrainingDivergenceError(epoca, -1, rede.layer_norms())
        historico.append(epoca, soma / n_tr, perda_val)
        logger.debug(f"Época {epoca}: treino={soma / n_tr:.6e} validação={perda_val:.6e}")

        if perda_val < melhor_val:
            melhor_val = perda_val
            melhor = rede.snapshot()
            historico.best_epoch = epoca
            sem_melhora = 0
        else:
            sem_melhora += 1
            if sem_melhora >= config.patience:
                historico.stopped_early = True
                logger.info(f"Early stopping na época {epoca} (melhor: {historico.best_epoch})")
                break

    rede.restore(melhor)
    return rede, historico


def gradient_check(network: Network, x: np.ndarray, y: np.ndarray, eps: float = 1e-5) -> float:
    """
    Maior desvio relativo entre gradiente analítico e diferença central

    Usa a perda MSE direta (sem normalização). Camadas congeladas são puladas.
    Desvio = |a − n| / max(|a|, |n|, 1e−2).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    pred, caches = network.forward(x)
    analiticos = network.backward(mse_grad(pred, y), caches)

    pior = 0.0
    for camada, grads in zip(network.layers, analiticos):
        if camada.frozen:
            continue
        for param, grad in zip(camada.arrays(), grads):
            for idx in np.ndindex(param.shape):
                original = param[idx]
                param[idx] = original + eps
                mais = mse_loss(network.forward(x)[0], y)
                param[idx] = original - eps
                menos = mse_loss(network.forward(x)[0], y)
                param[idx] = original
                numerico = (mais - menos) / (2.0 * eps)
                escala = max(abs(grad[idx]), abs(numerico), PISO_GRADIENTE)
                pior = max(pior, abs(grad[idx] - numerico) / escala)
    return pior


# ---------------------------------------------------------------------------
# Artefato de modelo

def _serializar(network: Network) -> Tuple[Dict[str, Any], bytes]:
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for c in network.layers for a in c.arrays())
    header = {
        "format_version": VERSAO_MODELO,
        "spec": network.spec.as_dict(),
        "normalization": None if network.normalization is None else network.normalization.as_dict(),
        "input_normalization_fixed": network.input_normalization_fixed,
        "metadata": network.metadata,
        "parameter_count": network.n_parameters,
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    return header, payload


def network_bytes(network: Network) -> bytes:
    header, payload = _serializar(network)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC_MODELO + struct.pack("<II", VERSAO_MODELO, len(header_bytes)) + header_bytes + payload


def network_hash(network: Network) -> str:
    return hashlib.sha256(network_bytes(network)).hexdigest()


def save_network(network: Network, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temporario = path.with_name(path.name + ".tmp")
    try:
        temporario.write_bytes(network_bytes(network))
        temporario.replace(path)
    except BaseException:
        temporario.unlink(missing_ok=True)
        raise
    return path


def load_network(path: Union[str, Path]) -> Network:
    dados = Path(path).read_bytes()
    if dados[:8] != MAGIC_MODELO:
        raise DatasetFormatError(f"{path} não é um artefato de modelo")
    try:
        versao, tamanho = struct.unpack("<II", dados[8:16])
    except struct.error as e:
        raise ChecksumError(f"Artefato truncado: {path}") from e
    if versao != VERSAO_MODELO:
        raise VersionError(f"Versão de modelo {versao} não suportada (esperado {VERSAO_MODELO})")
    try:
        header = json.loads(dados[16 : 16 + tamanho].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ChecksumError(f"Cabeçalho do modelo corrompido: {path}") from e

    payload = dados[16 + tamanho :]
    if len(payload) != header["parameter_count"] * 8 or hashlib.sha256(payload).hexdigest() != header["checksum"]:
        raise ChecksumError(f"Checksum dos parâmetros não confere em {path}")

    spec = ModelSpec.from_dict(header["spec"])
    valores = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    pos = 0

    def proximo(forma: Tuple[int, ...]) -> np.ndarray:
        nonlocal pos
        n = int(np.prod(forma))
        bloco = valores[pos : pos + n].reshape(forma).copy()
        pos += n
        return bloco

    camadas: List[LayerParams] = []
    for desc, entrada in zip(spec.layers, spec.layer_input_dims()):
        u = desc.units
        if desc.kind is LayerKind.LSTM:
            camadas.append(LstmLayerParams(proximo((entrada, 4 * u)), proximo((u, 4 * u)), proximo((4 * u,)), desc.frozen))
        else:
            camadas.append(DenseLayerParams(proximo((entrada, u)), proximo((u,)), desc.activation, desc.frozen))

    normalizacao = None if header["normalization"] is None else Normalization.from_dict(header["normalization"])
    return Network(spec, camadas, normalizacao, header["input_normalization_fixed"], header["metadata"])
