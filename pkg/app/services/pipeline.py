"""
Pipeline com cache: datasets e modelos por papel
Cada artefato é identificado pelo hash de tudo que o determina, então
repetir um comando com a mesma configuração reaproveita os arquivos
"""
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

from ..config import Config, ExperimentConfig, verificar_output_dir
from ..database import criar_sessionmaker
from .cache import CacheService, chave_conteudo
from .dataset import Dataset, ObservableSet, generate_dataset, load_dataset, split_seeds
from .modelos import (
    EvalReport,
    Role,
    RoleModel,
    build_dt,
    build_frontend,
    build_tl,
    evaluate,
    load_role_model,
    save_role_model,
    train_dt,
    train_frontend,
    train_source,
    train_tl,
)
from .rede import TrainingHistory

logger = logging.getLogger(__name__)

Descricao = Dict[str, Any]


class PipelineService:
    """Acesso aos artefatos de um experimento"""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.output_dir = verificar_output_dir(Config.resolver_output_dir(cfg.output_dir))
        self.cache = CacheService(self.output_dir, criar_sessionmaker(Config.database_url(self.output_dir)))
        self.workers = Config.resolver_workers(cfg.workers)
        self._datasets: Dict[str, Dataset] = {}

    # -- datasets -----------------------------------------------------------

    def _g(self, longitudinal: Optional[float]) -> float:
        return self.cfg.physics.longitudinal if longitudinal is None else float(longitudinal)

    def _sweep(self, sweep: Optional[bool]) -> bool:
        return self.cfg.entropy_sweep if sweep is None else sweep

    def descricao_dataset(
        self,
        split: str,
        longitudinal: Optional[float] = None,
        sweep: Optional[bool] = None,
        field_kind: str = "gaussian_process",
    ) -> Descricao:
        if split not in ("train", "test"):
            raise ValueError(f"split desconhecido: {split}")
        if split == "train" and field_kind != "gaussian_process":
            raise ValueError(f"o treino usa apenas o processo gaussiano (recebido {field_kind})")
        dcfg = self.cfg.dataset_config(self._g(longitudinal), self._sweep(sweep), field_kind)
        budgets = self.cfg.budgets
        base_treino, base_teste = split_seeds(self.cfg.data_seed, budgets.max_train, budgets.test)
        return {
            "kind": "dataset",
            **dcfg.header(),
            "sample_count": budgets.max_train if split == "train" else budgets.test,
            "base_seed": base_treino if split == "train" else base_teste,
        }

    def gerar_dataset(
        self,
        split: str,
        longitudinal: Optional[float] = None,
        sweep: Optional[bool] = None,
        field_kind: str = "gaussian_process",
    ) -> Tuple[Path, bool]:
        descricao = self.descricao_dataset(split, longitudinal, sweep, field_kind)
        dcfg = self.cfg.dataset_config(self._g(longitudinal), self._sweep(sweep), field_kind)

        def criar(caminho: Path):
            generate_dataset(dcfg, descricao["sample_count"], descricao["base_seed"], caminho, self.workers)

        return self.cache.obter_ou_criar("dataset", descricao, criar)

    def dataset(
        self,
        split: str,
        longitudinal: Optional[float] = None,
        sweep: Optional[bool] = None,
        field_kind: str = "gaussian_process",
    ) -> Dataset:
        chave = chave_conteudo(self.descricao_dataset(split, longitudinal, sweep, field_kind))
        if chave not in self._datasets:
            caminho, _ = self.gerar_dataset(split, longitudinal, sweep, field_kind)
            self._datasets[chave] = load_dataset(caminho)
        return self._datasets[chave]

    # -- modelos ------------------------------------------------------------

    def _descricao_modelo(self, role: str, seed: int, budget: int, longitudinal, sweep, **extra) -> Descricao:
        return {
            "kind": "model",
            "role": role,
            "seed": seed,
            "budget": budget,
            "dataset": chave_conteudo(self.descricao_dataset("train", longitudinal, sweep)),
            "training": self.cfg.training.model_dump(mode="json"),
            **extra,
        }

    def _modelo(self, descricao: Descricao, treinar: Callable[[], RoleModel]) -> RoleModel:
        def criar(caminho: Path):
            modelo = treinar()
            save_role_model(modelo, caminho)
            if modelo.history is not None:
                modelo.history.to_csv(self.caminho_historico(caminho))

        caminho, _ = self.cache.obter_ou_criar("modelo", descricao, criar)
        return load_role_model(caminho)

    @staticmethod
    def caminho_historico(caminho_modelo: Path) -> Path:
        return caminho_modelo.with_name(caminho_modelo.name + ".history.csv")

    def historico(self, descricao: Descricao) -> Optional[TrainingHistory]:
        caminho = self.cache.buscar("modelo", descricao)
        if caminho is None or not self.caminho_historico(caminho).exists():
            return None
        return TrainingHistory.from_csv(self.caminho_historico(caminho))

    def source(
        self,
        obs: ObservableSet,
        budget: int,
        seed: int,
        longitudinal: Optional[float] = None,
        output_layer: str = "dense",
    ) -> Tuple[RoleModel, Descricao]:
        obs = ObservableSet(obs)
        t = self.cfg.training
        descricao = self._descricao_modelo(
            "source", seed, budget, longitudinal, None, obs=obs.value, output_layer=output_layer
        )

        def treinar() -> RoleModel:
            dados = self.dataset("train", longitudinal)
            return train_source(obs, dados, t.train_config(seed), budget, t.lstm_width, output_layer)

        return self._modelo(descricao, treinar), descricao

    def tl(
        self,
        obs: ObservableSet,
        source_budget: int,
        seed: int,
        longitudinal: Optional[float] = None,
        discard_last_k: int = 0,
        head: str = "dense",
        output_layer: str = "dense",
        budget: Optional[int] = None,
    ) -> Tuple[RoleModel, Descricao]:
        budget = budget or self.cfg.budgets.tl
        t = self.cfg.training
        fonte, descricao_fonte = self.source(obs, source_budget, seed, longitudinal, output_layer)
        descricao = self._descricao_modelo(
            "tl", seed, budget, longitudinal, None,
            source=chave_conteudo(descricao_fonte), discard_last_k=discard_last_k, head=head,
        )

        def treinar() -> RoleModel:
            modelo = build_tl(fonte, discard_last_k, head, seed, t.head_width)
            return train_tl(modelo, self.dataset("train", longitudinal), t.train_config(seed), budget)

        return self._modelo(descricao, treinar), descricao

    def dt(
        self,
        budget: int,
        seed: int,
        longitudinal: Optional[float] = None,
        entropy_size: Optional[int] = None,
        joint: bool = False,
    ) -> Tuple[RoleModel, Descricao]:
        t = self.cfg.training
        sweep = True if (joint or entropy_size is not None) else None
        saida = self.cfg.physics.n_spins // 2 if joint else 1
        descricao = self._descricao_modelo(
            "dt", seed, budget, longitudinal, sweep, entropy_size=entropy_size, joint=joint
        )

        def treinar() -> RoleModel:
            modelo = build_dt(seed, t.lstm_width, saida, entropy_size)
            return train_dt(modelo, self.dataset("train", longitudinal, sweep), t.train_config(seed), budget)

        return self._modelo(descricao, treinar), descricao

    def frontend(
        self, obs: ObservableSet, seed: int, longitudinal: Optional[float] = None, budget: Optional[int] = None
    ) -> Tuple[RoleModel, Descricao]:
        obs = ObservableSet(obs)
        budget = budget or self.cfg.budgets.frontend
        t = self.cfg.training
        descricao = self._descricao_modelo("frontend", seed, budget, longitudinal, None, obs=obs.value)

        def treinar() -> RoleModel:
            modelo = build_frontend(obs, seed, t.head_width)
            return train_frontend(modelo, self.dataset("train", longitudinal), t.train_config(seed), budget)

        return self._modelo(descricao, treinar), descricao

    def avaliar(
        self,
        modelo: RoleModel,
        longitudinal: Optional[float] = None,
        sweep: Optional[bool] = None,
        field_kind: str = "gaussian_process",
    ) -> EvalReport:
        """
        Avalia no conjunto de teste com o mesmo tipo de dataset usado no treino

        `field_kind` troca apenas o gerador do campo do teste (quench ou
        periódico medem generalização fora da distribuição de treino).
        """
        varredura = modelo.entropy_size is not None or modelo.network.spec.output_dim > 1
        if sweep is None and modelo.role is Role.DT and varredura:
            sweep = True
        return evaluate(modelo, self.dataset("test", longitudinal, sweep, field_kind))
