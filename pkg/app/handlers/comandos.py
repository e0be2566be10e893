"""
Handler dos comandos da CLI
Cada comando retorna um dict {"sucesso", "erro", ...}; exceções viram
mensagens e código de saída aqui
"""
import functools
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional

from ..config import ExperimentConfig, preset, save_config
from ..services.dataset import ObservableSet, export_csv, load_dataset
from ..services.graficos import EvalReportSchema, escrever_csv, escrever_json
from ..services.modelos import Role, evaluate, load_role_model
from ..services.pipeline import PipelineService
from ..utils.erros import ConfigValidationError, DatasetFormatError, DomainError, QuantumTLError, ShapeError
from . import experimentos

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USO = 1
EXIT_VALIDACAO = 2
EXIT_EXECUCAO = 3


def codigo_de_saida(erro: Exception) -> int:
    if isinstance(erro, (ConfigValidationError, DomainError, ShapeError, DatasetFormatError, FileNotFoundError)):
        return EXIT_VALIDACAO
    return EXIT_EXECUCAO


def comando(func: Callable[..., Dict[str, Any]]) -> Callable[..., Dict[str, Any]]:
    """Converte exceções no formato de resultado dos comandos"""

    @functools.wraps(func)
    def envolvido(*args, **kwargs) -> Dict[str, Any]:
        try:
            resultado = func(*args, **kwargs)
        except ConfigValidationError as e:
            logger.error(f"Configuração inválida: {e}")
            return {"sucesso": False, "erro": str(e), "detalhes": e.erros, "codigo": EXIT_VALIDACAO}
        except (QuantumTLError, FileNotFoundError) as e:
            logger.error(f"Erro em {func.__name__}: {e}")
            return {"sucesso": False, "erro": str(e), "codigo": codigo_de_saida(e)}
        except Exception as e:
            logger.exception(f"Erro inesperado em {func.__name__}: {e}")
            return {"sucesso": False, "erro": f"{type(e).__name__}: {e}", "codigo": EXIT_EXECUCAO}
        resultado.setdefault("sucesso", True)
        resultado.setdefault("erro", None)
        resultado.setdefault("codigo", EXIT_OK if resultado["sucesso"] else EXIT_USO)
        return resultado

    return envolvido


@comando
def init_config(nome_preset: str, caminho: str) -> Dict[str, Any]:
    cfg = preset(nome_preset)
    save_config(cfg, caminho)
    logger.info(f"Preset '{nome_preset}' gravado em {caminho}")
    return {"arquivo": str(caminho)}


@comando
def generate_data(cfg: ExperimentConfig, split: str = "all") -> Dict[str, Any]:
    if split not in ("train", "test", "all"):
        raise DomainError(f"split desconhecido: {split} (opções: train, test, all)")
    pipeline = PipelineService(cfg)
    arquivos, hits = [], []
    for nome in (("train", "test") if split == "all" else (split,)):
        caminho, hit = pipeline.gerar_dataset(nome)
        arquivos.append(str(caminho))
        hits.append(hit)
    return {"arquivos": arquivos, "cache_hits": hits}


@comando
def train(
    cfg: ExperimentConfig,
    role: str,
    obs: Optional[str] = None,
    seed: int = 0,
    budget: Optional[int] = None,
    source_budget: Optional[int] = None,
) -> Dict[str, Any]:
    """Treina (ou reaproveita) um modelo do papel pedido"""
    pipeline = PipelineService(cfg)
    papel = Role(role)
    conjunto = ObservableSet(obs) if obs else experimentos.obs_principal(cfg)
    if papel is Role.SOURCE:
        modelo, descricao = pipeline.source(conjunto, budget or max(cfg.budgets.source), seed)
    elif papel is Role.TL:
        modelo, descricao = pipeline.tl(conjunto, source_budget or max(cfg.budgets.source), seed, budget=budget)
    elif papel is Role.DT:
        modelo, descricao = pipeline.dt(budget or max(cfg.budgets.dt), seed)
    else:
        modelo, descricao = pipeline.frontend(conjunto, seed, budget=budget)

    caminho = pipeline.cache.buscar("modelo", descricao)
    relatorio = pipeline.avaliar(modelo)
    return {
        "modelo": str(caminho),
        "papel": papel.value,
        "orcamento": modelo.sample_budget,
        "test_mse": relatorio.overall_mse,
    }


@comando
def evaluate_model(cfg: ExperimentConfig, caminho_modelo: str, caminho_teste: Optional[str] = None) -> Dict[str, Any]:
    """EvalReport em JSON + curvas por passo e pior caso em CSV"""
    modelo = load_role_model(caminho_modelo)
    pipeline = PipelineService(cfg)
    if caminho_teste:
        relatorio = evaluate(modelo, load_dataset(caminho_teste))
    else:
        relatorio = pipeline.avaliar(modelo)

    pasta = pipeline.output_dir / "avaliacoes" / Path(caminho_modelo).stem
    escrever_json(pasta / "relatorio.json", EvalReportSchema, relatorio.to_dict())
    escrever_csv(
        pasta / "mse_por_passo.csv",
        ["step", "t", "mse"],
        [[k, t, v] for k, (t, v) in enumerate(zip(relatorio.times, relatorio.per_timestep_mse))],
    )
    escrever_csv(
        pasta / "pior_caso.csv",
        ["step", "t", "true", "predicted"],
        [[k, t, v, p] for k, (t, v, p) in enumerate(zip(relatorio.times, relatorio.worst_true[:, 0], relatorio.worst_pred[:, 0]))],
    )
    return {"relatorio": str(pasta / "relatorio.json"), "overall_mse": relatorio.overall_mse, "worst_seed": relatorio.worst_seed}


@comando
def export_dataset_csv(caminho_dataset: str, caminho_csv: str) -> Dict[str, Any]:
    dataset = load_dataset(caminho_dataset)
    export_csv(dataset, caminho_csv)
    return {"arquivo": str(caminho_csv), "amostras": len(dataset)}


@comando
def experiment(cfg: ExperimentConfig, nome: str, which: Optional[str] = None) -> Dict[str, Any]:
    if nome == "fig2":
        return experimentos.fig2(cfg)
    if nome == "fig3":
        return experimentos.fig3(cfg)
    if nome == "appendix":
        if which is None:
            raise DomainError("appendix exige --which a|b|c|d")
        return experimentos.appendix(cfg, which)
    raise DomainError(f"Experimento desconhecido: {nome}")


@comando
def stats(cfg: ExperimentConfig) -> Dict[str, Any]:
    return PipelineService(cfg).cache.estatisticas()
