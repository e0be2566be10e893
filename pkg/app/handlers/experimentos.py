"""
Handler dos experimentos
Correlação fonte/TL, curvas de MSE por passo e ablações, com saída em
JSON, CSV e SVG
"""
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import spearmanr

from ..config import ExperimentConfig
from ..services.cache import chave_conteudo
from ..services.dataset import ObservableSet
from ..services.graficos import ExperimentReportSchema, escrever_csv, escrever_json, grafico_linhas
from ..services.modelos import (
    ablation_discard_layers,
    ablation_output_layer,
    ablation_trainable_kind,
    subsystem_sweep,
    summarize_seeds,
    worst_case_union,
)
from ..services.pipeline import PipelineService
from ..utils.paralelo import map_ordenado

logger = logging.getLogger(__name__)

ABLACOES = ("a", "b", "c", "d")
# violação tolerada na monotonicidade da varredura de subsistemas
TOLERANCIA_MONOTONIA = 0.10


def obs_principal(cfg: ExperimentConfig) -> ObservableSet:
    if ObservableSet.COMBINED in cfg.observable_sets:
        return ObservableSet.COMBINED
    return cfg.observable_sets[0]


def _descricao_relatorio(cfg: ExperimentConfig, experimento: str) -> Dict[str, Any]:
    # output_dir e workers não alteram resultados
    return {
        "kind": "report",
        "experiment": experimento,
        "config": cfg.model_dump(mode="json", exclude={"output_dir", "workers", "name"}),
    }


def _preparar_datasets(pipeline: PipelineService, gs: List[float], sweep: Optional[bool] = None):
    """Gera os datasets no processo principal antes de distribuir as seeds"""
    for g in gs:
        for split in ("train", "test"):
            pipeline.gerar_dataset(split, g, sweep)


def _executar(
    pipeline: PipelineService,
    experimento: str,
    montar: Callable[[PipelineService, Path], Tuple[List[Dict[str, Any]], Dict[str, Any]]],
) -> Dict[str, Any]:
    """Executa (ou reaproveita) um experimento e grava o relatório"""
    descricao = _descricao_relatorio(pipeline.cfg, experimento)
    chave = chave_conteudo(descricao)
    resumo: Dict[str, Any] = {}

    def criar(caminho: Path):
        pasta = caminho.with_suffix("")
        linhas, extra = montar(pipeline, pasta)
        resumo.update(extra)
        escrever_json(
            caminho,
            ExperimentReportSchema,
            {"experiment": experimento, "config_hash": chave, "rows": linhas, "summary": extra},
        )
        for linha in linhas:
            if "mse" in linha:
                pipeline.cache.registrar_resultado(
                    experimento,
                    linha.get("role", experimento),
                    "test_mse",
                    linha["mse"],
                    artefato_hash=chave,
                    conjunto_observaveis=linha.get("observable_set"),
                    orcamento=linha.get("budget"),
                    seed=linha.get("seed"),
                    longitudinal=linha.get("g", pipeline.cfg.physics.longitudinal),
                )

    caminho, hit = pipeline.cache.obter_ou_criar("relatorio", descricao, criar)
    if hit:
        resumo = json.loads(caminho.read_text(encoding="utf-8"))["summary"]
    logger.info(f"Experimento {experimento}: {'cache hit' if hit else 'concluído'} ({caminho})")
    return {"sucesso": True, "erro": None, "relatorio": str(caminho), "cache_hit": hit, "resumo": resumo}


def _linha(role: str, seed: int, relatorio, **campos) -> Dict[str, Any]:
    return {
        "role": role,
        "seed": seed,
        "mse": relatorio.overall_mse,
        "bootstrap_variance": relatorio.bootstrap_variance(),
        **campos,
    }


def _resumir(linhas: List[Dict[str, Any]], chaves: Tuple[str, ...]) -> Dict[str, Any]:
    """Mediana e variância entre seeds, agrupando pelas chaves dadas"""
    grupos: Dict[str, List[Dict[str, Any]]] = {}
    for linha in linhas:
        nome = "/".join(str(linha.get(c)) for c in chaves)
        grupos.setdefault(nome, []).append(linha)
    resumo = {}
    for nome, grupo in grupos.items():
        estatisticas = summarize_seeds([l["mse"] for l in grupo])
        estatisticas["bootstrap_variance_mean"] = float(np.mean([l["bootstrap_variance"] for l in grupo]))
        resumo[nome] = estatisticas
    return resumo


# ---------------------------------------------------------------------------
# Correlação fonte × TL

def paineis(cfg: ExperimentConfig) -> List[float]:
    """Valores de g comparados nas figuras e ablações (integrável primeiro)"""
    return list(cfg.physics.panels)


def _sufixo(g: float) -> str:
    return f"g{g:g}"


def _seed_fig2(tarefa: Tuple[Dict[str, Any], int, float]) -> List[Dict[str, Any]]:
    cfg_dados, seed, g = tarefa
    pipeline = PipelineService(ExperimentConfig.model_validate(cfg_dados))
    cfg = pipeline.cfg
    linhas = []
    for obs in cfg.observable_sets:
        for budget in cfg.budgets.source:
            fonte, _ = pipeline.source(obs, budget, seed, g)
            tl, _ = pipeline.tl(obs, budget, seed, g)
            linhas.append(_linha("source", seed, pipeline.avaliar(fonte, g), g=g, observable_set=obs.value, budget=budget))
            linhas.append(
                _linha(
                    "tl", seed, pipeline.avaliar(tl, g),
                    g=g, observable_set=obs.value, budget=cfg.budgets.tl, source_budget=budget,
                )
            )
        frontend, _ = pipeline.frontend(obs, seed, g)
        linhas.append(
            _linha("frontend", seed, pipeline.avaliar(frontend, g), g=g, observable_set=obs.value, budget=cfg.budgets.frontend)
        )
    for budget in cfg.budgets.dt:
        dt, _ = pipeline.dt(budget, seed, g)
        linhas.append(_linha("dt", seed, pipeline.avaliar(dt, g), g=g, budget=budget))
    return linhas


def _painel_fig2(cfg: ExperimentConfig, linhas: List[Dict[str, Any]], g: float, pasta: Path) -> Dict[str, Any]:
    """Pares de medianas, Spearman, CSV e SVG de um valor de g"""
    linhas = [l for l in linhas if l["g"] == g]
    pares = []
    for obs in cfg.observable_sets:
        for budget in cfg.budgets.source:
            fonte = [l["mse"] for l in linhas if l["role"] == "source" and l["observable_set"] == obs.value and l["budget"] == budget]
            tl = [l["mse"] for l in linhas if l["role"] == "tl" and l["observable_set"] == obs.value and l["source_budget"] == budget]
            pares.append((obs.value, budget, float(np.median(fonte)), float(np.median(tl))))

    correlacao = None
    if len(pares) >= 3:
        rho = spearmanr([p[2] for p in pares], [p[3] for p in pares]).correlation
        correlacao = None if np.isnan(rho) else float(rho)

    escrever_csv(
        pasta / f"fig2_pares_{_sufixo(g)}.csv",
        ["observable_set", "source_budget", "source_mse_median", "tl_mse_median"],
        pares,
    )
    series = {}
    for obs in cfg.observable_sets:
        pontos = sorted((p[2], p[3]) for p in pares if p[0] == obs.value)
        series[obs.label] = ([p[0] for p in pontos], [p[1] for p in pontos])
    grafico_linhas(pasta / f"fig2_{_sufixo(g)}.svg", series, f"MSE fonte × MSE TL (g={g:g})", "MSE fonte", "MSE TL")

    frontend = {
        obs.value: float(np.median([l["mse"] for l in linhas if l["role"] == "frontend" and l["observable_set"] == obs.value]))
        for obs in cfg.observable_sets
    }
    return {
        "groups": _resumir(linhas, ("role", "observable_set", "source_budget", "budget")),
        "spearman_source_tl": correlacao,
        "pairs": [list(p) for p in pares],
        "frontend_medians": frontend,
    }


def razao_frontend(por_painel: Dict[str, Dict[str, Any]]) -> Dict[str, Optional[float]]:
    """Maior sobre menor mediana do front-end entre os valores de g, por conjunto de observáveis"""
    conjuntos = set.intersection(*(set(p["frontend_medians"]) for p in por_painel.values()))
    razoes = {}
    for obs in sorted(conjuntos):
        medianas = [p["frontend_medians"][obs] for p in por_painel.values()]
        razoes[obs] = float(max(medianas) / min(medianas)) if min(medianas) > 0 else None
    return razoes


def _montar_fig2(pipeline: PipelineService, pasta: Path):
    cfg = pipeline.cfg
    gs = paineis(cfg)
    _preparar_datasets(pipeline, gs)
    tarefas = [(cfg.model_dump(mode="json"), seed, g) for g in gs for seed in cfg.seeds]
    linhas = [l for grupo in map_ordenado(_seed_fig2, tarefas, pipeline.workers) for l in grupo]

    por_painel = {f"g={g:g}": _painel_fig2(cfg, linhas, g, pasta) for g in gs}
    _csv_linhas(pasta / "fig2_seeds.csv", linhas)

    razoes = razao_frontend(por_painel)
    return linhas, {
        "panels": por_painel,
        "frontend_ratio": razoes,
        "frontend_within_2x": all(r is not None and r <= 2.0 for r in razoes.values()),
    }


def _csv_linhas(caminho: Path, linhas: List[Dict[str, Any]]):
    colunas = sorted({c for l in linhas for c in l})
    valores = [[l.get(c, "") if l.get(c) is not None else "" for c in colunas] for l in linhas]
    escrever_csv(caminho, colunas, valores)


def fig2(cfg: ExperimentConfig) -> Dict[str, Any]:
    return _executar(PipelineService(cfg), "fig2", _montar_fig2)


# ---------------------------------------------------------------------------
# Curvas de MSE e piores casos

def _painel_fig3(pipeline: PipelineService, g: float, pasta: Path):
    cfg = pipeline.cfg
    obs = obs_principal(cfg)
    budget_fonte = max(cfg.budgets.source)
    linhas, generalizacao, curvas, piores = [], [], {}, []

    for i, seed in enumerate(cfg.seeds):
        modelos = {}
        modelos["tl"], _ = pipeline.tl(obs, budget_fonte, seed, g)
        for budget in cfg.budgets.dt:
            modelos[f"dt_{budget}"], _ = pipeline.dt(budget, seed, g)
        modelos["frontend"], _ = pipeline.frontend(obs, seed, g)
        relatorios = {nome: pipeline.avaliar(modelo, g) for nome, modelo in modelos.items()}

        for nome, rel in relatorios.items():
            linhas.append(
                _linha(nome.split("_")[0], seed, rel, g=g, observable_set=obs.value, budget=rel.sample_budget, model=nome)
            )
        for tipo in cfg.generalization_fields:
            for nome, modelo in modelos.items():
                if nome == "frontend":
                    continue
                rel = pipeline.avaliar(modelo, g, field_kind=tipo)
                generalizacao.append({"g": g, "field_kind": tipo, "model": nome, "seed": seed, "test_mse": rel.overall_mse})
        if i == 0:
            tempos = relatorios["tl"].times
            curvas = {nome: rel.per_timestep_mse for nome, rel in relatorios.items()}
            piores = worst_case_union({k: v for k, v in relatorios.items() if k == "tl" or k.startswith("dt_")})

    sufixo = _sufixo(g)
    nomes = list(curvas)
    escrever_csv(
        pasta / f"fig3_mse_por_passo_{sufixo}.csv",
        ["step", "t"] + nomes,
        [[k, tempos[k]] + [curvas[n][k] for n in nomes] for k in range(len(tempos))],
    )
    colunas_piores, valores_piores = ["step", "t"], [[k, tempos[k]] for k in range(len(tempos))]
    for caso in piores:
        for nome in ["true"] + nomes:
            if nome in caso:
                colunas_piores.append(f"{nome}_seed{caso['seed']}")
                for k in range(len(tempos)):
                    valores_piores[k].append(caso[nome][k])
    escrever_csv(pasta / f"fig3_piores_casos_{sufixo}.csv", colunas_piores, valores_piores)

    log_y = all(np.all(c > 0) for c in curvas.values())
    grafico_linhas(
        pasta / f"fig3_{sufixo}.svg",
        {n: (tempos, c) for n, c in curvas.items()},
        f"MSE por passo de tempo (g={g:g})",
        "t",
        "MSE",
        log_y=log_y,
    )

    medianas = {
        nome: float(np.median([l["mse"] for l in linhas if l["model"] == nome])) for nome in {l["model"] for l in linhas}
    }
    menor, maior = f"dt_{min(cfg.budgets.dt)}", f"dt_{max(cfg.budgets.dt)}"
    resumo = {
        "groups": _resumir(linhas, ("model",)),
        "medians": medianas,
        "tl_below_dt_small_budget": medianas["tl"] < medianas[menor],
        "tl_within_1_5x_dt_large_budget": medianas["tl"] <= 1.5 * medianas[maior],
        "worst_cases": [{k: v for k, v in caso.items() if k in ("sample_index", "seed", "worst_of")} for caso in piores],
        "generalization": {
            tipo: {
                nome: float(np.median([l["test_mse"] for l in generalizacao if l["field_kind"] == tipo and l["model"] == nome]))
                for nome in sorted({l["model"] for l in generalizacao if l["field_kind"] == tipo})
            }
            for tipo in cfg.generalization_fields
        },
    }
    return linhas, generalizacao, resumo


def _montar_fig3(pipeline: PipelineService, pasta: Path):
    cfg = pipeline.cfg
    gs = paineis(cfg)
    _preparar_datasets(pipeline, gs)
    for g in gs:
        for tipo in cfg.generalization_fields:
            pipeline.gerar_dataset("test", g, field_kind=tipo)

    linhas, generalizacao, por_painel = [], [], {}
    for g in gs:
        linhas_g, generalizacao_g, resumo = _painel_fig3(pipeline, g, pasta)
        linhas.extend(linhas_g)
        generalizacao.extend(generalizacao_g)
        por_painel[f"g={g:g}"] = resumo

    _csv_linhas(pasta / "fig3_seeds.csv", linhas)
    if generalizacao:
        _csv_linhas(pasta / "fig3_generalizacao.csv", generalizacao)
    return linhas, {"panels": por_painel}


def fig3(cfg: ExperimentConfig) -> Dict[str, Any]:
    return _executar(PipelineService(cfg), "fig3", _montar_fig3)


# ---------------------------------------------------------------------------
# Ablações

def _montar_ablacao_a(pipeline: PipelineService, pasta: Path):
    cfg = pipeline.cfg
    # fonte treinada só nos momentos de primeira ordem
    obs = ObservableSet.FIRST_ORDER
    t = cfg.training
    gs = paineis(cfg)
    if 0.0 not in gs:
        gs = [0.0] + gs
    linhas = []
    for g in gs:
        treino, teste = pipeline.dataset("train", g), pipeline.dataset("test", g)
        for seed in cfg.seeds:
            bruto = ablation_output_layer(
                obs, treino, teste, t.train_config(seed), min(cfg.budgets.source), cfg.budgets.tl, t.lstm_width, t.head_width
            )
            for variante in ("dense", "lstm"):
                linhas.append(
                    {
                        "g": g,
                        "seed": seed,
                        "output_layer": variante,
                        "source_mse": bruto[variante]["source_mse"],
                        "tl_mse": bruto[variante]["tl_mse"],
                    }
                )

    # referência: saída densa no caso integrável
    referencia = {
        chave: float(np.median([l[chave] for l in linhas if l["g"] == 0.0 and l["output_layer"] == "dense"]))
        for chave in ("source_mse", "tl_mse")
    }
    for linha in linhas:
        linha["source_normalized"] = linha["source_mse"] / referencia["source_mse"]
        linha["tl_normalized"] = linha["tl_mse"] / referencia["tl_mse"]

    _csv_linhas(pasta / "ablacao_a.csv", linhas)
    medianas = {
        f"g={g:g}/{v}": {
            c: float(np.median([l[c] for l in linhas if l["g"] == g and l["output_layer"] == v]))
            for c in ("source_normalized", "tl_normalized")
        }
        for g in gs
        for v in ("dense", "lstm")
    }
    return linhas, {"observable_set": obs.value, "reference": referencia, "medians": medianas}


def _montar_ablacao_b(pipeline: PipelineService, pasta: Path):
    cfg = pipeline.cfg
    obs = obs_principal(cfg)
    t = cfg.training
    budget_fonte = min(cfg.budgets.source)
    gs = paineis(cfg)
    linhas, series = [], {}
    for g in gs:
        treino, teste = pipeline.dataset("train", g), pipeline.dataset("test", g)
        for seed in cfg.seeds:
            fonte, _ = pipeline.source(obs, budget_fonte, seed, g)
            modelos = ablation_trainable_kind(fonte, treino, teste, t.train_config(seed), cfg.budgets.tl, t.head_width)
            for head, modelo in modelos.items():
                historico = modelo.history
                historico.to_csv(pasta / f"historico_{head}_{_sufixo(g)}_seed{seed}.csv")
                linhas.append(
                    {
                        "g": g,
                        "seed": seed,
                        "head": head,
                        "tl_mse": modelo.metrics["test_mse"],
                        "epochs": len(historico),
                        "best_epoch": historico.best_epoch,
                    }
                )
                if seed == cfg.seeds[0] and len(historico):
                    series[f"{head} g={g:g} (validação)"] = (historico.epochs, historico.val_loss)
    _csv_linhas(pasta / "ablacao_b.csv", linhas)
    if series:
        grafico_linhas(pasta / "ablacao_b.svg", series, "Histórico de treino do TL", "época", "loss")
    medianas = {
        f"g={g:g}/{head}": float(np.median([l["tl_mse"] for l in linhas if l["g"] == g and l["head"] == head]))
        for g in gs
        for head in ("dense", "lstm")
    }
    return linhas, {"source_budget": budget_fonte, "medians": medianas}


def _montar_ablacao_c(pipeline: PipelineService, pasta: Path):
    cfg = pipeline.cfg
    obs = obs_principal(cfg)
    t = cfg.training
    budget_fonte = min(cfg.budgets.source)
    treino, teste = pipeline.dataset("train"), pipeline.dataset("test")
    linhas = []
    for seed in cfg.seeds:
        fonte, _ = pipeline.source(obs, budget_fonte, seed)
        por_descarte = ablation_discard_layers(fonte, treino, teste, t.train_config(seed), cfg.budgets.tl, t.head_width)
        for k, mse in por_descarte.items():
            linhas.append({"seed": seed, "discarded_layers": k, "tl_mse": mse})
        dt, _ = pipeline.dt(cfg.budgets.tl, seed)
        linhas.append({"seed": seed, "discarded_layers": -1, "dt_mse": pipeline.avaliar(dt).overall_mse})
    _csv_linhas(pasta / "ablacao_c.csv", linhas)
    descartes = sorted({l["discarded_layers"] for l in linhas if l["discarded_layers"] >= 0})
    medianas = {
        str(k): float(np.median([l["tl_mse"] for l in linhas if l["discarded_layers"] == k])) for k in descartes
    }
    medianas["dt_reference"] = float(np.median([l["dt_mse"] for l in linhas if "dt_mse" in l]))
    return linhas, {"source_budget": budget_fonte, "medians": medianas}


def violacoes_monotonia(medianas: List[float], tolerancia: float = TOLERANCIA_MONOTONIA) -> Tuple[int, int]:
    """(quedas totais, quedas acima da tolerância relativa) entre tamanhos vizinhos"""
    quedas = [(a, b) for a, b in zip(medianas, medianas[1:]) if b < a]
    grandes = [(a, b) for a, b in quedas if (a - b) > tolerancia * a]
    return len(quedas), len(grandes)


def _montar_ablacao_d(pipeline: PipelineService, pasta: Path):
    cfg = pipeline.cfg
    t = cfg.training
    _preparar_datasets(pipeline, [cfg.physics.longitudinal], sweep=True)
    treino, teste = pipeline.dataset("train", sweep=True), pipeline.dataset("test", sweep=True)
    metade = cfg.physics.n_spins // 2
    linhas = []
    for seed in cfg.seeds:
        resultado = subsystem_sweep(treino, teste, t.train_config(seed), max(cfg.budgets.dt), t.lstm_width)
        for k in range(1, metade + 1):
            linhas.append(
                {"seed": seed, "subsystem_size": k, "dt_mse": resultado["per_size"][k], "joint_mse": resultado["joint_per_size"][k]}
            )
    _csv_linhas(pasta / "ablacao_d.csv", linhas)

    medianas = [float(np.median([l["dt_mse"] for l in linhas if l["subsystem_size"] == k])) for k in range(1, metade + 1)]
    conjunto = [float(np.median([l["joint_mse"] for l in linhas if l["subsystem_size"] == k])) for k in range(1, metade + 1)]
    tamanhos = list(range(1, metade + 1))
    grafico_linhas(
        pasta / "ablacao_d.svg",
        {"DT por tamanho": (tamanhos, medianas), "DT conjunto": (tamanhos, conjunto)},
        "MSE por tamanho de subsistema",
        "k",
        "MSE",
    )
    quedas, grandes = violacoes_monotonia(medianas)
    return linhas, {
        "dt_medians": medianas,
        "joint_medians": conjunto,
        "monotonic_violations": quedas,
        "monotonic_ok": quedas <= 1 and grandes == 0,
    }


MONTADORES = {"a": _montar_ablacao_a, "b": _montar_ablacao_b, "c": _montar_ablacao_c, "d": _montar_ablacao_d}


def appendix(cfg: ExperimentConfig, which: str) -> Dict[str, Any]:
    if which not in MONTADORES:
        return {"sucesso": False, "erro": f"Ablação desconhecida: {which} (opções: {', '.join(ABLACOES)})"}
    return _executar(PipelineService(cfg), f"appendix_{which}", MONTADORES[which])
