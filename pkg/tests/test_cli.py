"""
Testes da CLI: códigos de saída, cache entre execuções e arquivos gerados
"""
import json
from pathlib import Path

import pytest

from app.config import save_config
from app.handlers import comandos
from app.main import main


@pytest.fixture
def arquivo_config(tmp_path, config_experimento):
    return str(save_config(config_experimento, tmp_path / "exp.json"))


def _executar(capsys, argv):
    codigo = main(argv)
    saida = json.loads(capsys.readouterr().out)
    assert saida["codigo"] == codigo
    return codigo, saida


def test_init_config(tmp_path, capsys):
    destino = tmp_path / "desk.json"
    codigo, saida = _executar(capsys, ["init-config", "--preset", "desk", "--output", str(destino)])
    assert codigo == comandos.EXIT_OK
    assert json.loads(destino.read_text())["physics"]["n_spins"] == 6


def test_erro_de_uso():
    with pytest.raises(SystemExit) as info:
        main(["train", "--role", "source"])
    assert info.value.code == comandos.EXIT_USO
    with pytest.raises(SystemExit) as info:
        main(["experiment", "fig9", "--config", "x.json"])
    assert info.value.code == comandos.EXIT_USO


def test_appendix_sem_which(capsys, arquivo_config):
    codigo, _ = _executar(capsys, ["experiment", "appendix", "--config", arquivo_config])
    assert codigo == comandos.EXIT_USO


def test_config_invalida(tmp_path, capsys):
    caminho = tmp_path / "ruim.json"
    caminho.write_text(json.dumps({"physics": {"n_spins": 3}}))
    codigo, saida = _executar(capsys, ["generate-data", "--config", str(caminho)])
    assert codigo == comandos.EXIT_VALIDACAO
    assert not saida["sucesso"]
    assert any("n_spins" in d for d in saida["detalhes"])


def test_dataset_inexistente(tmp_path, capsys):
    codigo, _ = _executar(capsys, ["export-csv", "--dataset", str(tmp_path / "nada.qtld"), "--output", str(tmp_path / "x.csv")])
    assert codigo == comandos.EXIT_VALIDACAO


def test_dataset_corrompido(tmp_path, capsys):
    caminho = tmp_path / "ruim.qtld"
    caminho.write_bytes(b"QTLDSET\0" + b"\xff" * 8)
    codigo, _ = _executar(capsys, ["export-csv", "--dataset", str(caminho), "--output", str(tmp_path / "x.csv")])
    assert codigo == comandos.EXIT_VALIDACAO


@pytest.mark.lento
def test_fluxo_completo(tmp_path, capsys, arquivo_config):
    codigo, saida = _executar(capsys, ["generate-data", "--config", arquivo_config])
    assert codigo == comandos.EXIT_OK
    assert saida["cache_hits"] == [False, False]
    treino = saida["arquivos"][0]
    _, saida = _executar(capsys, ["generate-data", "--config", arquivo_config, "--split", "train"])
    assert saida["cache_hits"] == [True]

    codigo, saida = _executar(capsys, ["export-csv", "--dataset", treino, "--output", str(tmp_path / "treino.csv")])
    assert codigo == comandos.EXIT_OK
    assert saida["amostras"] == 16

    codigo, saida = _executar(capsys, ["train", "--config", arquivo_config, "--role", "tl", "--obs", "sigma"])
    assert codigo == comandos.EXIT_OK
    assert saida["papel"] == "tl"
    assert saida["orcamento"] == 8
    modelo = saida["modelo"]
    assert Path(modelo).exists()

    codigo, saida = _executar(capsys, ["evaluate", "--config", arquivo_config, "--model", modelo])
    assert codigo == comandos.EXIT_OK
    relatorio = json.loads(Path(saida["relatorio"]).read_text())
    assert relatorio["role"] == "tl"
    assert relatorio["n_samples"] == 6
    pasta = Path(saida["relatorio"]).parent
    assert (pasta / "mse_por_passo.csv").exists()
    assert (pasta / "pior_caso.csv").exists()

    codigo, saida = _executar(capsys, ["stats", "--config", arquivo_config])
    assert codigo == comandos.EXIT_OK
    # train, test, fonte e TL
    assert saida["artefatos"] == {"dataset": 2, "modelo": 2}


@pytest.mark.lento
def test_experimento_idempotente(tmp_path, capsys, arquivo_config):
    codigo, saida = _executar(capsys, ["experiment", "fig2", "--config", arquivo_config])
    assert codigo == comandos.EXIT_OK
    assert not saida["cache_hit"]
    relatorio = Path(saida["relatorio"])
    conteudo = relatorio.read_text()
    pasta = relatorio.with_suffix("")
    for nome in ("fig2_pares_g0.csv", "fig2_pares_g0.5.csv", "fig2_seeds.csv", "fig2_g0.svg", "fig2_g0.5.svg"):
        assert (pasta / nome).exists()
    resumo = saida["resumo"]
    assert set(resumo["panels"]) == {"g=0", "g=0.5"}
    assert set(resumo["frontend_ratio"]) == {"sigma", "sigma_sigmasigma"}
    assert all(r >= 1.0 for r in resumo["frontend_ratio"].values())
    assert isinstance(resumo["frontend_within_2x"], bool)

    codigo, saida2 = _executar(capsys, ["experiment", "fig2", "--config", arquivo_config])
    assert codigo == comandos.EXIT_OK
    assert saida2["cache_hit"]
    assert saida2["resumo"] == saida["resumo"]
    assert relatorio.read_text() == conteudo
