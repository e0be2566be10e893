"""
Testes da configuração (ambiente e arquivo de experimento)
"""
import json

import pytest

from app.config import (
    Config,
    ExperimentConfig,
    PRESETS,
    load_config,
    parse_config,
    preset,
    save_config,
    verificar_output_dir,
)
from app.services.dataset import ObservableSet
from app.utils.erros import ConfigValidationError


def test_presets():
    completo = preset("full")
    assert completo.physics.n_spins == 8
    assert completo.budgets.source == [5000, 50000]
    assert completo.budgets.dt == [50000]
    assert completo.budgets.test == 1000
    desk = preset("desk")
    assert desk.physics.n_spins == 6
    assert desk.budgets.dt == [1000, 10000]
    assert desk.budgets.max_train == 10000
    with pytest.raises(ConfigValidationError):
        preset("laptop")


def test_preset_e_uma_copia():
    cfg = preset("desk")
    cfg.seeds.append(99)
    assert 99 not in PRESETS["desk"].seeds


def test_salvar_e_carregar(tmp_path):
    caminho = save_config(preset("desk"), tmp_path / "exp.json")
    assert load_config(caminho) == preset("desk")


def test_chave_desconhecida(tmp_path):
    dados = preset("desk").model_dump(mode="json")
    dados["physics"]["spins"] = 4
    with pytest.raises(ConfigValidationError) as info:
        parse_config(dados)
    assert any("physics.spins" in m for m in info.value.erros)


@pytest.mark.parametrize(
    "alteracao",
    [
        {"physics": {"n_spins": 5}},
        {"physics": {"n_spins": 2}},
        {"seeds": [1, 1]},
        {"budgets": {"source": []}},
        {"training": {"learning_rate": 0}},
        {"observable_sets": ["sigma", "tau"]},
        {"physics": {"panels": [0.0, 0.0]}},
        {"physics": {"panels": []}},
        {"generalization_fields": ["quench", "quench"]},
        {"generalization_fields": ["gaussian_process"]},
    ],
)
def test_valores_invalidos(alteracao):
    with pytest.raises(ConfigValidationError):
        parse_config(alteracao)


def test_dois_spins_so_com_primeira_ordem():
    cfg = parse_config({"physics": {"n_spins": 2}, "observable_sets": ["sigma"]})
    assert cfg.dataset_config().obs is ObservableSet.FIRST_ORDER


def test_arquivo_inexistente_ou_invalido(tmp_path):
    with pytest.raises(ConfigValidationError):
        load_config(tmp_path / "nada.json")
    ruim = tmp_path / "ruim.json"
    ruim.write_text("{ nao e json")
    with pytest.raises(ConfigValidationError):
        load_config(ruim)


def test_conversoes():
    cfg = ExperimentConfig()
    assert cfg.hamiltonian_params(0.5).longitudinal == 0.5
    assert cfg.time_grid().n_steps == 100
    assert cfg.dataset_config().obs is ObservableSet.COMBINED
    assert cfg.dataset_config(field_kind="periodic").field_kind == "periodic"
    assert cfg.physics.panels == [0.0, 0.5]
    assert cfg.generalization_fields == ["quench", "periodic"]
    treino = cfg.training.train_config(seed=3)
    assert treino.seed == 3
    assert treino.max_epochs == 500


def test_variaveis_de_ambiente(monkeypatch, tmp_path):
    monkeypatch.setenv("QTL_OUTPUT_DIR", str(tmp_path / "env"))
    monkeypatch.setenv("QTL_WORKERS", "3")
    monkeypatch.delenv("QTL_DATABASE_URL", raising=False)
    assert Config.resolver_output_dir("resultados") == tmp_path / "env"
    assert Config.resolver_workers(1) == 3
    assert Config.database_url(tmp_path) == f"sqlite:///{tmp_path / 'registro.db'}"
    monkeypatch.setenv("QTL_DATABASE_URL", "sqlite:///:memory:")
    assert Config.database_url(tmp_path) == "sqlite:///:memory:"


def test_validar_config(monkeypatch):
    monkeypatch.setattr(Config, "WORKERS", 0)
    monkeypatch.setattr(Config, "LOG_LEVEL", "VERBOSE")
    with pytest.raises(ConfigValidationError) as info:
        Config.validar_config()
    assert len(info.value.erros) == 2


def test_output_dir_em_arquivo(tmp_path):
    arquivo = tmp_path / "arquivo"
    arquivo.write_text("x")
    with pytest.raises(ConfigValidationError):
        verificar_output_dir(arquivo / "sub")
    assert verificar_output_dir(tmp_path / "novo").is_dir()


def test_json_gravado_ordenado(tmp_path):
    caminho = save_config(preset("full"), tmp_path / "p.json")
    dados = json.loads(caminho.read_text())
    assert list(dados) == sorted(dados)
