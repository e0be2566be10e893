"""
Testes dos papéis de modelo, avaliação e ablações
"""
import numpy as np
import pytest

from app.services.dataset import DatasetConfig, ObservableSet, generate_dataset
from app.services.modelos import (
    EvalReport,
    Role,
    RoleModel,
    ablation_discard_layers,
    ablation_output_layer,
    ablation_trainable_kind,
    bootstrap_variance,
    build_dt,
    build_frontend,
    build_source,
    build_tl,
    check_conformance,
    dt_spec,
    evaluate,
    frontend_spec,
    load_role_model,
    save_role_model,
    source_spec,
    subsystem_sweep,
    summarize_seeds,
    train_dt,
    train_frontend,
    train_source,
    train_tl,
    worst_case_union,
)
from app.services.quantum import HamiltonianParams, TimeGrid
from app.services import modelos as servico_modelos
from app.services.rede import Activation, LayerKind, LayerSpec, ModelSpec, Network, TrainConfig, gradient_check
from app.utils.erros import DomainError, FrozenParameterError

CONFIG = TrainConfig(max_epochs=2, batch_size=4, patience=5)


@pytest.fixture(scope="module")
def fonte(dataset_pequeno, dataset_teste):
    return train_source(ObservableSet.FIRST_ORDER, dataset_pequeno, CONFIG, budget=8, lstm_width=4, test=dataset_teste)


def _camadas(spec):
    return [(c.kind.value, c.units, c.frozen) for c in spec.layers]


class TestArquiteturas:
    def test_fonte_por_conjunto(self):
        assert _camadas(source_spec(ObservableSet.FIRST_ORDER)) == [
            ("lstm", 100, False), ("lstm", 100, False), ("dense", 3, False)
        ]
        assert _camadas(source_spec(ObservableSet.TWO_POINT)) == [
            ("lstm", 500, False), ("lstm", 500, False), ("dense", 27, False)
        ]
        assert _camadas(source_spec(ObservableSet.COMBINED)) == [("lstm", 500, False)] * 4 + [("dense", 30, False)]
        assert source_spec(ObservableSet.COMBINED).input_dim == 4

    def test_saida_lstm_com_mesma_largura(self):
        spec = source_spec(ObservableSet.FIRST_ORDER, output_layer="lstm")
        assert spec.layers[-1].kind is LayerKind.LSTM
        assert spec.output_dim == 3
        with pytest.raises(DomainError):
            source_spec(ObservableSet.FIRST_ORDER, output_layer="gru")

    def test_dt_e_frontend(self):
        assert _camadas(dt_spec()) == [("lstm", 100, False), ("lstm", 100, False), ("dense", 1, False)]
        spec = frontend_spec(ObservableSet.COMBINED)
        assert spec.input_dim == 30
        assert _camadas(spec) == [("dense", 100, False), ("dense", 1, False)]
        assert spec.layers[0].activation is Activation.SIGMOID
        assert spec.layers[1].activation is Activation.LINEAR

    def test_larguras_configuraveis(self):
        assert build_dt(lstm_width=7).network.spec.layers[0].units == 7
        assert build_frontend(ObservableSet.FIRST_ORDER, head_width=5).network.spec.layers[0].units == 5


class TestTransferencia:
    def test_pilha_congelada_copiada(self, fonte):
        tl = build_tl(fonte, head_width=3)
        assert tl.role is Role.TL
        assert tl.source_hash == fonte.content_hash
        assert _camadas(tl.network.spec) == [("lstm", 4, True), ("lstm", 4, True), ("dense", 3, False), ("dense", 1, False)]
        for copia, original in zip(tl.network.layers[:2], fonte.network.layers[:2]):
            for a, b in zip(copia.arrays(), original.arrays()):
                assert np.array_equal(a, b)
                assert a is not b
        assert tl.network.input_normalization_fixed
        check_conformance(tl)

    def test_descartar_camadas(self, fonte):
        tl = build_tl(fonte, discard_last_k=1, head_width=3)
        assert tl.network.frozen_prefix() == 1
        with pytest.raises(DomainError):
            build_tl(fonte, discard_last_k=2)

    def test_cabeca_lstm(self, fonte):
        tl = build_tl(fonte, head="lstm", head_width=3)
        assert tl.network.spec.layers[2].kind is LayerKind.LSTM
        check_conformance(tl)

    def test_exige_fonte(self):
        with pytest.raises(DomainError):
            build_tl(build_dt(lstm_width=3))

    def test_treino_tl_nao_altera_pilha(self, fonte, dataset_pequeno, dataset_teste):
        tl = build_tl(fonte, head_width=3)
        treinado = train_tl(tl, dataset_pequeno, CONFIG, budget=8, test=dataset_teste)
        for a, b in zip(treinado.network.layers[0].arrays(), fonte.network.layers[0].arrays()):
            assert np.array_equal(a, b)
        np.testing.assert_array_equal(
            treinado.network.normalization.input_mean, fonte.network.normalization.input_mean
        )
        assert treinado.sample_budget == 8
        assert "test_mse" in treinado.metrics


class TestConformidade:
    def test_modelos_construidos(self):
        for modelo in (build_source(ObservableSet.FIRST_ORDER, lstm_width=3), build_dt(lstm_width=3), build_frontend(ObservableSet.FIRST_ORDER, head_width=3)):
            assert check_conformance(modelo)

    def test_arquitetura_alterada(self):
        spec = ModelSpec((LayerSpec("lstm", 3), LayerSpec("dense", 1)), input_dim=4)
        modelo = RoleModel(Role.DT, Network.initialize(spec, 0))
        modelo.network.metadata["lstm_width"] = 3
        with pytest.raises(DomainError):
            check_conformance(modelo)


class TestTreinoEAvaliacao:
    def test_fonte(self, fonte, dataset_teste):
        assert fonte.sample_budget == 8
        assert len(fonte.history) <= 2
        relatorio = evaluate(fonte, dataset_teste)
        assert relatorio.predictions.shape == (6, 9, 3)
        assert relatorio.overall_mse == pytest.approx(fonte.metrics["test_mse"])
        assert np.mean(relatorio.per_timestep_mse) == pytest.approx(relatorio.overall_mse)
        assert np.mean(relatorio.per_sample_mse) == pytest.approx(relatorio.overall_mse)

    def test_fonte_exige_conjunto_presente(self, tmp_path):
        config = DatasetConfig(HamiltonianParams(4), TimeGrid(1.0, 3), obs=ObservableSet.FIRST_ORDER, substeps=1)
        dados = generate_dataset(config, 2, base_seed=0, path=tmp_path / "sigma.qtld")
        with pytest.raises(DomainError):
            train_source(ObservableSet.TWO_POINT, dados, CONFIG, lstm_width=3)

    def test_dt_por_tamanho(self, dataset_pequeno, dataset_teste):
        modelo = train_dt(build_dt(lstm_width=3, entropy_size=1), dataset_pequeno, CONFIG, budget=6)
        relatorio = evaluate(modelo, dataset_teste)
        assert relatorio.targets.shape == (6, 9, 1)
        np.testing.assert_array_equal(relatorio.targets[..., 0], dataset_teste.entropy_sweep[..., 0])
        assert relatorio.worst_seed in dataset_teste.seeds.tolist()
        assert relatorio.per_sample_mse[relatorio.worst_index] == relatorio.per_sample_mse.max()

    def test_frontend(self, dataset_pequeno, dataset_teste):
        modelo = train_frontend(build_frontend(ObservableSet.COMBINED, head_width=3), dataset_pequeno, CONFIG)
        assert modelo.sample_budget == 12
        relatorio = evaluate(modelo, dataset_teste)
        np.testing.assert_array_equal(relatorio.targets[..., 0], dataset_teste.entropy)
        dados = relatorio.to_dict()
        assert dados["role"] == "frontend"
        assert dados["n_samples"] == 6
        assert len(dados["per_timestep_mse"]) == 9

    def test_papel_errado(self, dataset_pequeno):
        with pytest.raises(DomainError):
            train_tl(build_dt(lstm_width=3), dataset_pequeno, CONFIG)

    def test_salvar_e_carregar(self, tmp_path, fonte, dataset_teste):
        caminho = save_role_model(fonte, tmp_path / "fonte.qtlm")
        lido = load_role_model(caminho)
        assert lido.role is Role.SOURCE
        assert lido.observable_set is ObservableSet.FIRST_ORDER
        assert lido.sample_budget == 8
        assert lido.metrics["test_mse"] == pytest.approx(fonte.metrics["test_mse"])
        check_conformance(lido)
        assert evaluate(lido, dataset_teste).overall_mse == evaluate(fonte, dataset_teste).overall_mse


class TestResumo:
    def test_bootstrap(self):
        assert bootstrap_variance(np.full(10, 0.3)) == pytest.approx(0.0)
        valores = np.arange(20, dtype=float)
        assert bootstrap_variance(valores, seed=1) == bootstrap_variance(valores, seed=1)
        assert bootstrap_variance(valores) > 0

    def test_seeds(self):
        resumo = summarize_seeds([1.0, 3.0, 2.0])
        assert resumo["median"] == 2.0
        assert resumo["variance"] == pytest.approx(2.0 / 3.0)
        with pytest.raises(DomainError):
            summarize_seeds([])

    def _relatorio(self, pior, seeds=(10, 11, 12)):
        preds = np.zeros((3, 2, 1))
        return EvalReport(
            role=Role.TL, observable_set=None, sample_budget=1, overall_mse=0.0,
            per_timestep_mse=np.zeros(2), per_sample_mse=np.zeros(3), worst_index=pior,
            worst_seed=seeds[pior], predictions=preds + pior, targets=np.ones((3, 2, 1)),
            seeds=np.array(seeds), times=np.array([0.0, 1.0]),
        )

    def test_uniao_dos_piores_casos(self):
        linhas = worst_case_union({"tl": self._relatorio(2), "dt": self._relatorio(0), "outro": self._relatorio(2)})
        assert [l["seed"] for l in linhas] == [10, 12]
        assert linhas[1]["worst_of"] == ["tl", "outro"]
        assert linhas[0]["tl"] == [2.0, 2.0]
        assert linhas[0]["true"] == [1.0, 1.0]

    def test_uniao_exige_mesmo_teste(self):
        with pytest.raises(DomainError):
            worst_case_union({"a": self._relatorio(0), "b": self._relatorio(0, seeds=(1, 2, 3))})


@pytest.mark.lento
class TestAblacoes:
    def test_descartar(self, fonte, dataset_pequeno, dataset_teste):
        resultado = ablation_discard_layers(fonte, dataset_pequeno, dataset_teste, CONFIG, budget=8, head_width=3)
        assert sorted(resultado) == [0, 1]
        assert all(v >= 0 for v in resultado.values())

    def test_tipo_da_cabeca(self, fonte, dataset_pequeno, dataset_teste):
        modelos = ablation_trainable_kind(fonte, dataset_pequeno, dataset_teste, CONFIG, budget=8, head_width=3)
        assert set(modelos) == {"dense", "lstm"}
        assert modelos["lstm"].network.spec.layers[2].kind is LayerKind.LSTM
        assert len(modelos["dense"].history) > 0

    def test_camada_de_saida(self, dataset_pequeno, dataset_teste):
        resultado = ablation_output_layer(
            ObservableSet.FIRST_ORDER, dataset_pequeno, dataset_teste, CONFIG, budget=8, tl_budget=8, lstm_width=3, head_width=3
        )
        assert resultado["normalized"]["dense"] == {"source_mse": 1.0, "tl_mse": 1.0}
        assert resultado["lstm"]["source_mse"] > 0

    def test_varredura_de_subsistemas(self, dataset_pequeno, dataset_teste):
        resultado = subsystem_sweep(dataset_pequeno, dataset_teste, CONFIG, budget=8, lstm_width=3)
        assert sorted(resultado["per_size"]) == [1, 2]
        assert sorted(resultado["joint_per_size"]) == [1, 2]
        media = np.mean(list(resultado["joint_per_size"].values()))
        assert resultado["joint_overall"] == pytest.approx(media)


def _tl(obs, discard_last_k, head):
    return build_tl(build_source(obs, seed=1, lstm_width=3), discard_last_k, head, seed=2, head_width=3)


TOPOLOGIAS = {
    "fonte_sigma_densa": lambda: build_source(ObservableSet.FIRST_ORDER, seed=1, lstm_width=3),
    "fonte_sigmasigma_densa": lambda: build_source(ObservableSet.TWO_POINT, seed=1, lstm_width=3),
    "fonte_combinada_densa": lambda: build_source(ObservableSet.COMBINED, seed=1, lstm_width=3),
    "fonte_sigma_lstm": lambda: build_source(ObservableSet.FIRST_ORDER, seed=1, lstm_width=3, output_layer="lstm"),
    "fonte_combinada_lstm": lambda: build_source(ObservableSet.COMBINED, seed=1, lstm_width=3, output_layer="lstm"),
    "tl_densa": lambda: _tl(ObservableSet.FIRST_ORDER, 0, "dense"),
    "tl_lstm": lambda: _tl(ObservableSet.FIRST_ORDER, 0, "lstm"),
    "tl_densa_descarte_1": lambda: _tl(ObservableSet.FIRST_ORDER, 1, "dense"),
    "tl_lstm_descarte_2": lambda: _tl(ObservableSet.COMBINED, 2, "lstm"),
    "dt": lambda: build_dt(seed=1, lstm_width=3),
    "dt_conjunto": lambda: build_dt(seed=1, lstm_width=3, output_dim=2),
    "frontend_sigma": lambda: build_frontend(ObservableSet.FIRST_ORDER, seed=1, head_width=3),
    "frontend_combinado": lambda: build_frontend(ObservableSet.COMBINED, seed=1, head_width=3),
}


@pytest.mark.parametrize("nome", sorted(TOPOLOGIAS))
def test_gradiente_por_topologia(nome):
    rede = TOPOLOGIAS[nome]().network
    rng = np.random.default_rng(7)
    spec = rede.spec
    x = rng.normal(size=(2, 5, spec.input_dim))
    y = rng.uniform(size=(2, 5, spec.output_dim))
    antes = rede.snapshot()
    assert gradient_check(rede, x, y) < 1e-4
    for camada, salvos in zip(rede.layers, antes):
        for atual, salvo in zip(camada.arrays(), salvos):
            np.testing.assert_array_equal(atual, salvo)


def test_pilha_alterada_no_treino_e_erro(monkeypatch, fonte, dataset_pequeno):
    treino_original = servico_modelos.train

    def treino_que_corrompe(rede, x, y, config):
        treinada, historico = treino_original(rede, x, y, config)
        treinada.layers[0].w_x[0, 0] += 1.0
        return treinada, historico

    monkeypatch.setattr(servico_modelos, "train", treino_que_corrompe)
    with pytest.raises(FrozenParameterError) as erro:
        train_tl(build_tl(fonte, head_width=3), dataset_pequeno, CONFIG, budget=8)
    assert erro.value.layer == 0
