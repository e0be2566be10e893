"""
Testes do motor de redes: gradientes, Adam, treino, normalização e artefato
"""
import numpy as np
import pytest

from app.services.rede import (
    AdamState,
    DenseLayerParams,
    LayerKind,
    LayerSpec,
    ModelSpec,
    Network,
    Normalization,
    TrainConfig,
    TrainingHistory,
    adam_step,
    gradient_check,
    load_network,
    lstm_forward,
    init_lstm,
    network_bytes,
    network_hash,
    save_network,
    train,
)
from app.utils.erros import ChecksumError, DatasetFormatError, DomainError, ShapeError, TrainingDivergenceError


def _spec_densa(entrada=2, saida=1):
    return ModelSpec((LayerSpec("dense", saida, "linear"),), input_dim=entrada)


def _spec_lstm(congelada=False, largura=8, saida=2):
    return ModelSpec(
        (LayerSpec("lstm", largura, frozen=congelada), LayerSpec("dense", saida, "sigmoid")),
        input_dim=3,
    )


class TestSpec:
    def test_dimensoes(self):
        spec = ModelSpec((LayerSpec("lstm", 5), LayerSpec("lstm", 7), LayerSpec("dense", 2)), input_dim=4)
        assert spec.layer_input_dims() == [4, 5, 7]
        assert spec.output_dim == 2
        assert spec.layers[0].kind is LayerKind.LSTM

    def test_dict_ida_e_volta(self):
        spec = _spec_lstm(congelada=True)
        assert ModelSpec.from_dict(spec.as_dict()) == spec

    def test_spec_vazia_ou_invalida(self):
        with pytest.raises(DomainError):
            ModelSpec((), input_dim=2)
        with pytest.raises(DomainError):
            LayerSpec("dense", 0)

    def test_rede_confere_com_spec(self):
        rede = Network.initialize(_spec_lstm(), seed=0)
        assert rede.n_parameters == (3 * 32 + 8 * 32 + 32) + (8 * 2 + 2)
        with pytest.raises(ShapeError):
            Network(_spec_densa(), [DenseLayerParams(np.zeros((3, 1)), np.zeros(1))])

    def test_inicializacao(self):
        camada = init_lstm(4, 6, np.random.default_rng(0))
        assert np.all(np.abs(camada.w_x) <= 0.5)
        np.testing.assert_array_equal(camada.b[6:12], 1.0)
        np.testing.assert_array_equal(camada.b[:6], 0.0)


class TestForward:
    def test_formas_lstm(self, rng):
        camada = init_lstm(3, 5, rng)
        h, cache = lstm_forward(camada, rng.normal(size=(2, 7, 3)))
        assert h.shape == (2, 7, 5)
        assert np.all(np.abs(h) < 1.0)

    def test_causalidade(self, rng):
        rede = Network.initialize(_spec_lstm(), seed=1)
        x = rng.normal(size=(1, 6, 3))
        y1, _ = rede.forward(x)
        x2 = x.copy()
        x2[0, 4:] += 1.0
        y2, _ = rede.forward(x2)
        np.testing.assert_array_equal(y1[0, :4], y2[0, :4])
        assert not np.allclose(y1[0, 4:], y2[0, 4:])

    def test_entrada_com_forma_errada(self, rng):
        with pytest.raises(ShapeError):
            lstm_forward(init_lstm(3, 5, rng), np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            Network.initialize(_spec_lstm(), 0).predict(np.zeros((2, 4, 5)))


class TestGradiente:
    def test_densa_linear(self, rng):
        rede = Network.initialize(_spec_densa(), seed=0)
        rede.layers[0].w[...] = 0.5
        x = rng.uniform(1.0, 2.0, size=(2, 3, 2))
        assert gradient_check(rede, x, np.zeros((2, 3, 1))) < 1e-6

    def test_lstm_mais_densa(self, rng):
        rede = Network.initialize(_spec_lstm(largura=4), seed=3)
        x = rng.normal(size=(2, 5, 3))
        y = rng.uniform(size=(2, 5, 2))
        assert gradient_check(rede, x, y) < 1e-4

    def test_duas_lstm_com_a_primeira_congelada(self, rng):
        spec = ModelSpec(
            (LayerSpec("lstm", 3, frozen=True), LayerSpec("lstm", 3), LayerSpec("dense", 1)), input_dim=2
        )
        rede = Network.initialize(spec, seed=5)
        x = rng.normal(size=(2, 4, 2))
        assert gradient_check(rede, x, rng.normal(size=(2, 4, 1))) < 1e-4


class TestAdam:
    def test_primeiro_passo(self):
        rede = Network.initialize(_spec_densa(1, 1), seed=0)
        rede.layers[0].w[...] = 0.0
        estado = AdamState.for_network(rede)
        grads = [[np.ones((1, 1)), np.ones(1)]]
        adam_step(rede.layers, grads, estado, TrainConfig(learning_rate=0.1))
        assert rede.layers[0].w[0, 0] == pytest.approx(-0.1, rel=1e-6)
        assert rede.layers[0].b[0] == pytest.approx(-0.1, rel=1e-6)
        assert estado.t == 1

    def test_camada_congelada_nao_muda(self):
        spec = ModelSpec((LayerSpec("dense", 2, frozen=True), LayerSpec("dense", 1)), input_dim=2)
        rede = Network.initialize(spec, seed=0)
        antes = rede.snapshot()
        grads = [[np.ones((2, 2)), np.ones(2)], [np.ones((2, 1)), np.ones(1)]]
        adam_step(rede.layers, grads, AdamState.for_network(rede), TrainConfig())
        np.testing.assert_array_equal(rede.layers[0].w, antes[0][0])
        assert not np.array_equal(rede.layers[1].w, antes[1][0])


class TestTreino:
    def _tarefa_linear(self, rng, n=64):
        x = rng.normal(size=(n, 5, 2))
        y = x @ np.array([[1.5], [-0.7]]) + 0.3
        return x, y

    def test_aprende_tarefa_linear(self, rng):
        x, y = self._tarefa_linear(rng)
        config = TrainConfig(learning_rate=1e-2, batch_size=8, max_epochs=200, patience=200)
        rede, historico = train(_spec_densa(), x, y, config)
        assert len(historico) <= 200
        assert min(historico.val_loss) < 1e-6
        assert historico.val_loss[historico.best_epoch - 1] == min(historico.val_loss)
        assert np.mean((rede.predict(x) - y) ** 2) < 1e-5

    def test_deterministico(self, rng):
        x, y = self._tarefa_linear(rng, 20)
        config = TrainConfig(max_epochs=3, batch_size=8, seed=4)
        a, _ = train(_spec_densa(), x, y, config)
        b, _ = train(_spec_densa(), x, y, config)
        assert network_bytes(a) == network_bytes(b)

    def test_modelo_original_intacto(self, rng):
        x, y = self._tarefa_linear(rng, 20)
        rede = Network.initialize(_spec_densa(), seed=0)
        antes = network_bytes(rede)
        train(rede, x, y, TrainConfig(max_epochs=2))
        assert network_bytes(rede) == antes

    def test_zero_epocas(self, rng):
        x, y = self._tarefa_linear(rng, 20)
        rede, historico = train(_spec_densa(), x, y, TrainConfig(max_epochs=0))
        assert len(historico) == 0
        assert rede.normalization is not None

    def test_prefixo_congelado_nao_muda(self, rng):
        rede = Network.initialize(_spec_lstm(congelada=True, largura=4), seed=2)
        x = rng.normal(size=(12, 4, 3))
        y = rng.uniform(size=(12, 4, 2))
        treinada, _ = train(rede, x, y, TrainConfig(max_epochs=3, batch_size=4))
        for a, b in zip(treinada.layers[0].arrays(), rede.layers[0].arrays()):
            assert np.array_equal(a, b)
        assert not np.array_equal(treinada.layers[1].w, rede.layers[1].w)

    def test_normalizacao_de_entrada_herdada(self, rng):
        x, y = self._tarefa_linear(rng, 20)
        rede = Network.initialize(_spec_densa(), seed=0)
        rede.normalization = Normalization(np.array([5.0, 5.0]), np.array([2.0, 2.0]), np.zeros(1), np.ones(1))
        rede.input_normalization_fixed = True
        treinada, _ = train(rede, x, y, TrainConfig(max_epochs=1))
        np.testing.assert_array_equal(treinada.normalization.input_mean, [5.0, 5.0])
        assert treinada.normalization.target_mean[0] != 0.0

    def test_early_stopping(self, rng):
        # alvo sem relação com a entrada: a validação não melhora por muito tempo
        x = rng.normal(size=(40, 5, 2))
        y = rng.normal(size=(40, 5, 1))
        config = TrainConfig(learning_rate=10.0, batch_size=8, max_epochs=200, patience=1)
        _, historico = train(_spec_densa(), x, y, config)
        assert historico.stopped_early
        assert len(historico) < 200
        assert len(historico) - historico.best_epoch == 1

    def test_divergencia(self, rng):
        x, _ = self._tarefa_linear(rng, 10)
        y = np.full((10, 5, 1), np.nan)
        with pytest.raises(TrainingDivergenceError) as info:
            train(_spec_densa(), x, y, TrainConfig(max_epochs=2))
        assert info.value.epoch == 1
        assert info.value.batch == 0

    def test_formas_incompativeis(self, rng):
        with pytest.raises(ShapeError):
            train(_spec_densa(), rng.normal(size=(4, 3, 5)), np.zeros((4, 3, 1)), TrainConfig())

    def test_sem_camadas_treinaveis(self, rng):
        spec = ModelSpec((LayerSpec("dense", 1, frozen=True),), input_dim=2)
        with pytest.raises(DomainError):
            train(spec, rng.normal(size=(4, 3, 2)), np.zeros((4, 3, 1)), TrainConfig(max_epochs=1))

    def test_config_invalida(self):
        with pytest.raises(DomainError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(DomainError):
            TrainConfig(validation_fraction=1.0)


def test_normalizacao_com_desvio_nulo():
    x = np.ones((4, 3, 2))
    x[..., 1] = np.arange(3)
    norm = Normalization.fit(x, np.zeros((4, 3, 1)))
    np.testing.assert_array_equal(norm.input_std[0], 1.0)
    np.testing.assert_array_equal(norm.target_std, 1.0)
    np.testing.assert_allclose(norm.normalize_inputs(x)[..., 0], 0.0)


def test_historico_em_csv(tmp_path):
    historico = TrainingHistory()
    for epoca, (tr, val) in enumerate([(1.0, 0.9), (0.5, 0.4), (0.3, 0.45)], start=1):
        historico.append(epoca, tr, val)
    historico.to_csv(tmp_path / "h.csv")
    lido = TrainingHistory.from_csv(tmp_path / "h.csv")
    assert lido.epochs == [1, 2, 3]
    assert lido.val_loss == [0.9, 0.4, 0.45]
    assert lido.best_epoch == 2
    TrainingHistory().to_csv(tmp_path / "vazio.csv")
    assert len(TrainingHistory.from_csv(tmp_path / "vazio.csv")) == 0


class TestArtefato:
    def test_salvar_e_carregar(self, tmp_path, rng):
        x = rng.normal(size=(10, 4, 3))
        rede, _ = train(_spec_lstm(largura=4), x, rng.uniform(size=(10, 4, 2)), TrainConfig(max_epochs=1))
        rede.metadata["role"] = "source"
        caminho = save_network(rede, tmp_path / "m.qtlm")
        lida = load_network(caminho)
        assert network_hash(lida) == network_hash(rede)
        assert lida.metadata == {"role": "source"}
        np.testing.assert_array_equal(lida.predict(x), rede.predict(x))

    def test_corrompido(self, tmp_path):
        caminho = save_network(Network.initialize(_spec_densa(), 0), tmp_path / "m.qtlm")
        dados = bytearray(caminho.read_bytes())
        dados[-1] ^= 0x01
        caminho.write_bytes(bytes(dados))
        with pytest.raises(ChecksumError):
            load_network(caminho)

    def test_nao_e_modelo(self, tmp_path):
        caminho = tmp_path / "x.qtlm"
        caminho.write_bytes(b"QTLDSET\0" + b"\0" * 16)
        with pytest.raises(DatasetFormatError):
            load_network(caminho)
