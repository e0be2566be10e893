"""
Fixtures compartilhadas dos testes
"""
import numpy as np
import pytest

from app.config import BudgetConfig, ExperimentConfig, PhysicsConfig, TrainingConfig
from app.services.campos import GpParams
from app.services.dataset import DatasetConfig, ObservableSet, generate_dataset
from app.services.quantum import HamiltonianParams, TimeGrid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grade_curta():
    return TimeGrid(t_final=1.0, n_steps=10)


@pytest.fixture(scope="session")
def config_dataset():
    return DatasetConfig(
        params=HamiltonianParams(4, 1.0, 0.0),
        grid=TimeGrid(t_final=2.0, n_steps=8),
        gp=GpParams(),
        obs=ObservableSet.COMBINED,
        entropy_sweep=True,
        substeps=2,
    )


@pytest.fixture(scope="session")
def arquivo_dataset(tmp_path_factory, config_dataset):
    caminho = tmp_path_factory.mktemp("dados") / "treino.qtld"
    generate_dataset(config_dataset, 12, base_seed=100, path=caminho)
    return caminho


@pytest.fixture(scope="session")
def dataset_pequeno(arquivo_dataset):
    from app.services.dataset import load_dataset

    return load_dataset(arquivo_dataset)


@pytest.fixture(scope="session")
def dataset_teste(tmp_path_factory, config_dataset):
    caminho = tmp_path_factory.mktemp("dados") / "teste.qtld"
    return generate_dataset(config_dataset, 6, base_seed=10_000, path=caminho)


@pytest.fixture
def config_experimento(tmp_path, monkeypatch):
    """Experimento mínimo: N=4, grade curta, redes estreitas e poucas épocas"""
    monkeypatch.delenv("QTL_OUTPUT_DIR", raising=False)
    monkeypatch.delenv("QTL_DATABASE_URL", raising=False)
    monkeypatch.delenv("QTL_WORKERS", raising=False)
    return ExperimentConfig(
        name="teste",
        physics=PhysicsConfig(n_spins=4, t_final=1.0, n_steps=5, substeps=2),
        observable_sets=[ObservableSet.FIRST_ORDER, ObservableSet.COMBINED],
        budgets=BudgetConfig(source=[8, 16], tl=8, dt=[8, 16], frontend=8, test=6),
        training=TrainingConfig(max_epochs=2, batch_size=4, patience=5, lstm_width=4, head_width=4),
        seeds=[0, 1],
        output_dir=str(tmp_path / "saida"),
    )
