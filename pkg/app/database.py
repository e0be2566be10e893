"""
Configuração do banco do registro de artefatos
Gerencia conexão e sessões usando SQLAlchemy (SQLite por padrão)
"""
from pathlib import Path
from typing import Any, Dict, Iterator

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

# Base declarativa para os models
Base = declarative_base()

# segundos de espera pelo lock do SQLite quando workers gravam ao mesmo tempo
TIMEOUT_SQLITE = 30


def connect_args(url: str) -> Dict[str, Any]:
    """Argumentos do driver; no SQLite, espera pelo lock em vez de falhar com database is locked"""
    if url.startswith("sqlite:"):
        return {"timeout": TIMEOUT_SQLITE}
    return {}


def criar_engine(url: str) -> Engine:
    """Cria a engine; para SQLite em arquivo garante o diretório"""
    if url.startswith("sqlite:///") and url != "sqlite:///:memory:":
        Path(url[len("sqlite:///"):]).parent.mkdir(parents=True, exist_ok=True)
    return create_engine(
        url,
        connect_args=connect_args(url),
        pool_pre_ping=True,  # Verifica conexão antes de usar
        echo=False,  # Mudar para True para debug SQL
    )


def init_db(engine: Engine):
    """
    Inicializa o banco de dados criando todas as tabelas
    Importa os models e cria as tabelas se não existirem
    """
    from . import models  # noqa: F401

    Base.metadata.create_all(bind=engine)


def criar_sessionmaker(url: str) -> sessionmaker:
    engine = criar_engine(url)
    init_db(engine)
    return sessionmaker(autocommit=False, autoflush=False, bind=engine)


def get_db(session_factory: sessionmaker) -> Iterator[Session]:
    """
    Cria uma sessão de banco de dados e fecha após uso

    Uso:
        for db in get_db(fabrica):
            ...
    """
    db = session_factory()
    try:
        yield db
    finally:
        db.close()
