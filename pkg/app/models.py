"""
Models SQLAlchemy do registro de artefatos
Define as tabelas: artefatos e resultados
"""
from sqlalchemy import Column, DateTime, Float, Integer, String, Text
from sqlalchemy.sql import func

from .database import Base


class Artefato(Base):
    """
    Arquivo gerado (dataset, modelo, relatório)
    A chave é o SHA-256 da descrição canônica de tudo que o determina
    """
    __tablename__ = "artefatos"

    id = Column(Integer, primary_key=True, index=True)
    hash = Column(String(64), unique=True, nullable=False, index=True)
    tipo = Column(String(20), nullable=False)  # dataset | modelo | relatorio
    caminho = Column(String(500), nullable=False)
    descricao = Column(Text)  # JSON canônico
    created_at = Column(DateTime, default=func.now())

    def __repr__(self):
        return f"<Artefato(id={self.id}, tipo={self.tipo}, hash={self.hash[:12]})>"


class Resultado(Base):
    """
    Métrica de um experimento (uma linha por papel/conjunto/orçamento/seed)
    """
    __tablename__ = "resultados"

    id = Column(Integer, primary_key=True, index=True)
    experimento = Column(String(50), nullable=False, index=True)
    papel = Column(String(20), nullable=False)  # source | tl | dt | frontend
    conjunto_observaveis = Column(String(30), nullable=True)
    orcamento = Column(Integer)
    seed = Column(Integer)
    longitudinal = Column(Float)
    metrica = Column(String(50), nullable=False)
    valor = Column(Float)
    artefato_hash = Column(String(64), nullable=True)
    created_at = Column(DateTime, default=func.now())

    def __repr__(self):
        return f"<Resultado(experimento={self.experimento}, papel={self.papel}, {self.metrica}={self.valor})>"
