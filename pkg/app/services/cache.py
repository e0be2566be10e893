"""
Cache de artefatos por hash de conteúdo
Um artefato só é reaproveitado se o registro no banco e o arquivo existem
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

from sqlalchemy import func
from sqlalchemy.orm import sessionmaker

from ..models import Artefato, Resultado

logger = logging.getLogger(__name__)

SUFIXOS = {"dataset": ".qtld", "modelo": ".qtlm", "relatorio": ".json"}


def chave_conteudo(descricao: Dict[str, Any]) -> str:
    """SHA-256 do JSON canônico (chaves ordenadas, sem espaços)"""
    canonico = json.dumps(descricao, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonico.encode("utf-8")).hexdigest()


class CacheService:
    """Serviço de cache dos comandos da CLI"""

    def __init__(self, raiz: Path, session_factory: sessionmaker):
        self.raiz = Path(raiz)
        self.session_factory = session_factory

    def caminho(self, tipo: str, chave: str) -> Path:
        return self.raiz / f"{tipo}s" / f"{chave[:16]}{SUFIXOS.get(tipo, '')}"

    def buscar(self, tipo: str, descricao: Dict[str, Any]) -> Optional[Path]:
        """Retorna o caminho do artefato em cache ou None"""
        chave = chave_conteudo(descricao)
        db = self.session_factory()
        try:
            artefato = db.query(Artefato).filter(Artefato.hash == chave).first()
            if artefato and Path(artefato.caminho).exists():
                logger.info(f"Cache hit ({tipo}): {artefato.caminho}")
                return Path(artefato.caminho)
            return None
        finally:
            db.close()

    def registrar(self, tipo: str, descricao: Dict[str, Any], caminho: Path) -> str:
        chave = chave_conteudo(descricao)
        db = self.session_factory()
        try:
            artefato = db.query(Artefato).filter(Artefato.hash == chave).first()
            if artefato is None:
                artefato = Artefato(hash=chave, tipo=tipo)
                db.add(artefato)
            artefato.caminho = str(caminho)
            artefato.descricao = json.dumps(descricao, sort_keys=True)
            db.commit()
            logger.info(f"Artefato registrado ({tipo}): {caminho}")
            return chave
        except Exception as e:
            db.rollback()
            logger.error(f"Erro ao registrar artefato {caminho}: {e}")
            raise
        finally:
            db.close()

    def obter_ou_criar(
        self, tipo: str, descricao: Dict[str, Any], criar: Callable[[Path], Any]
    ) -> Tuple[Path, bool]:
        """
        Reaproveita o artefato ou chama criar(caminho) e registra

        Returns:
            tuple: (caminho, True se foi cache hit)
        """
        existente = self.buscar(tipo, descricao)
        if existente is not None:
            return existente, True
        caminho = self.caminho(tipo, chave_conteudo(descricao))
        caminho.parent.mkdir(parents=True, exist_ok=True)
        criar(caminho)
        self.registrar(tipo, descricao, caminho)
        return caminho, False

    def registrar_resultado(
        self,
        experimento: str,
        papel: str,
        metrica: str,
        valor: float,
        artefato_hash: Optional[str] = None,
        **campos,
    ) -> None:
        """Grava uma métrica; `artefato_hash` liga a linha ao relatório que a produziu"""
        if artefato_hash is not None and len(artefato_hash) != 64:
            raise ValueError(f"artefato_hash deve ser um SHA-256 hexadecimal (recebido {artefato_hash!r})")
        db = self.session_factory()
        try:
            db.add(
                Resultado(
                    experimento=experimento,
                    papel=papel,
                    metrica=metrica,
                    valor=float(valor),
                    artefato_hash=artefato_hash,
                    **campos,
                )
            )
            db.commit()
        except Exception as e:
            db.rollback()
            logger.error(f"Erro ao registrar resultado de {experimento}: {e}")
            raise
        finally:
            db.close()

    def estatisticas(self) -> Dict[str, Any]:
        """Contagem de artefatos por tipo e de resultados por experimento"""
        db = self.session_factory()
        try:
            por_tipo = dict(db.query(Artefato.tipo, func.count(Artefato.id)).group_by(Artefato.tipo).all())
            por_experimento = dict(
                db.query(Resultado.experimento, func.count(Resultado.id)).group_by(Resultado.experimento).all()
            )
            return {
                "artefatos": por_tipo,
                "total_artefatos": sum(por_tipo.values()),
                "resultados": por_experimento,
                "total_resultados": sum(por_experimento.values()),
            }
        finally:
            db.close()
