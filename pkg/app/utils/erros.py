"""
Exceções do QuantumTL
Hierarquia única para que a CLI consiga mapear falhas em códigos de saída
"""
from typing import List, Optional


class QuantumTLError(Exception):
    """Erro base de todo o pacote"""


class DomainError(QuantumTLError, ValueError):
    """Argumento fora do domínio permitido (p fora de [0,1], sítio inválido...)"""


class ShapeError(QuantumTLError, ValueError):
    """Dimensões incompatíveis entre vetores, matrizes ou sequências"""


class NumericalError(QuantumTLError, ArithmeticError):
    """Falha numérica (ex: covariância não positiva-definida)"""


class PropagationError(QuantumTLError, RuntimeError):
    """Falha na propagação temporal (resíduo de Krylov acima da tolerância)"""

    def __init__(self, mensagem: str, step: int, seed: Optional[int] = None):
        self.mensagem = mensagem
        self.step = step
        self.seed = seed
        detalhe = f"{mensagem} (passo {step}"
        if seed is not None:
            detalhe += f", seed {seed}"
        super().__init__(detalhe + ")")

    def com_seed(self, seed: int) -> "PropagationError":
        """Retorna uma cópia do erro com a seed da amostra anexada"""
        return PropagationError(self.mensagem, self.step, seed)


class DatasetFormatError(QuantumTLError, IOError):
    """Arquivo de dataset ou de modelo malformado"""


class ChecksumError(DatasetFormatError):
    """Checksum do payload não confere (arquivo truncado ou corrompido)"""


class VersionError(DatasetFormatError):
    """Versão de formato não suportada"""


class TrainingDivergenceError(QuantumTLError, RuntimeError):
    """Loss não finita durante o treino"""

    def __init__(self, epoch: int, batch: int, layer_norms: List[float]):
        self.epoch = epoch
        self.batch = batch
        self.layer_norms = layer_norms
        normas = ", ".join(f"{n:.3e}" for n in layer_norms)
        super().__init__(
            f"Loss não finita na época {epoch}, batch {batch}; normas das camadas: [{normas}]"
        )


class ConfigValidationError(QuantumTLError, ValueError):
    """Configuração inválida, com mensagens por campo"""

    def __init__(self, erros: List[str]):
        self.erros = erros
        super().__init__("Configuração inválida: " + "; ".join(erros))


class FrozenParameterError(QuantumTLError, RuntimeError):
    """Uma camada congelada mudou durante o treino"""

    def __init__(self, layer: int):
        self.layer = layer
        super().__init__(f"Parâmetros congelados da camada {layer} foram alterados durante o treino")
