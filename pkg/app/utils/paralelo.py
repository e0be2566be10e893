"""
Pool de workers limitado
A ordem dos resultados é sempre a ordem de submissão, então o número de
workers nunca altera o resultado numérico
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def map_ordenado(func: Callable[[T], R], itens: Iterable[T], workers: int = 1) -> List[R]:
    """
    Aplica func a cada item, em paralelo quando workers > 1

    Args:
        func: função de nível de módulo (precisa ser picklable)
        itens: entradas
        workers: tamanho máximo do pool

    Returns:
        list: resultados na mesma ordem dos itens
    """
    itens = list(itens)
    if workers <= 1 or len(itens) <= 1:
        return [func(item) for item in itens]

    n_workers = min(workers, len(itens))
    logger.info(f"Executando {len(itens)} tarefa(s) com {n_workers} worker(s)")
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(func, itens))
