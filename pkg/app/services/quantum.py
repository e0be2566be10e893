"""
Núcleo quântico do anel de Ising dirigido
Preparação de estado, propagação temporal (Lanczos), observáveis,
traço parcial e entropia de von Neumann

Convenção de base: o sítio 0 é o bit mais significativo do índice
(ordem de Kronecker sítio0 ⊗ sítio1 ⊗ ...); bit 0 ≡ |0⟩ ≡ autovalor +1 de σ^z.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache, reduce
from typing import TYPE_CHECKING, Callable, Iterable, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import eigh_tridiagonal, expm

from ..utils.erros import DomainError, PropagationError, ShapeError

if TYPE_CHECKING:
    from .campos import FieldTrajectory

logger = logging.getLogger(__name__)

StateVector = np.ndarray
ReducedDensityMatrix = np.ndarray

EIXOS = ("x", "y", "z")

KRYLOV_DIM = 12
KRYLOV_TOL = 1e-10
TOL_NORMA = 1e-12
TOL_DENSIDADE = 1e-10
CORTE_AUTOVALOR = 1e-12
SUBPASSOS_PADRAO = 10


@dataclass(frozen=True)
class HamiltonianParams:
    """Parâmetros do Hamiltoniano H = B Σσ^x + J Σσ^zσ^z + g Σσ^z (anel fechado)"""

    n_spins: int
    coupling: float = 1.0
    longitudinal: float = 0.0

    def __post_init__(self):
        if self.n_spins < 2 or self.n_spins % 2 != 0:
            raise DomainError(f"n_spins deve ser par e >= 2 (recebido {self.n_spins})")

    @property
    def dim(self) -> int:
        return 1 << self.n_spins


@dataclass(frozen=True)
class TimeGrid:
    """Grade temporal uniforme; os valores são reportados em n_steps+1 pontos"""

    t_final: float = 10.0
    n_steps: int = 100

    def __post_init__(self):
        if not self.t_final > 0:
            raise DomainError(f"t_final deve ser positivo (recebido {self.t_final})")
        if self.n_steps < 1:
            raise DomainError(f"n_steps deve ser >= 1 (recebido {self.n_steps})")

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


# ---------------------------------------------------------------------------
# Tabelas de bits

@lru_cache(maxsize=16)
def _tabelas(n_spins: int) -> Tuple[np.ndarray, np.ndarray]:
    """Índices com o spin de cada sítio invertido e sinais de σ^z por sítio"""
    indices = np.arange(1 << n_spins, dtype=np.int64)
    mascaras = [1 << (n_spins - 1 - i) for i in range(n_spins)]
    flips = np.stack([indices ^ m for m in mascaras])
    sinais_z = np.stack([1.0 - 2.0 * ((indices & m) != 0) for m in mascaras])
    flips.setflags(write=False)
    sinais_z.setflags(write=False)
    return flips, sinais_z


@lru_cache(maxsize=32)
def _diagonal(n_spins: int, coupling: float, longitudinal: float) -> np.ndarray:
    """Parte diagonal J Σ σ^z_i σ^z_{i+1} + g Σ σ^z_i"""
    _, z = _tabelas(n_spins)
    zz = sum(z[i] * z[(i + 1) % n_spins] for i in range(n_spins))
    diagonal = coupling * zz + longitudinal * z.sum(axis=0)
    diagonal.setflags(write=False)
    return diagonal


def _n_spins_de(state: np.ndarray) -> int:
    dim = state.shape[-1]
    n = dim.bit_length() - 1
    if n < 1 or (1 << n) != dim:
        raise ShapeError(f"Dimensão {dim} não é potência de 2")
    return n


def _checar_eixo(axis: str):
    if axis not in EIXOS:
        raise DomainError(f"Eixo '{axis}' inválido; use x, y ou z")


def _aplicar_pauli(states: np.ndarray, site: int, axis: str, n_spins: int) -> np.ndarray:
    """σ^axis_site aplicado ao último eixo de states (aceita lotes)"""
    flips, z = _tabelas(n_spins)
    if axis == "z":
        return states * z[site]
    invertido = states[..., flips[site]]
    if axis == "x":
        return invertido
    # σ^y|0⟩ = i|1⟩, σ^y|1⟩ = −i|0⟩
    return -1j * z[site] * invertido


# ---------------------------------------------------------------------------
# Estado inicial e Hamiltoniano

def initial_state(p: float, n_spins: int) -> StateVector:
    """
    Estado produto ⊗_i(√p|0⟩ + √(1−p)|1⟩)

    Args:
        p: peso de |0⟩ em cada sítio, em [0, 1]
        n_spins: número de spins

    Returns:
        np.ndarray: vetor complexo de dimensão 2^N, norma 1
    """
    if not (0.0 <= p <= 1.0):
        raise DomainError(f"p deve estar em [0, 1] (recebido {p})")
    if n_spins < 1:
        raise DomainError(f"n_spins deve ser positivo (recebido {n_spins})")
    sitio = np.array([np.sqrt(p), np.sqrt(1.0 - p)], dtype=np.complex128)
    return reduce(np.kron, [sitio] * n_spins)


def apply_hamiltonian(params: HamiltonianParams, field_value: float, state: StateVector) -> StateVector:
    """H|ψ⟩ sem montar a matriz (operações de bits sobre os índices da base)"""
    state = np.asarray(state, dtype=np.complex128)
    if state.shape != (params.dim,):
        raise ShapeError(f"Estado com forma {state.shape}, esperado ({params.dim},)")
    return _aplicar_h(params, field_value, state)


def _aplicar_h(params: HamiltonianParams, field_value: float, state: np.ndarray) -> np.ndarray:
    diagonal = _diagonal(params.n_spins, params.coupling, params.longitudinal)
    resultado = diagonal * state
    if field_value != 0.0:
        flips, _ = _tabelas(params.n_spins)
        resultado = resultado + field_value * state[flips].sum(axis=0)
    return resultado


def dense_hamiltonian(params: HamiltonianParams, field_value: float) -> np.ndarray:
    """Matriz densa 2^N × 2^N montada com produtos de Kronecker (oráculo de teste)"""
    n = params.n_spins
    sx = np.array([[0.0, 1.0], [1.0, 0.0]])
    sz = np.array([[1.0, 0.0], [0.0, -1.0]])

    def local(*pares):
        fatores = [np.eye(2)] * n
        for sitio, op in pares:
            fatores[sitio] = op
        return reduce(np.kron, fatores)

    h = np.zeros((params.dim, params.dim), dtype=np.complex128)
    for i in range(n):
        h += field_value * local((i, sx))
        h += params.longitudinal * local((i, sz))
        # N=2: os dois elos do anel ligam os mesmos sítios e ambos somam
        h += params.coupling * local((i, sz), ((i + 1) % n, sz))
    return h


# ---------------------------------------------------------------------------
# Propagação

def krylov_expm(
    matvec: Callable[[np.ndarray], np.ndarray],
    v: np.ndarray,
    tau: float,
    krylov_dim: int = KRYLOV_DIM,
    tol: float = KRYLOV_TOL,
) -> Tuple[np.ndarray, float]:
    """
    exp(−iτH)v por Lanczos com reortogonalização completa

    Returns:
        tuple: (vetor propagado, estimativa a posteriori do resíduo)
    """
    beta0 = np.linalg.norm(v)
    if beta0 == 0.0:
        return np.zeros_like(v), 0.0

    m_max = min(krylov_dim, v.shape[0])
    base = np.empty((m_max, v.shape[0]), dtype=np.complex128)
    alfa = np.zeros(m_max)
    beta = np.zeros(m_max)
    base[0] = v / beta0
    m = m_max
    quebra = False

    for j in range(m_max):
        w = matvec(base[j])
        alfa[j] = np.vdot(base[j], w).real
        w = w - alfa[j] * base[j]
        if j > 0:
            w = w - beta[j - 1] * base[j - 1]
        w = w - base[: j + 1].T @ (base[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] <= 1e-13 * max(1.0, abs(alfa[j])):
            # subespaço invariante: a exponencial é exata
            m = j + 1
            quebra = True
            break
        if j + 1 < m_max:
            base[j + 1] = w / beta[j]

    if m == 1:
        coef = np.array([np.exp(-1j * tau * alfa[0])])
    else:
        autovalores, autovetores = eigh_tridiagonal(alfa[:m], beta[: m - 1])
        coef = autovetores @ (np.exp(-1j * tau * autovalores) * autovetores[0])

    resultado = beta0 * (base[:m].T @ coef)
    residuo = 0.0 if quebra or m == v.shape[0] else float(beta0 * beta[m - 1] * abs(coef[m - 1]))
    return resultado, residuo


def _valores_campo(field: Union["FieldTrajectory", Sequence[float]], grid: TimeGrid) -> np.ndarray:
    valores = np.asarray(getattr(field, "values", field), dtype=np.float64)
    if valores.shape != (grid.n_steps + 1,):
        raise ShapeError(f"Campo com forma {valores.shape}, esperado ({grid.n_steps + 1},)")
    if not np.all(np.isfinite(valores)):
        raise DomainError("Campo contém valores não finitos")
    return valores


def _campo_subpasso(valores: np.ndarray, k: int, s: int, substeps: int) -> float:
    """Valor no ponto médio do subpasso (interpolação linear entre pontos da grade)"""
    frac = (s + 0.5) / substeps
    return float(valores[k] + (valores[k + 1] - valores[k]) * frac)


def _checar_estado_inicial(psi0: StateVector, params: HamiltonianParams) -> np.ndarray:
    psi = np.array(psi0, dtype=np.complex128)
    if psi.shape != (params.dim,):
        raise ShapeError(f"Estado inicial com forma {psi.shape}, esperado ({params.dim},)")
    if abs(np.linalg.norm(psi) - 1.0) > 1e-9:
        raise DomainError("Estado inicial não normalizado")
    return psi


def propagate(
    params: HamiltonianParams,
    field: Union["FieldTrajectory", Sequence[float]],
    psi0: StateVector,
    grid: TimeGrid,
    substeps: int = SUBPASSOS_PADRAO,
    krylov_dim: int = KRYLOV_DIM,
    tol: float = KRYLOV_TOL,
) -> np.ndarray:
    """
    Resolve a equação de Schrödinger com campo constante por partes

    Cada passo de saída k→k+1 é dividido em `substeps` subpassos; em cada um
    o campo vale o ponto médio (para substeps=1, (B(t_k)+B(t_{k+1}))/2).

    Returns:
        np.ndarray: estados em todos os pontos da grade, forma (n_steps+1, 2^N)
    """
    valores = _valores_campo(field, grid)
    psi = _checar_estado_inicial(psi0, params)
    tau = grid.dt / substeps

    estados = np.empty((grid.n_steps + 1, params.dim), dtype=np.complex128)
    estados[0] = psi
    for k in range(grid.n_steps):
        for s in range(substeps):
            b = _campo_subpasso(valores, k, s, substeps)
            psi, residuo = krylov_expm(
                lambda v: _aplicar_h(params, b, v), psi, tau, krylov_dim=krylov_dim, tol=tol
            )
            if residuo > tol:
                raise PropagationError(
                    f"Resíduo de Krylov {residuo:.2e} acima da tolerância {tol:.0e}", step=k
                )
        norma = np.linalg.norm(psi)
        if abs(norma - 1.0) > TOL_NORMA:
            psi = psi / norma
        estados[k + 1] = psi
    return estados


def propagate_dense(
    params: HamiltonianParams,
    field: Union["FieldTrajectory", Sequence[float]],
    psi0: StateVector,
    grid: TimeGrid,
    substeps: int = SUBPASSOS_PADRAO,
) -> np.ndarray:
    """Mesmo esquema de propagate com exponencial densa (oráculo para N pequeno)"""
    valores = _valores_campo(field, grid)
    psi = _checar_estado_inicial(psi0, params)
    tau = grid.dt / substeps
    h_fixo = dense_hamiltonian(params, 0.0)
    h_campo = dense_hamiltonian(params, 1.0) - h_fixo

    estados = np.empty((grid.n_steps + 1, params.dim), dtype=np.complex128)
    estados[0] = psi
    for k in range(grid.n_steps):
        for s in range(substeps):
            b = _campo_subpasso(valores, k, s, substeps)
            psi = expm(-1j * tau * (h_fixo + b * h_campo)) @ psi
        estados[k + 1] = psi
    return estados


# ---------------------------------------------------------------------------
# Observáveis

def expect_sigma(state: StateVector, site: int, axis: str) -> float:
    """⟨ψ|σ^axis_site|ψ⟩"""
    state = np.asarray(state, dtype=np.complex128)
    n = _n_spins_de(state)
    _checar_eixo(axis)
    if not 0 <= site < n:
        raise DomainError(f"Sítio {site} fora do intervalo [0, {n})")
    valor = np.vdot(state, _aplicar_pauli(state, site, axis, n)).real
    return float(np.clip(valor, -1.0, 1.0))


def expect_two_point(state: StateVector, site: int, axis_a: str, distance: int, axis_b: str) -> float:
    """⟨σ^a_i σ^b_{i+ℓ}⟩ com índices módulo N"""
    state = np.asarray(state, dtype=np.complex128)
    n = _n_spins_de(state)
    _checar_eixo(axis_a)
    _checar_eixo(axis_b)
    if not 0 <= site < n:
        raise DomainError(f"Sítio {site} fora do intervalo [0, {n})")
    if not 1 <= distance < n:
        raise DomainError(f"Distância {distance} fora do intervalo [1, {n})")
    outro = (site + distance) % n
    phi = _aplicar_pauli(_aplicar_pauli(state, outro, axis_b, n), site, axis_a, n)
    return float(np.clip(np.vdot(state, phi).real, -1.0, 1.0))


def expectations_batch(states: np.ndarray, components: Iterable[tuple]) -> np.ndarray:
    """
    Tabela de observáveis no sítio 0 para uma sequência de estados

    Args:
        states: array (T, 2^N)
        components: tuplas ("x",) para ⟨σ^x⟩ ou ("x", "z", ℓ) para ⟨σ^x_0 σ^z_ℓ⟩

    Returns:
        np.ndarray: forma (T, n_componentes)
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.complex128))
    n = _n_spins_de(states)
    colunas = []
    for comp in components:
        if len(comp) == 1:
            _checar_eixo(comp[0])
            phi = _aplicar_pauli(states, 0, comp[0], n)
        else:
            a, b, distancia = comp
            _checar_eixo(a)
            _checar_eixo(b)
            if not 1 <= distancia < n:
                raise DomainError(f"Distância {distancia} fora do intervalo [1, {n})")
            phi = _aplicar_pauli(_aplicar_pauli(states, distancia % n, b, n), 0, a, n)
        colunas.append(np.einsum("td,td->t", states.conj(), phi).real)
    return np.clip(np.stack(colunas, axis=1), -1.0, 1.0)


# ---------------------------------------------------------------------------
# Matriz densidade reduzida e entropia

def reduced_density(state: StateVector, subsystem_sites: Sequence[int]) -> ReducedDensityMatrix:
    """Traço parcial sobre o complemento de subsystem_sites (na ordem dada)"""
    state = np.asarray(state, dtype=np.complex128)
    n = _n_spins_de(state)
    sitios = [int(s) for s in subsystem_sites]
    if not sitios:
        raise DomainError("Subsistema vazio")
    if len(set(sitios)) != len(sitios):
        raise DomainError(f"Sítios duplicados em {sitios}")
    if any(not 0 <= s < n for s in sitios):
        raise DomainError(f"Sítios fora do intervalo [0, {n}): {sitios}")
    if len(sitios) >= n:
        raise DomainError("O subsistema deve ser um subconjunto próprio dos sítios")

    resto = [s for s in range(n) if s not in sitios]
    matriz = state.reshape((2,) * n).transpose(sitios + resto).reshape(1 << len(sitios), -1)
    return matriz @ matriz.conj().T


def validate_density(rho: ReducedDensityMatrix) -> ReducedDensityMatrix:
    """Confere hermiticidade, traço unitário e positividade"""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ShapeError(f"Matriz densidade com forma {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > TOL_DENSIDADE:
        raise DomainError("Matriz densidade não hermitiana")
    if abs(np.trace(rho).real - 1.0) > TOL_DENSIDADE:
        raise DomainError(f"Traço {np.trace(rho).real:.12f} diferente de 1")
    if np.linalg.eigvalsh(rho).min() < -TOL_DENSIDADE:
        raise DomainError("Matriz densidade com autovalor negativo")
    return rho


def von_neumann_entropy(rho: ReducedDensityMatrix) -> float:
    """S = −Σ λ ln λ (log natural); autovalores abaixo de 1e−12 contribuem 0"""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ShapeError(f"Matriz densidade com forma {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > TOL_DENSIDADE:
        raise DomainError("Matriz densidade não hermitiana")
    autovalores = np.linalg.eigvalsh(rho)
    autovalores = autovalores[autovalores > CORTE_AUTOVALOR]
    return float(max(-np.sum(autovalores * np.log(autovalores)), 0.0))


def entanglement_entropy(state: StateVector, subsystem_size: int) -> float:
    """Entropia dos sítios contíguos 0..k−1"""
    return von_neumann_entropy(reduced_density(state, range(subsystem_size)))
