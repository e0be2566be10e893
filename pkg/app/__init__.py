"""
QuantumTL
Dinâmica exata do anel de Ising dirigido e transferência de aprendizado
de observáveis para entropia de emaranhamento
"""
