"""
CLI principal do QuantumTL
Geração de dados, treino, avaliação e experimentos

Uso:
    python -m app.main init-config --preset desk --output experimento.json
    python -m app.main generate-data --config experimento.json --split all
    python -m app.main experiment fig2 --config experimento.json
"""
import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from .config import config, load_config
from .handlers import comandos
from .utils.erros import ConfigValidationError

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Erros de uso saem com código 1"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(comandos.EXIT_USO, f"{self.prog}: erro: {message}\n")


def criar_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qtl", description="Transferência de aprendizado para dinâmica de emaranhamento")
    sub = parser.add_subparsers(dest="comando", required=True, parser_class=_Parser)

    p = sub.add_parser("init-config", help="grava um preset de configuração")
    p.add_argument("--preset", default="desk", choices=["full", "desk"])
    p.add_argument("--output", required=True)

    p = sub.add_parser("generate-data", help="gera os datasets de treino/teste")
    p.add_argument("--config", required=True)
    p.add_argument("--split", default="all", choices=["train", "test", "all"])

    p = sub.add_parser("train", help="treina um modelo")
    p.add_argument("--config", required=True)
    p.add_argument("--role", required=True, choices=["source", "tl", "dt", "frontend"])
    p.add_argument("--obs", choices=["sigma", "sigmasigma", "sigma_sigmasigma"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int)
    p.add_argument("--source-budget", type=int)

    p = sub.add_parser("evaluate", help="avalia um artefato de modelo")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--test")

    p = sub.add_parser("experiment", help="executa um experimento completo")
    p.add_argument("nome", choices=["fig2", "fig3", "appendix"])
    p.add_argument("--config", required=True)
    p.add_argument("--which", choices=["a", "b", "c", "d"])

    p = sub.add_parser("export-csv", help="exporta um dataset em CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("stats", help="resumo do registro de artefatos")
    p.add_argument("--config", required=True)

    return parser


def executar(args: argparse.Namespace) -> Dict[str, Any]:
    if args.comando == "init-config":
        return comandos.init_config(args.preset, args.output)
    if args.comando == "export-csv":
        return comandos.export_dataset_csv(args.dataset, args.output)

    try:
        cfg = load_config(args.config)
    except ConfigValidationError as e:
        logger.error(f"Configuração inválida: {e}")
        return {"sucesso": False, "erro": str(e), "detalhes": e.erros, "codigo": comandos.EXIT_VALIDACAO}

    if args.comando == "generate-data":
        return comandos.generate_data(cfg, args.split)
    if args.comando == "train":
        return comandos.train(cfg, args.role, args.obs, args.seed, args.budget, args.source_budget)
    if args.comando == "evaluate":
        return comandos.evaluate_model(cfg, args.model, args.test)
    if args.comando == "experiment":
        if args.nome == "appendix" and args.which is None:
            return {"sucesso": False, "erro": "appendix exige --which", "codigo": comandos.EXIT_USO}
        return comandos.experiment(cfg, args.nome, args.which)
    return comandos.stats(cfg)


def main(argv: Optional[List[str]] = None) -> int:
    args = criar_parser().parse_args(argv)

    # Configurar logging
    logging.basicConfig(level=getattr(logging, config.LOG_LEVEL, logging.INFO))
    try:
        config.validar_config()
    except ConfigValidationError as e:
        logger.error(str(e))
        return comandos.EXIT_VALIDACAO

    resultado = executar(args)
    print(json.dumps(resultado, indent=2, sort_keys=True, ensure_ascii=False, default=str))
    return resultado["codigo"]


if __name__ == "__main__":
    sys.exit(main())
