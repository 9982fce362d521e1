#!/usr/bin/env python3
"""Verifica - speaker verification evaluation toolkit."""

import argparse
import logging
import sys
from typing import List, Optional

from core.errors import ToolkitError
from ui import commands

logger = logging.getLogger("verifica")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _add_config(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="arquivo de configuração key=value")


def _add_jobs(parser: argparse.ArgumentParser):
    parser.add_argument("--jobs", type=int, default=1, help="número de threads de trabalho")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per pipeline step."""
    parser = argparse.ArgumentParser(
        prog="verifica",
        description="Avaliação de verificação de locutor: atributos, embeddings, escores, normalização, fusão e métricas.",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log detalhado (DEBUG)")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="somente avisos e erros")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("features", help="extrai log mel-filterbanks de um manifesto de WAVs")
    p.add_argument("manifest")
    p.add_argument("--out", help="diretório de saída")
    _add_config(p)
    _add_jobs(p)
    p.set_defaults(func=commands.cmd_features)

    p = sub.add_parser("augment", help="gera o manifesto de aumento offline (ou aplica aumento online)")
    p.add_argument("manifest")
    p.add_argument("--out", help="manifesto de saída")
    p.add_argument("--seed", type=int, help="semente mestre")
    p.add_argument("--online", action="store_true", help="renderiza uma versão aumentada por locução")
    p.add_argument("--corpus", help="diretório com speech/, music/ e noise/")
    p.add_argument("--rirs", help="diretório com small/, medium/ e large/")
    _add_config(p)
    _add_jobs(p)
    p.set_defaults(func=commands.cmd_augment)

    p = sub.add_parser("render", help="materializa um manifesto de aumento como atributos")
    p.add_argument("manifest")
    p.add_argument("--out", help="diretório de saída")
    p.add_argument("--corpus", help="diretório com speech/, music/ e noise/")
    p.add_argument("--rirs", help="diretório com small/, medium/ e large/")
    _add_config(p)
    _add_jobs(p)
    p.set_defaults(func=commands.cmd_render)

    p = sub.add_parser("embed", help="extrai embeddings de segmentos de avaliação")
    p.add_argument("manifest")
    p.add_argument("--out", help="arquivo do repositório de embeddings")
    p.add_argument("--seed", type=int, help="semente mestre")
    p.add_argument("--weights", help="pesos da rede (formato binário)")
    p.add_argument("--save-weights", dest="save_weights", help="grava os pesos usados")
    _add_config(p)
    _add_jobs(p)
    p.set_defaults(func=commands.cmd_embed)

    p = sub.add_parser("score", help="pontua tentativas por cosseno 10x10")
    p.add_argument("--trials")
    p.add_argument("--store")
    p.add_argument("--out")
    _add_config(p)
    p.set_defaults(func=commands.cmd_score)

    p = sub.add_parser("norm", help="busca em grade da coorte AS-norm e normaliza os escores")
    p.add_argument("scores")
    p.add_argument("--trials")
    p.add_argument("--store")
    p.add_argument("--pool", help="lista de ids do conjunto de desenvolvimento")
    p.add_argument("--grid", help="N1,N2/X1,X2")
    p.add_argument("--grid-out", dest="grid_out", help="CSV da grade (padrão: <out>.grid.csv)")
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int, help="semente mestre")
    p.add_argument("--out")
    _add_config(p)
    _add_jobs(p)
    p.set_defaults(func=commands.cmd_norm)

    p = sub.add_parser("fuse", help="funde escores de vários sistemas")
    p.add_argument("scores", nargs="*")
    p.add_argument("--out")
    p.add_argument("--weights", help="w1,w2,... na ordem dos arquivos")
    p.add_argument("--preset", help="pesos publicados, ex.: sys1+5+8+11+14")
    p.add_argument("--trials", help="tentativas rotuladas para a busca de pesos")
    p.add_argument("--granularity", type=float)
    p.add_argument("--objective", choices=("DCF", "EER"))
    p.add_argument("--trace", help="CSV da busca (padrão: <out>.trace.csv)")
    _add_config(p)
    p.set_defaults(func=commands.cmd_fuse)

    p = sub.add_parser("eval", help="calcula EER e minDCF")
    p.add_argument("scores")
    p.add_argument("--trials")
    p.add_argument("--out", help="relatório JSON")
    p.add_argument("--det", help="pontos DET em CSV")
    _add_config(p)
    p.set_defaults(func=commands.cmd_eval)

    p = sub.add_parser("synth", help="gera embeddings, tentativas e coorte sintéticos")
    p.add_argument("--out", required=True, help="diretório de saída")
    p.add_argument("--speakers", type=int, default=200)
    p.add_argument("--utterances", type=int, default=5)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--within", type=float, default=0.5, help="dispersão intra-locutor")
    p.add_argument("--between", type=float, default=1.0, help="dispersão entre locutores")
    p.add_argument("--cohort", type=int, default=400)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=commands.cmd_synth)

    return parser


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)
    logging.getLogger().setLevel(level)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return args.func(args)
    except ToolkitError as e:
        print(f"Erro: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.debug("unexpected failure", exc_info=True)
        print(f"Erro fatal: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
