"""Command-line surface: one subcommand per pipeline stage, plus ingest.

Exit codes: 0 all outputs written and validated; 1 usage or validation error;
2 missing upstream artifact (the message names the exact command to run);
3 config-hash mismatch against an upstream artifact.

BLAS thread pools are pinned to one thread before numpy loads so that the
``--threads`` worker cap can never change numeric results (stages themselves
are sequential; the flag is accepted, recorded, and excluded from the config
hash).
"""

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import sys

from . import __version__


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; 2 is reserved for missing upstream
    artifacts here, so usage errors exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _seed(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("thread count must be at least 1")
    return value


def build_parser():
    parser = _Parser(prog="advrsa",
                     description="train a small classifier, synthesize "
                                 "adversarial stimuli, and quantify how "
                                 "network and response geometries relate")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    commands = {
        "gen-data": "generate the labeled shape dataset",
        "train": "train the classifier on the generated dataset",
        "select-re": "pick the regular (natural) stimuli",
        "synth": "synthesize adversarial-noise and interference images",
        "activations": "record per-layer activations for every stimulus",
        "rsa": "dissimilarity matrices, similarity stats, trend tests",
        "encode": "sparse forward encoding models on simulated responses",
        "searchlight": "vertex selection and similarity maps on a sheet",
        "report": "figure-ready tables, charts, and the run summary",
        "ingest": "validate external activation matrices into the run",
    }
    sub = parser.add_subparsers(dest="command", metavar="command",
                                parser_class=_Parser, required=True)
    for name, help_text in commands.items():
        cmd = sub.add_parser(name, help=help_text, description=help_text)
        cmd.add_argument("--config", metavar="PATH",
                         help="key=value config file (defaults when omitted)")
        cmd.add_argument("--seed", type=_seed, metavar="N",
                         help="override the master seed")
        cmd.add_argument("--out", metavar="DIR",
                         help="override the output directory")
        cmd.add_argument("--threads", type=_positive, metavar="N",
                         help="worker cap; never affects results")
        if name == "ingest":
            cmd.add_argument("files", nargs="+", metavar="FILE",
                             help="activation matrix files (CSV or binary)")
    return parser


def _describe(command, summary):
    if command == "gen-data":
        return (f"{summary['train_images']} train / "
                f"{summary['val_images']} val images, "
                f"{summary['classes']} classes")
    if command == "train":
        acc = summary.get("final_val_accuracy")
        return f"final validation accuracy {acc:.4f}" if acc is not None else ""
    if command == "select-re":
        return (f"{summary['k']} stimuli ({summary['strategy']}), confidence "
                f"[{summary['confidence_min']:.4f}, "
                f"{summary['confidence_max']:.4f}]")
    if command == "synth":
        n = summary["n_stimuli"]
        return (f"AN {summary['an_converged']}/{n}, "
                f"AI {summary['ai_converged']}/{n} converged; "
                f"AI mean Linf {summary['ai_mean_linf']:.4f}; "
                f"{summary['verification_violations']} verification "
                f"violations")
    if command == "activations":
        return f"{summary['files']} activation matrices"
    if command == "rsa":
        an = " ".join(f"{v:+.3f}" for v in summary["r_re_an"])
        ai = " ".join(f"{v:+.3f}" for v in summary["r_re_ai"])
        return (f"R(RE,AN) by layer: {an} | R(RE,AI) by layer: {ai} | "
                f"trend p: AN {summary['trend_p_re_an']:.4f}, "
                f"AI {summary['trend_p_re_ai']:.4f}")
    if command == "encode":
        parts = ", ".join(f"{k} {v:.2f}"
                          for k, v in summary["layer_assignment"].items())
        return f"{summary['n_models']} models; assignment: {parts}"
    if command == "searchlight":
        return (f"{summary['n_selected']}/{summary['n_vertices']} "
                f"vertices selected")
    if command == "report":
        return ", ".join(summary["files"])
    if command == "ingest":
        return "; ".join(
            f"{row['file']} -> {row['output']}"
            + (" (reordered)" if row["reordered"] else "")
            for row in summary["ingested"])
    return ""


def main(argv=None):
    args = build_parser().parse_args(argv)
    from . import config as config_module
    from . import pipeline
    try:
        if args.config is not None:
            cfg = config_module.load_config(args.config)
        else:
            cfg = config_module.default_config()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out_dir"] = args.out
        if overrides:
            cfg = cfg.replaced(**overrides)
        # --threads caps workers; every stage is sequential with BLAS pinned
        # to one thread, so any cap >= 1 is honored without further action
        # and results never depend on it.
        summary = pipeline.run_command(args.command, cfg,
                                       files=getattr(args, "files", None),
                                       config_path=args.config)
    except pipeline.UpstreamMissing as exc:
        print(f"advrsa: {exc}", file=sys.stderr)
        return 2
    except pipeline.HashMismatch as exc:
        print(f"advrsa: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"advrsa: {exc}", file=sys.stderr)
        return 1
    detail = _describe(args.command, summary)
    line = f"advrsa {args.command}: ok ({cfg.config_hash()})"
    if detail:
        line += f" - {detail}"
    print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
