"""Command-line entry point: mg2vec <stage> --config FILE [--seed N] [--out DIR].

Exit codes: 0 on success, 2 on validation errors (bad config, malformed
input, missing upstream artifacts), 1 on runtime failures. Logs go to
stderr; artifacts go to disk only.
"""

import argparse
import sys
import traceback

from mg2vec.config import describe_defaults, load_config
from mg2vec.errors import Mg2vecError, ValidationError
from mg2vec.pipeline import STAGES, run_stage


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mg2vec",
        description=(
            "K-mer representation learning for metagenome reads: simulate "
            "data, build the co-occurrence graph, train structural and "
            "contextual embeddings, and run classification or segmentation."
        ),
        epilog="configuration keys and defaults:\n" + describe_defaults(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("stage", choices=STAGES, help="pipeline stage to run")
    parser.add_argument("--config", required=True, help="INI configuration file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override pipeline.seed")
    parser.add_argument("--out", default=None,
                        help="override the artifact directory (pipeline.out)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides[("pipeline", "seed")] = args.seed
    try:
        config = load_config(args.config, overrides=overrides)
        run_stage(args.stage, config, out=args.out)
    except ValidationError as err:
        print(f"mg2vec: error: {err}", file=sys.stderr)
        return 2
    except Mg2vecError as err:
        print(f"mg2vec: error: {err}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
