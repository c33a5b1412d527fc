import sys
import json
import logging
import argparse

from flownerf.config.Config import LOG_FILE, LOG_LEVEL
from flownerf.controller.Controller import Controller
from flownerf.exceptions.Exceptions import (
    ConfigException,
    FlowNerfException,
    NumericException,
    StorageException,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def configure_logging(level=LOG_LEVEL, log_file=LOG_FILE):
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="flownerf", description="Joint geometry, pose and flow optimisation")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-scene", help="write a synthetic oracle dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--frames", type=int, default=7)
    gen.add_argument("--size", default="64x48")
    gen.add_argument("--threads", type=int, default=1)

    train = sub.add_parser("train", help="optimise a model on a dataset")
    train.add_argument("--config")
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--resume")

    render = sub.add_parser("render", help="render rgb, depth or flow from a checkpoint")
    render.add_argument("--ckpt", required=True)
    render.add_argument("--mode", choices=["rgb", "depth", "flow"], required=True)
    render.add_argument("--pose-a", dest="pose_a", required=True)
    render.add_argument("--pose-b", dest="pose_b")
    render.add_argument("--out", required=True)

    evaluate = sub.add_parser("eval", help="evaluate a checkpoint against ground truth")
    evaluate.add_argument("--ckpt", required=True)
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--report", required=True)

    ablate = sub.add_parser("ablate", help="train and evaluate the ablation arms")
    ablate.add_argument("--config")
    ablate.add_argument("--data", required=True)
    ablate.add_argument("--out", required=True)
    return parser


def main(argv=None):
    """
    Command-line entry point; returns the process exit code.
    """
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        result = Controller().handle_command(args)
        logger.info(f"Done: {json.dumps(result)}")
        return EXIT_OK
    except ConfigException as e:
        logger.error(f"Configuration error: {str(e)}")
        return EXIT_CONFIG
    except (StorageException, OSError) as e:
        logger.error(f"I/O error: {str(e)}")
        return EXIT_IO
    except NumericException as e:
        logger.error(f"Numeric abort: {str(e)}")
        return EXIT_NUMERIC
    except FlowNerfException as e:
        logger.error(f"Error: {str(e)}")
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"Unexpected error: {str(e)}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
