import logging
from pathlib import Path

from flownerf.config.Config import GeneratorConfig, load_config
from flownerf.exceptions.Exceptions import ConfigException
from flownerf.oracleio.OracleScene import generate_scene
from flownerf.repository.CheckpointRepository import CheckpointRepository
from flownerf.repository.DatasetRepository import DatasetRepository
from flownerf.service.EvaluationService import EvaluationService, run_ablation
from flownerf.service.FlowNerfPipeline import FlowNerfPipeline
from flownerf.service.RenderService import RenderService
from flownerf.service.TrainerService import TrainerService

logger = logging.getLogger(__name__)


def parse_size(text):
    """'64x48' -> (64, 48)"""
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise ConfigException(f"Image size must look like WxH, got {text!r}")


class Controller:
    """
    Routes each command-line action to its service.
    """

    def handle_command(self, args):
        command = args.command
        logger.info(f"Handling command: {command}")
        try:
            if command == "gen-scene":
                return self._handle_gen_scene(args)
            elif command == "train":
                return self._handle_train(args)
            elif command == "render":
                return self._handle_render(args)
            elif command == "eval":
                return self._handle_eval(args)
            elif command == "ablate":
                return self._handle_ablate(args)
            else:
                raise ConfigException(f"Unsupported command: {command}")
        except Exception as e:
            logger.error(f"Command {command} failed: {str(e)}")
            raise

    def _handle_gen_scene(self, args):
        width, height = parse_size(args.size)
        config = GeneratorConfig(frames=args.frames, width=width, height=height, seed=args.seed)
        scene = generate_scene(args.out, config, threads=args.threads)
        return {"out": str(args.out), "frames": len(scene.train_poses)}

    def _handle_train(self, args):
        config = load_config(args.config)
        dataset = DatasetRepository(args.data).load(with_test=False)
        trainer = TrainerService(config, dataset, args.out)
        result = trainer.train(resume=args.resume, progress=True)
        return {"checkpoint": str(result.checkpoint), "iteration": result.iteration}

    def _handle_render(self, args):
        service = RenderService.from_checkpoint(args.ckpt)
        written = service.render_views(args.mode, args.out, args.pose_a, args.pose_b)
        return {"written": [str(p) for p in written]}

    def _handle_eval(self, args):
        state = CheckpointRepository().load(args.ckpt)
        pipeline = FlowNerfPipeline.from_state(state)
        dataset = DatasetRepository(args.data).load()
        report = EvaluationService(pipeline, dataset).evaluate(args.report)
        return {"report": str(args.report), "absent": report["absent"]}

    def _handle_ablate(self, args):
        config = load_config(args.config)
        dataset = DatasetRepository(args.data).load()
        combined = run_ablation(config, dataset, Path(args.out))
        return {"arms": list(combined["arms"])}
