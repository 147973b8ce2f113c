"""
Experiment service orchestrating dataset generation, training and evaluation.

Every public method returns a result dictionary with ``status`` ("success" or
"error"), a ``message`` and ``details``; the command-line layer turns these
into output and exit codes.
"""

from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence
import logging
import os

from calvin import checkpoint
from calvin.errors import CalvinError
from calvin.expert import Trajectory, generate_dataset, read_dataset, write_dataset
from calvin.gradcheck import SUITES, run_gradcheck
from calvin.maze import get_motion
from calvin.metrics import SCHEMA_VERSION, MetricsSummary, collision_preference, success_rate
from calvin.model import PlanningModel
from calvin.render import render_maps
from calvin.rollout import OraclePolicy, PlannerPolicy, Policy, RandomPolicy, evaluation_tasks
from calvin.training import METRIC_COLUMNS, TrainConfig, ablation_configs, model_for
from calvin.training import train as train_model
from App.config import build_train_config
from App.utils.performance_monitor import get_performance_summary, operation_timer, performance_monitor
from .artifact_service import CONFIG_JSON, TIMINGS_JSON, ArtifactService

logger = logging.getLogger(__name__)

POLICIES = ('planner', 'oracle', 'random')
SUMMARY_COLUMNS = (
    'variant',
    'policy',
    'success_mean',
    'success_std',
    'mean_steps_success',
    'collision_violation',
    'best_epoch',
)


class ExperimentService:
    """
    Service running experiments described by a layered runtime configuration.
    """

    def __init__(self, config: Mapping[str, Any], out_dir: Optional[str] = None):
        self.config = config
        self.train_config: TrainConfig = build_train_config(config)
        self.artifacts = ArtifactService(out_dir or config.get('OUT_DIR', 'runs/latest'))

    # Data

    def _load_or_generate(self, dataset_path: Optional[str]) -> List[Trajectory]:
        tc = self.train_config
        path = dataset_path or self.artifacts.dataset_path()
        if os.path.exists(path):
            trajectories = read_dataset(path)
            wrong = {t.motion for t in trajectories} - {tc.motion}
            if wrong:
                raise CalvinError(f"Dataset {path} holds {sorted(wrong)} demonstrations, config asks for '{tc.motion}'")
            return trajectories
        if dataset_path:
            raise CalvinError(f"Dataset {dataset_path} does not exist")
        return generate_dataset(tc.trajectories, tc.lattice_n, get_motion(tc.motion), tc.seed)

    @performance_monitor('generate_data', log_slow_threshold=30.0)
    def generate_data(self, dataset_path: Optional[str] = None) -> Dict[str, Any]:
        tc = self.train_config
        try:
            path = dataset_path or self.artifacts.dataset_path()
            trajectories = generate_dataset(tc.trajectories, tc.lattice_n, get_motion(tc.motion), tc.seed)
            write_dataset(path, trajectories)
            return {
                'status': 'success',
                'message': f"Wrote {len(trajectories)} demonstrations",
                'details': {
                    'path': path,
                    'trajectories': len(trajectories),
                    'lattice_n': tc.lattice_n,
                    'motion': tc.motion,
                    'mean_length': sum(len(t) for t in trajectories) / len(trajectories),
                },
            }
        except (CalvinError, OSError, ValueError) as e:
            logger.error('Dataset generation failed', extra={'event': 'dataset_failed', 'error': str(e)})
            return {'status': 'error', 'message': str(e)}

    # Training

    @performance_monitor('train', log_slow_threshold=600.0)
    def train(self, dataset_path: Optional[str] = None) -> Dict[str, Any]:
        tc = self.train_config
        try:
            dataset = self._load_or_generate(dataset_path)
            result = train_model(tc, dataset)
            ckpt = self.artifacts.checkpoint_path(tc.planner)
            checkpoint.save(ckpt, result.best_state)
            self.artifacts.write_json({'schema': SCHEMA_VERSION, 'config': tc.to_dict()}, CONFIG_JSON)
            rows = [record.as_row() for record in result.history]
            self.artifacts.write_csv(rows, METRIC_COLUMNS)
            self.artifacts.write_json({
                'schema': SCHEMA_VERSION,
                'command': 'train',
                'config': tc.to_dict(),
                'best_epoch': result.best_epoch,
                'history': rows,
            })
            return {
                'status': 'success',
                'message': f"Trained {tc.planner} for {len(result.history)} epochs",
                'details': {'checkpoint': ckpt, 'best_epoch': result.best_epoch, 'history': rows},
            }
        except (CalvinError, OSError, ValueError) as e:
            logger.error('Training failed', extra={'event': 'training_failed', 'error': str(e)})
            return {'status': 'error', 'message': str(e)}
        finally:
            self._write_timings()

    # Evaluation

    def _load_model(self, checkpoint_path: Optional[str], config: Optional[TrainConfig] = None) -> PlanningModel:
        tc = config or self.train_config
        model = model_for(tc)
        path = checkpoint_path or self.artifacts.checkpoint_path(tc.planner)
        model.load(path)
        return model

    def _policy_factory(self, policy: str, model: PlanningModel) -> Callable[[], Policy]:
        if policy == 'planner':
            return lambda: PlannerPolicy(model)
        if policy == 'oracle':
            return lambda: OraclePolicy(model.motion)
        if policy == 'random':
            return lambda: RandomPolicy(model.motion, self.train_config.seed)
        raise CalvinError(f"Unknown policy '{policy}'; expected one of {POLICIES}")

    def _evaluate_model(
        self, model: PlanningModel, policy: str, mazes: int, seeds: Sequence[int], config: TrainConfig
    ) -> MetricsSummary:
        with operation_timer(f"evaluate.{policy}"):
            summary = success_rate(
                self._policy_factory(policy, model),
                model.backbone,
                model.motion,
                mazes,
                seeds,
                config.lattice_n,
                config.step_limit,
                config.workers,
            )
        if policy == 'planner':
            count = int(self.config.get('COLLISION_MAZES', 20))
            preference_mazes = [maze for maze, _ in evaluation_tasks(count, config.lattice_n, model.motion, seeds[0])]
            with operation_timer('evaluate.collision_preference'):
                summary.collision_violation = collision_preference(model, preference_mazes)
        return summary

    @performance_monitor('evaluate', log_slow_threshold=300.0)
    def evaluate(
        self,
        checkpoint_path: Optional[str] = None,
        mazes: Optional[int] = None,
        seeds: Optional[Sequence[int]] = None,
        policy: str = 'planner',
    ) -> Dict[str, Any]:
        tc = self.train_config
        mazes = int(mazes if mazes is not None else self.config.get('EVAL_MAZES', 100))
        seeds = list(seeds if seeds is not None else self.config.get('EVAL_SEEDS', [0, 1, 2]))
        try:
            if policy == 'planner':
                model = self._load_model(checkpoint_path)
            else:
                model = model_for(tc)
            summary = self._evaluate_model(model, policy, mazes, seeds, tc)
            payload = {
                **summary.to_dict(),
                'command': 'eval',
                'policy': policy,
                'config': tc.to_dict(),
            }
            self.artifacts.write_json(payload)
            self.artifacts.write_csv([{'variant': tc.planner, 'policy': policy, **summary.to_dict()}], SUMMARY_COLUMNS)
            return {'status': 'success', 'message': 'Evaluation completed', 'details': payload}
        except (CalvinError, OSError, ValueError) as e:
            logger.error('Evaluation failed', extra={'event': 'evaluation_failed', 'error': str(e)})
            return {'status': 'error', 'message': str(e)}
        finally:
            self._write_timings()

    @performance_monitor('ablate', log_slow_threshold=600.0)
    def ablate(
        self,
        dataset_path: Optional[str] = None,
        mazes: Optional[int] = None,
        seeds: Optional[Sequence[int]] = None,
    ) -> Dict[str, Any]:
        tc = self.train_config
        mazes = int(mazes if mazes is not None else self.config.get('EVAL_MAZES', 100))
        seeds = list(seeds if seeds is not None else self.config.get('EVAL_SEEDS', [0, 1, 2]))
        try:
            dataset = self._load_or_generate(dataset_path)
            rows = []
            for name, variant in ablation_configs(tc):
                with operation_timer(f"ablate.{name}"):
                    result = train_model(variant, dataset)
                checkpoint.save(self.artifacts.checkpoint_path(f"{tc.planner}_{name}"), result.best_state)
                summary = self._evaluate_model(result.model, 'planner', mazes, seeds, variant)
                rows.append({
                    'variant': name,
                    'policy': 'planner',
                    'best_epoch': result.best_epoch,
                    **summary.to_dict(),
                })
            payload = {'schema': SCHEMA_VERSION, 'command': 'ablate', 'config': tc.to_dict(), 'variants': rows}
            self.artifacts.write_json(payload)
            self.artifacts.write_csv(rows, SUMMARY_COLUMNS)
            return {'status': 'success', 'message': f"Ran {len(rows)} ablation variants", 'details': payload}
        except (CalvinError, OSError, ValueError) as e:
            logger.error('Ablation failed', extra={'event': 'ablation_failed', 'error': str(e)})
            return {'status': 'error', 'message': str(e)}
        finally:
            self._write_timings()

    # Figures and checks

    @performance_monitor('render', log_slow_threshold=60.0)
    def render(
        self,
        checkpoint_path: Optional[str] = None,
        seed: int = 0,
        steps: Sequence[int] = (0,),
        png: Optional[bool] = None,
    ) -> Dict[str, Any]:
        tc = self.train_config
        try:
            model = self._load_model(checkpoint_path)
            maze, start = evaluation_tasks(1, tc.lattice_n, model.motion, seed)[0]
            cell_pixels = int(self.config.get('CELL_PIXELS', 8))
            png = bool(self.config.get('RENDER_PNG', False)) if png is None else png
            files: List[str] = []
            for step in steps:
                files += render_maps(model, maze, self.artifacts.maps_dir(), step, start, cell_pixels, png)
            return {'status': 'success', 'message': f"Rendered {len(files)} images", 'details': {'files': files}}
        except (CalvinError, OSError, ValueError) as e:
            logger.error('Rendering failed', extra={'event': 'render_failed', 'error': str(e)})
            return {'status': 'error', 'message': str(e)}

    @performance_monitor('gradcheck', log_slow_threshold=300.0)
    def gradcheck(self, seeds: int = 20, suites: Sequence[str] = SUITES) -> Dict[str, Any]:
        report = run_gradcheck(range(seeds), suites)
        details = report.to_dict()
        if report.passed:
            return {
                'status': 'success',
                'message': f"All {details['checks']} gradient checks passed",
                'details': details,
            }
        return {
            'status': 'error',
            'message': f"{len(report.failures)} of {details['checks']} gradient checks failed",
            'details': details,
        }

    def _write_timings(self) -> None:
        try:
            self.artifacts.write_json(get_performance_summary(), TIMINGS_JSON)
        except OSError as e:
            logger.warning('Could not write timings', extra={'event': 'timings_failed', 'error': str(e)})
