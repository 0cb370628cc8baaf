import logging
from pathlib import Path
from typing import Optional

import numpy as np
import typer
from pydantic import ValidationError
from rich.logging import RichHandler

from artifacts import (
    load_grasp_bank, load_trajectory_pairs, prepare_run_dir, save_grasp_bank, save_trajectory_pairs,
    write_config, write_csv, write_hand_toml, write_jsonl, write_pgm,
)
from constants import ARTIFACT_FILES, CLI_MESSAGES, LOG_FORMAT
from distillation import train_student
from envcore import PRIVILEGED_DIM
from errors import ConfigError, RotateError
from grasp_generator import generate_bank, replay_grasp
from metrics import NetPolicy, ZeroPolicy, evaluate, summary_table
from networks import RunningMeanStd, load_checkpoint, save_checkpoint
from ppo import train_teacher
from settings import RunConfig
from sysid import identify, perturb_model, synthesize_pairs, trajectory_mse
from tactile_image import frame_images

logger = logging.getLogger(__name__)

app = typer.Typer(name='rot', help='In-hand rotation toolkit: grasps, training, distillation, evaluation, sysid.',
                  no_args_is_help=True)

ConfigOption = typer.Option(None, '--config', '-c', help='TOML run configuration.')
SeedOption = typer.Option(None, '--seed', help='Overrides the configured seed.')
OutOption = typer.Option(None, '--out', help='Overrides the output root directory.')
LogLevelOption = typer.Option('INFO', '--log-level', help='Console and run.log level.')


def configure_logging(level='INFO', run_dir=None):
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    root.setLevel(level.upper())
    root.addHandler(RichHandler(rich_tracebacks=False, show_path=False))
    if run_dir is not None:
        file_handler = logging.FileHandler(Path(run_dir) / ARTIFACT_FILES['log'])
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(file_handler)


def _merge(base, updates):
    merged = dict(base)
    for key, value in updates.items():
        merged[key] = _merge(merged.get(key, {}), value) if isinstance(value, dict) else value
    return merged


def load_config(path, seed, out, **updates):
    """Config file plus command-line overrides, validated together."""
    config = RunConfig.from_toml(path, seed=seed, out=out)
    if not updates:
        return config
    return RunConfig.from_toml(None, **_merge(config.model_dump(), updates))


def require_file(path):
    if path is None or not Path(path).exists():
        raise ConfigError(CLI_MESSAGES['MISSING_FILE'].format(path=path))
    return Path(path)


def start_run(config, command, log_level):
    run_dir = prepare_run_dir(config, command)
    configure_logging(log_level, run_dir)
    write_config(run_dir, config)
    logger.info(f"Run directory {run_dir}")
    return run_dir


def _fail(error):
    logging.getLogger(__name__).error(str(error))
    typer.echo(f"Error: {error}", err=True)
    raise typer.Exit(code=1)


def _load_normalizer(extra, dim):
    normalizer = RunningMeanStd(dim)
    if 'obs_mean' in extra:
        normalizer.mean = extra['obs_mean']
        normalizer.var = extra['obs_var']
    return normalizer


def write_tactile_images(directory, logs):
    """PGM per finger for the last recorded step of every episode log."""
    if not logs:
        logger.warning("No episode logs recorded; set eval.log_episodes to write tactile images")
        return []
    paths = []
    for log in logs:
        if not log.rows:
            continue
        stem = f"{log.orientation}_{log.axis}_{log.object_set}_ep{log.episode}"
        for finger, image in enumerate(frame_images(log.rows[-1]), start=1):
            paths.append(write_pgm(Path(directory) / f"{stem}_f{finger}.pgm", image))
    logger.info(f"Wrote {len(paths)} tactile images to {directory}")
    return paths


# ============================================================================
# COMMANDS
# ============================================================================

@app.command('gen-grasps')
def gen_grasps(config_path: Optional[Path] = ConfigOption, seed: Optional[int] = SeedOption,
               out: Optional[Path] = OutOption, count: Optional[int] = typer.Option(None, help='Grasps per object.'),
               log_level: str = LogLevelOption):
    """Generate a bank of stable grasps."""
    try:
        config = load_config(config_path, seed, out, **({'grasp': {'count': count}} if count else {}))
        run_dir = start_run(config, 'gen-grasps', log_level)
        bank, reasons = generate_bank(config.hand, config.grasp, config.randomization, seed=config.seed)
        failures = [entry.index for entry in bank if not replay_grasp(config.hand, entry, config.grasp.sim_steps)[0]]
        if failures:
            logger.warning(f"{len(failures)} accepted grasps failed replay: {failures[:10]}")
        save_grasp_bank(run_dir / ARTIFACT_FILES['grasp_bank'], bank)
        logger.info(f"Rejection reasons: {dict(reasons)}")
        typer.echo(CLI_MESSAGES['RUN_COMPLETE'].format(path=run_dir))
    except (RotateError, ValidationError) as e:
        _fail(e)


@app.command('train')
def train(config_path: Optional[Path] = ConfigOption, seed: Optional[int] = SeedOption,
          out: Optional[Path] = OutOption, grasps: Optional[Path] = typer.Option(None, help='Grasp bank JSONL.'),
          reward: Optional[str] = typer.Option(None, help="Reward form: 'base' or 'alt'."),
          no_curriculum: bool = typer.Option(False, '--no-curriculum', help='Fix the curriculum coefficient at 1.'),
          log_level: str = LogLevelOption):
    """Train the privileged teacher with PPO."""
    try:
        updates = {}
        if reward:
            updates['reward'] = {'form': reward}
        if no_curriculum:
            updates['learn'] = {'curriculum': {'enabled': False}}
        config = load_config(config_path, seed, out, **updates)
        bank_path = grasps or config.env.grasp_bank
        bank = load_grasp_bank(require_file(bank_path)) if bank_path else None
        run_dir = start_run(config, 'train', log_level)
        net, normalizer, curve = train_teacher(config, bank)
        save_checkpoint(run_dir / ARTIFACT_FILES['teacher_checkpoint'], net,
                        extra={'obs_mean': normalizer.mean, 'obs_var': normalizer.var},
                        info={'reward': config.reward.form, 'mode': config.tactile.mode})
        write_csv(run_dir / ARTIFACT_FILES['training_curve'], curve)
        typer.echo(CLI_MESSAGES['RUN_COMPLETE'].format(path=run_dir))
    except (RotateError, ValidationError) as e:
        _fail(e)


@app.command('distill')
def distill(teacher: Path = typer.Option(..., '--teacher', help='Teacher checkpoint.'),
            config_path: Optional[Path] = ConfigOption, seed: Optional[int] = SeedOption,
            out: Optional[Path] = OutOption, grasps: Optional[Path] = typer.Option(None, help='Grasp bank JSONL.'),
            log_level: str = LogLevelOption):
    """Distill a tactile-proprioceptive student from a teacher checkpoint."""
    try:
        config = load_config(config_path, seed, out)
        net, extra, _ = load_checkpoint(require_file(teacher))
        bank_path = grasps or config.env.grasp_bank
        bank = load_grasp_bank(require_file(bank_path)) if bank_path else None
        run_dir = start_run(config, 'distill', log_level)
        normalizer = _load_normalizer(extra, net.obs_dim + net.priv_dim)
        student, curve = train_student(config, net, normalizer, bank)
        save_checkpoint(run_dir / ARTIFACT_FILES['student_checkpoint'], student,
                        extra={'obs_mean': normalizer.mean, 'obs_var': normalizer.var},
                        info={'goal_tolerance': config.distill.goal_tolerance})
        write_csv(run_dir / ARTIFACT_FILES['distill_curve'], curve)
        typer.echo(CLI_MESSAGES['RUN_COMPLETE'].format(path=run_dir))
    except (RotateError, ValidationError) as e:
        _fail(e)


@app.command('eval')
def evaluate_command(checkpoint: Optional[Path] = typer.Option(
                         None, '--checkpoint', help='Teacher or student checkpoint; omitted holds the grasp.'),
                     config_path: Optional[Path] = ConfigOption, seed: Optional[int] = SeedOption,
                     out: Optional[Path] = OutOption, grasps: Optional[Path] = typer.Option(None),
                     tactile_images: bool = typer.Option(
                         False, help="Write synthetic tactile images of each episode's last step."),
                     log_level: str = LogLevelOption):
    """Evaluate a policy over orientations, axes and object sets."""
    try:
        config = load_config(config_path, seed, out)
        policy = ZeroPolicy()
        if checkpoint is not None:
            net, extra, _ = load_checkpoint(require_file(checkpoint))
            # students keep the teacher's normalizer, which covers the privileged block too
            extra_dim = {'mlp': net.priv_dim, 'tcn': PRIVILEGED_DIM}.get(net.encoder, 0)
            dim = net.obs_dim + extra_dim
            normalizer = _load_normalizer(extra, dim) if 'obs_mean' in extra else None
            policy = NetPolicy(net, normalizer)
        bank_path = grasps or config.env.grasp_bank
        bank = load_grasp_bank(require_file(bank_path)) if bank_path else None
        run_dir = start_run(config, 'eval', log_level)
        summary, frame, logs = evaluate(config, policy, bank)
        write_csv(run_dir / ARTIFACT_FILES['episodes'], frame)
        write_csv(run_dir / ARTIFACT_FILES['summary'], summary_table(frame))
        if logs:
            write_jsonl(run_dir / ARTIFACT_FILES['episode_logs'], [r for log in logs for r in log.to_records()])
        if tactile_images:
            write_tactile_images(run_dir / ARTIFACT_FILES['tactile_images'], logs)
        typer.echo(f"Rot {summary.rotations_mean:.3f} +/- {summary.rotations_std:.3f}, "
                   f"TTT {summary.ttt_mean:.2f} +/- {summary.ttt_std:.2f}")
        typer.echo(CLI_MESSAGES['RUN_COMPLETE'].format(path=run_dir))
    except (RotateError, ValidationError) as e:
        _fail(e)


@app.command('sysid')
def sysid_command(config_path: Optional[Path] = ConfigOption, seed: Optional[int] = SeedOption,
                  out: Optional[Path] = OutOption,
                  trajectories: Optional[Path] = typer.Option(
                      None, help='Trajectory pairs JSONL; omitted synthesizes them from a perturbed hand.'),
                  log_level: str = LogLevelOption):
    """Identify per-joint hand dynamics with CMA-ES."""
    try:
        config = load_config(config_path, seed, out)
        sysid = config.sysid
        source = trajectories or sysid.trajectories
        pairs = load_trajectory_pairs(require_file(source)) if source else None
        run_dir = start_run(config, 'sysid', log_level)
        if pairs is None:
            truth = perturb_model(config.hand, np.random.default_rng(config.seed), sysid.perturbation)
            pairs = synthesize_pairs(truth, sysid.orientations, sysid.signals, sysid.steps)
            save_trajectory_pairs(run_dir / ARTIFACT_FILES['trajectory_pairs'], pairs)
        model, history = identify(pairs, sysid, config.hand, seed=config.seed, threads=config.threads)
        write_csv(run_dir / ARTIFACT_FILES['convergence'], history)
        write_hand_toml(run_dir / ARTIFACT_FILES['hand_model'], model)
        mse = trajectory_mse(model, pairs)
        logger.info(f"Validation trajectory MSE {mse:.3e}")
        typer.echo(f"Trajectory MSE {mse:.3e}")
        typer.echo(CLI_MESSAGES['RUN_COMPLETE'].format(path=run_dir))
    except (RotateError, ValidationError) as e:
        _fail(e)


if __name__ == '__main__':
    app()
