import logging
import os
import sys
from typing import List, Optional

import click
import numpy as np
from einops import rearrange

from poseflux.src.config.settings import (
    DATASET_SIZE,
    DEFAULT_FRAMES,
    DEFAULT_SEED,
    DEFAULT_TAU,
    LOG_FORMAT,
    LOG_LEVEL,
    WORKERS,
)
from poseflux.src.models.errors import InputError, NumericalError, RetargetError
from poseflux.src.models.maps import TemperatureMap
from poseflux.src.models.params import DenoiserParams
from poseflux.src.models.pose import BODY18, RgbImage
from poseflux.src.models.training import TrainConfig
from poseflux.src.services.artifacts import (
    atomic_write_text,
    read_ppm,
    write_pgm8,
    write_ppm,
    write_tmap,
    write_tmap_preview,
)
from poseflux.src.services.attention import temporal_attention_maps
from poseflux.src.services.checkpoint import load_checkpoint, save_checkpoint
from poseflux.src.services.dataset import LatentCodec, load_dataset, make_synthetic_dataset, save_dataset
from poseflux.src.services.denoiser import Denoiser, prepare_conditioning
from poseflux.src.services.diffusion import make_schedule, seeded_noise
from poseflux.src.services.long_video import plan_windows, sample_long
from poseflux.src.services.pose_io import load_pose_sequence, save_pose_sequence
from poseflux.src.services.rasterizer import rasterize_sequence
from poseflux.src.services.retargeter import retarget_sequence
from poseflux.src.services.temperature_map import pose_temperature_map, window_temperature_map
from poseflux.src.services.trainer import Trainer

logger = logging.getLogger("poseflux.cli")

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


def _config(path: Optional[str]) -> TrainConfig:
    return TrainConfig.from_file(path) if path else TrainConfig()


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option(
    "--log-level",
    type=click.Choice(LOG_LEVELS, case_sensitive=False),
    default=LOG_LEVEL.upper(),
    show_default=True,
    help="Logging level for poseflux loggers.",
)
def cli(log_level: str):
    """Pose-driven animation toolkit: poses, temperature maps, a toy denoiser and long-video sampling."""
    logging.basicConfig(level=log_level.upper(), format=LOG_FORMAT)
    logging.getLogger("poseflux").setLevel(log_level.upper())


@cli.command()
@click.argument("poses")
def validate(poses: str):
    """Parse a pose file and check its invariants."""
    seq = load_pose_sequence(poses)
    present = sum(int(frame.presence().sum()) for frame in seq.frames)
    click.echo(f"{poses}: {len(seq)} frames, {seq.width}x{seq.height} canvas, {present} keypoints present")


@cli.command()
@click.option("--in", "in_path", required=True, help="Pose sequence file.")
@click.option("--out-dir", required=True, help="Directory for frame_XXXX.ppm images.")
@click.option("--stroke", type=click.IntRange(min=1), default=None, help="Line width in pixels [default: canvas/64].")
def rasterize(in_path: str, out_dir: str, stroke: Optional[int]):
    """Render every pose frame as an RGB skeleton on black."""
    seq = load_pose_sequence(in_path)
    os.makedirs(out_dir, exist_ok=True)
    for i, image in enumerate(rasterize_sequence(seq, BODY18, stroke)):
        write_ppm(os.path.join(out_dir, f"frame_{i:04d}.ppm"), image)
    click.echo(f"wrote {len(seq)} frames to {out_dir}")


@cli.command()
@click.option("--source", required=True, help="Pose file whose first frame gives the source proportions.")
@click.option("--driving", required=True, help="Driving pose sequence.")
@click.option("--out", required=True, help="Output pose sequence.")
@click.option("--workers", type=click.IntRange(min=1), default=WORKERS, show_default=True)
def retarget(source: str, driving: str, out: str, workers: int):
    """Give the driving motion the source skeleton's bone proportions."""
    src = load_pose_sequence(source).frames[0]
    result = retarget_sequence(load_pose_sequence(driving), src, BODY18, max_workers=workers)
    save_pose_sequence(out, result)
    click.echo(f"wrote {len(result)} re-targeted frames to {out}")


@cli.command()
@click.option("--poses", required=True, help="Pose sequence file.")
@click.option("--tau", type=click.FloatRange(min=0.0), default=DEFAULT_TAU, show_default=True)
@click.option("--out", required=True, help="Output TMAP float map.")
@click.option("--preview", default=None, help="Optional 16-bit PGM preview.")
@click.option("--stroke", type=click.IntRange(min=1), default=None, help="Line width in pixels [default: canvas/64].")
@click.option("--start", type=click.IntRange(min=0), default=0, show_default=True, help="First frame of the window.")
@click.option("--frames", type=click.IntRange(min=1), default=None, help="Window length [default: rest of sequence].")
def ptm(
    poses: str,
    tau: float,
    out: str,
    preview: Optional[str],
    stroke: Optional[int],
    start: int,
    frames: Optional[int],
):
    """Temperature map of one pose window at canvas resolution."""
    seq = load_pose_sequence(poses)
    length = len(seq) - start if frames is None else frames
    if start + length > len(seq) or length < 1:
        raise click.BadParameter(f"window [{start}, {start + length}) exceeds {len(seq)} frames")
    tmap = pose_temperature_map(rasterize_sequence(seq.window(start, length), BODY18, stroke), tau)
    write_tmap(out, tmap.values)
    if preview:
        write_tmap_preview(preview, tmap.values, tau)
    click.echo(f"temperature range [{tmap.values.min():.6g}, {tmap.values.max():.6g}] written to {out}")


@cli.command()
@click.option("--n", "count", type=click.IntRange(min=1), default=DATASET_SIZE, show_default=True)
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
@click.option("--out-dir", required=True)
@click.option("--config", default=None, help="Config file for latent channels and grid.")
def dataset(count: int, seed: int, out_dir: str, config: Optional[str]):
    """Generate the synthetic blob dataset."""
    cfg = _config(config)
    samples = make_synthetic_dataset(count, seed, cfg.channels, cfg.height, cfg.width)
    save_dataset(out_dir, samples)
    click.echo(f"wrote {count} samples to {out_dir}")


@cli.command()
@click.option("--config", required=True, help="key = value training config.")
@click.option("--in-ckpt", default=None, help="Starting checkpoint [default: fresh parameters].")
@click.option("--out-ckpt", required=True)
@click.option(
    "--dataset", "dataset_dir", default=None, help="Dataset directory [default: synthetic set from the seed]."
)
@click.option("--trace", default=None, help="Write the loss trace, one value per line.")
def train(config: str, in_ckpt: Optional[str], out_ckpt: str, dataset_dir: Optional[str], trace: Optional[str]):
    """Run one training stage."""
    cfg = TrainConfig.from_file(config)
    if in_ckpt:
        params = load_checkpoint(in_ckpt)
    else:
        params = DenoiserParams.initial(np.random.default_rng(cfg.seed), cfg.channels, cfg.rank)
    if dataset_dir:
        samples = load_dataset(dataset_dir)
    else:
        samples = make_synthetic_dataset(DATASET_SIZE, cfg.seed, cfg.channels, cfg.height, cfg.width)

    params, losses = Trainer(cfg, samples).train(params)
    save_checkpoint(out_ckpt, params)
    if trace:
        atomic_write_text(trace, "".join(f"{loss!r}\n" for loss in losses))
    summary = f"{losses[0]:.6f} -> {losses[-1]:.6f}" if losses else "no steps"
    click.echo(f"stage {cfg.stage}: {len(losses)} steps, loss {summary}; checkpoint {out_ckpt}")


@cli.command()
@click.option("--ckpt", required=True)
@click.option("--source", required=True, help="Source image (PPM).")
@click.option("--poses", required=True, help="Driving pose sequence.")
@click.option(
    "--frames", "total", type=click.IntRange(min=1), default=None, help="Frames to generate [default: all poses]."
)
@click.option("--window", type=click.IntRange(min=1), default=DEFAULT_FRAMES, show_default=True)
@click.option("--stride", type=click.IntRange(min=1), default=None, help="Window stride [default: window/2].")
@click.option("--tau", type=click.FloatRange(min=0.0), default=DEFAULT_TAU, show_default=True)
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
@click.option("--out-dir", required=True)
@click.option("--config", default=None, help="Config file for latent grid and schedule.")
@click.option("--no-ptm", is_flag=True, help="Sample without the temperature map.")
@click.option("--no-pose-temporal", is_flag=True, help="Disable the pose branch's temporal layers.")
@click.option("--stroke", type=click.IntRange(min=1), default=None, help="Line width in pixels [default: canvas/64].")
def animate(
    ckpt: str,
    source: str,
    poses: str,
    total: Optional[int],
    window: int,
    stride: Optional[int],
    tau: float,
    seed: int,
    out_dir: str,
    config: Optional[str],
    no_ptm: bool,
    no_pose_temporal: bool,
    stroke: Optional[int],
):
    """Sample a long video with fused overlapping windows and write its frames."""
    cfg = _config(config)
    params = load_checkpoint(ckpt)
    image = read_ppm(source)
    seq = load_pose_sequence(poses)
    total = len(seq) if total is None else total
    if total > len(seq):
        raise click.BadParameter(f"--frames {total} exceeds the {len(seq)} driving poses")
    window = min(window, total)
    stride = max(1, window // 2) if stride is None else stride
    try:
        plan = plan_windows(total, window, stride)
    except ValueError as e:
        raise click.BadParameter(str(e))

    latent = sample_long(
        params,
        image,
        seq.window(0, total),
        make_schedule(cfg.steps_t, cfg.beta1, cfg.beta_t),
        plan,
        tau=None if no_ptm else tau,
        seed=seed,
        height=cfg.height,
        width=cfg.width,
        stroke=stroke,
        pose_temporal_on=False if no_pose_temporal else None,
    )
    os.makedirs(out_dir, exist_ok=True)
    frames = LatentCodec.seeded(params.channels).decode_frames(latent[0], seq.height, seq.width)
    for i, frame in enumerate(frames):
        write_ppm(os.path.join(out_dir, f"frame_{i:04d}.ppm"), frame)
    click.echo(f"wrote {len(frames)} frames to {out_dir} ({len(plan.windows)} windows)")


def tile_attention(maps: np.ndarray) -> np.ndarray:
    """(h, w, f, f) blocks laid out as one (h*f, w*f) image."""
    return rearrange(maps, "h w f g -> (h f) (w g)")


@cli.command("inspect-attn")
@click.option("--ckpt", required=True)
@click.option("--poses", required=True, help="Pose window (f frames).")
@click.option("--out-dir", required=True)
@click.option("--source", default=None, help="Source image (PPM) [default: black canvas].")
@click.option("--tau", type=click.FloatRange(min=0.0), default=DEFAULT_TAU, show_default=True)
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
@click.option("--timestep", type=click.IntRange(min=1), default=None, help="Diffusion step [default: T/2].")
@click.option("--config", default=None, help="Config file for latent grid and schedule.")
@click.option("--no-ptm", is_flag=True, help="Show attention without the temperature map.")
@click.option("--stroke", type=click.IntRange(min=1), default=None, help="Line width in pixels [default: canvas/64].")
def inspect_attn(
    ckpt: str,
    poses: str,
    out_dir: str,
    source: Optional[str],
    tau: float,
    seed: int,
    timestep: Optional[int],
    config: Optional[str],
    no_ptm: bool,
    stroke: Optional[int],
):
    """Dump block-0 temporal attention as tiled f x f blocks, one per latent location."""
    cfg = _config(config)
    params = load_checkpoint(ckpt)
    seq = load_pose_sequence(poses)
    image = read_ppm(source) if source else RgbImage.black(seq.width, seq.height)
    sched = make_schedule(cfg.steps_t, cfg.beta1, cfg.beta_t)
    t = sched.steps // 2 + 1 if timestep is None else timestep
    if t > sched.steps:
        raise click.BadParameter(f"--timestep {t} exceeds the {sched.steps}-step schedule")

    h, w = cfg.height, cfg.width
    tmap: Optional[TemperatureMap] = None if no_ptm else window_temperature_map(seq, tau, h, w, stroke)
    pose_tokens, source_tokens = prepare_conditioning(seq, image, h, w, stroke)
    z_t, _ = seeded_noise(seed, (1, params.channels, len(seq), h, w))
    trace = Denoiser(params, temporal_on=True).forward(z_t, t, pose_tokens, source_tokens, tmap)
    maps = temporal_attention_maps(trace.blocks[0].temporal_in, params.attention("denoiser_temporal", 0), tmap)[0]

    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "temporal_attention.pgm")
    write_pgm8(path, tile_attention(maps))
    diagonal = np.einsum("hwff->hw", maps) / len(seq)
    click.echo(
        f"mean diagonal attention {diagonal.mean():.4f} "
        f"(min {diagonal.min():.4f}, max {diagonal.max():.4f}); wrote {path}"
    )


def run(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns 0 ok, 1 usage, 2 input, 3 numerical failure."""
    try:
        result = cli.main(args=argv, prog_name="poseflux", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except (InputError, RetargetError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        return 2
    except NumericalError as e:
        click.echo(f"numerical failure: {e}", err=True)
        return 3
    except ValueError as e:
        logger.debug("Rejected input", exc_info=True)
        click.echo(f"error: {e}", err=True)
        return 2
    return result if isinstance(result, int) else 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))
