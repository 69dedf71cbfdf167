"""Training loop: alternating seg/matte schedule over synthetic scenes,
Adam on the trainable parameters only, JSON-lines loss log, checkpointing."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backbone import ConfigError, PromptSet
from .checkpoint import Checkpoint, snapshot_model
from .losses import LossBreakdown, composite_loss
from .metrics import resize_to
from .model import ModelConfig, SegMatteModel
from .optim import Adam
from .synth import PROMPT_MODES, SynthSample, generate_sample, sample_prompts
from .tensor import ContractError, Tensor

TASK_SCHEDULES = ("alternate", "seg", "matte")


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class TrainConfig:
    seed: int = 0
    image_size: int = 64
    embed_dim: int = 32
    heads: int = 4
    encoder_depth: int = 2
    lr: float = 5e-4
    batch_size: int = 2
    max_steps: int = 500
    task_schedule: str = "alternate"
    output_resolution: int = 256
    checkpoint_path: str = "model.ckpt"
    log_path: Optional[str] = None
    dataset_size: int = 16
    prompt_modes: Tuple[str, ...] = PROMPT_MODES
    laplacian_levels: int = 3
    pool_rfs: Tuple[int, ...] = (4, 8, 16)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.image_size % 32:
            raise ConfigError(f"image_size {self.image_size} must be divisible by 32")
        if self.task_schedule not in TASK_SCHEDULES:
            raise ConfigError(f"task_schedule {self.task_schedule!r} not in {TASK_SCHEDULES}")
        if self.batch_size < 1 or self.max_steps < 1 or self.dataset_size < 1:
            raise ConfigError("batch_size, max_steps and dataset_size must be >= 1")
        bad_modes = [m for m in self.prompt_modes if m not in PROMPT_MODES]
        if bad_modes:
            raise ConfigError(f"unknown prompt modes {bad_modes}")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            raw = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key in ("prompt_modes", "pool_rfs"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)

    def to_dict(self) -> Dict:
        return asdict(self)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            image_size=self.image_size,
            embed_dim=self.embed_dim,
            heads=self.heads,
            encoder_depth=self.encoder_depth,
            pool_rfs=self.pool_rfs,
            output_resolution=self.output_resolution,
        )


def build_model_from_config(config: Dict) -> SegMatteModel:
    """Rebuild the architecture a checkpoint-config snapshot describes."""
    cfg = TrainConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in config.items()})
    return SegMatteModel(cfg.model_config(), seed=cfg.seed)


def _resize_map(map_1hw: np.ndarray, resolution: int) -> np.ndarray:
    if map_1hw.shape[-1] == resolution and map_1hw.shape[-2] == resolution:
        return map_1hw
    return resize_to(map_1hw[0], (resolution, resolution))[None]


class Trainer:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.model = SegMatteModel(cfg.model_config(), seed=cfg.seed)
        trainable = self.model.trainable_parameters()
        self.optimizer = Adam(trainable, lr=cfg.lr)
        # optimizer list must be exactly the trainable-flagged set
        if set(self.optimizer.params) != {
            n for n, p in self.model.named_parameters() if p.requires_grad
        }:
            raise ContractError("optimizer parameter list diverges from trainable set")
        self._dataset: Dict[int, Tuple[SynthSample, PromptSet]] = {}

    # -- data -------------------------------------------------------------------

    def dataset_item(self, index: int) -> Tuple[SynthSample, PromptSet]:
        index = index % self.cfg.dataset_size
        if index not in self._dataset:
            sample = generate_sample(derive_seed(self.cfg.seed, 11, index), self.cfg.image_size)
            mode_rng = np.random.default_rng(derive_seed(self.cfg.seed, 13, index))
            mode = self.cfg.prompt_modes[int(mode_rng.integers(len(self.cfg.prompt_modes)))]
            k = int(mode_rng.integers(1, 6))
            prompts = sample_prompts(sample.mask, derive_seed(self.cfg.seed, 17, index), mode, k=k)
            self._dataset[index] = (sample, prompts)
        return self._dataset[index]

    def task_for_step(self, step: int) -> str:
        if self.cfg.task_schedule == "alternate":
            return "seg" if step % 2 == 0 else "matte"
        return self.cfg.task_schedule

    # -- optimization --------------------------------------------------------------

    def train_step(self, step: int) -> LossBreakdown:
        task = self.task_for_step(step)
        images, prompts, targets = [], [], []
        for j in range(self.cfg.batch_size):
            sample, prompt = self.dataset_item(step * self.cfg.batch_size + j)
            images.append(sample.image)
            prompts.append(prompt)
            source = sample.mask if task == "seg" else sample.alpha
            targets.append(_resize_map(source, self.cfg.output_resolution))
        image = Tensor(np.stack(images))
        target = np.stack(targets)
        result = self.model.forward(image, prompts, tasks=(task,))
        breakdown = composite_loss(
            task, result.output(task), target, levels=self.cfg.laplacian_levels
        )
        self.optimizer.zero_grad()
        breakdown.tensor_total.backward()
        self.optimizer.step()
        return breakdown

    def run(self, max_steps: Optional[int] = None, log_lines: Optional[List[str]] = None) -> Checkpoint:
        steps = max_steps if max_steps is not None else self.cfg.max_steps
        for step in range(steps):
            breakdown = self.train_step(step)
            if log_lines is not None:
                log_lines.append(breakdown.to_json_line(step=step, task=self.task_for_step(step)))
        return self.snapshot(steps)

    def snapshot(self, step: int) -> Checkpoint:
        return snapshot_model(
            self.model, step=step, config=self.cfg.to_dict(), optim_state=self.optimizer.state()
        )


def train_and_save(cfg: TrainConfig) -> Tuple[Checkpoint, List[str]]:
    """Full run: train, write the JSON-lines log and checkpoint, return both."""
    from .checkpoint import save_checkpoint

    trainer = Trainer(cfg)
    log_lines: List[str] = []
    checkpoint = trainer.run(log_lines=log_lines)
    log_path = cfg.log_path or str(Path(cfg.checkpoint_path).with_suffix(".log.jsonl"))
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w") as fh:
        fh.write("\n".join(log_lines) + ("\n" if log_lines else ""))
    Path(cfg.checkpoint_path).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(cfg.checkpoint_path, checkpoint)
    return checkpoint, log_lines
