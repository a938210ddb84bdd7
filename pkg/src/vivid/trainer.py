"""Three-stage training: coarse pretraining, touch-up pretraining, joint GAN training.

Stage 1 fits the coarse net (and Coarse-D when its adversarial term is on),
stage 2 fits the touch-up nets on facial component sets, stage 3 trains every
generator part against both critics with one critic step per generator step.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import losses as L
from .datapipe import ComponentSet, Dataset, build_component_set, render_heatmaps
from .errors import CheckpointError, ConfigError, NumericalError
from .fine_net import crop_batch
from .layout import COMPONENTS, scale_landmarks
from .model import ModelConfig, VividModel

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "vivid-checkpoint"
CHECKPOINT_VERSION = 1

REPORT_COLUMNS = (
    "step", "L_mse_c", "L_sys", "L_id_c", "L_adv_c", "L_T", "L_mse_f",
    "L_id_f", "L_h", "L_adv_f", "L_D_coarse", "L_D_fine", "L_G",
)


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    lr_fine_integration: float = 1e-3
    lr_other: float = 1e-4
    batch_size: int = 8
    steps: int = 1000
    seed: int = 0
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    checkpoint_every: int = 0
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    use_sym_loss: bool = True
    use_id_loss: bool = True
    use_coarse_d: bool = True
    use_fine_d: bool = True
    # Divide psi1/psi2 by the pixel count of an image so the per-image adversarial
    # terms keep their intended weight against the element-mean pixel losses.
    adv_per_element: bool = True

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ConfigError(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.lr_fine_integration <= 0 or self.lr_other <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")

    def effective_weights(self, image_elements: int) -> L.LossWeights:
        """The weights actually applied in the composites for ``C*H*W``-element images."""
        if not self.adv_per_element:
            return self.weights
        w = self.weights
        return L.LossWeights(w.alpha1, w.psi1 / image_elements, w.alpha2, w.gamma2, w.psi2 / image_elements)


@dataclass
class Checkpoint:
    model_config: dict
    model_state: dict
    optimizer_state: dict
    step: int
    stages_done: list
    last_stage: int
    seed: int
    sampler_state: dict | None
    config_hash: str

    def build_model(self) -> VividModel:
        model = VividModel(ModelConfig.from_dict(self.model_config))
        model.load_state_dict(self.model_state)
        return model


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, **asdict(ckpt)}
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such checkpoint") from None
    except Exception as exc:
        raise CheckpointError(f"{path}: corrupt or unreadable checkpoint ({type(exc).__name__}: {exc})") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {payload.get('version')} != supported {CHECKPOINT_VERSION} "
            f"(config hash {payload.get('config_hash')})"
        )
    try:
        return Checkpoint(**{f.name: payload[f.name] for f in fields(Checkpoint)})
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing entry {exc} (config hash {payload.get('config_hash')})") from None


class TrainReport:
    """Per-step loss log; terms a configuration disables stay empty."""

    def __init__(self, stage: int, enabled):
        self.stage = stage
        self.enabled = tuple(c for c in REPORT_COLUMNS if c in set(enabled) | {"step"})
        self.rows: list[dict] = []

    def append(self, row: dict):
        self.rows.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in REPORT_COLUMNS})
        return path


def recompute_total(row: dict, stage: int, w: L.LossWeights) -> float:
    """The stage objective rebuilt from the logged sub-losses (missing terms count as 0)."""
    g = lambda k: row.get(k) or 0.0  # noqa: E731
    lc = L.compose_LC(g("L_mse_c"), g("L_sys"), g("L_id_c"), g("L_adv_c"), w)
    if stage == 1:
        return lc
    if stage == 2:
        return L.compose_LT(g("L_T"))
    lf = L.compose_LF(g("L_mse_f"), g("L_id_f"), g("L_h"), g("L_adv_f"), w)
    return L.compose_LG(lc, L.compose_LT(g("L_T")), lf)


def degrade_patches(patches: torch.Tensor, factor: int = 8) -> torch.Tensor:
    """Coarsely upsampled stand-in for a component: area-downsample then bilinear-upsample."""
    h, w = patches.shape[-2:]
    small = F.adaptive_avg_pool2d(patches, (max(1, h // factor), max(1, w // factor)))
    return F.interpolate(small, size=(h, w), mode="bilinear", align_corners=False)


def _to_nchw(images) -> torch.Tensor:
    return torch.from_numpy(np.stack(images).transpose(0, 3, 1, 2).astype(np.float32))


class Trainer:
    """Holds the model, optimizers and data tensors for one stage."""

    def __init__(
        self,
        cfg: TrainConfig,
        data: Dataset,
        comps: ComponentSet | None = None,
        init: Checkpoint | None = None,
        model_cfg: ModelConfig | None = None,
        embedder=None,
    ):
        self.cfg = cfg
        self._check_prerequisites(init)
        torch.manual_seed(cfg.seed)
        if init is not None:
            if model_cfg is not None and model_cfg.hash() != init.config_hash:
                warnings.warn(
                    f"model config hash {model_cfg.hash()} differs from checkpoint hash {init.config_hash}; "
                    "continuing with the checkpoint's architecture",
                    stacklevel=2,
                )
            self.model = init.build_model()
        else:
            self.model = VividModel(model_cfg)
        self.mcfg = self.model.cfg
        self.embedder = embedder if embedder is not None else self.mcfg.make_embedder()
        self.stages_done = list(init.stages_done) if init else []
        self.step_count = 0

        if len(data) == 0:
            raise ConfigError("training needs a non-empty dataset")
        self.data = data
        if init is None or not init.stages_done:
            self.model.set_mean_landmarks(data.mean_landmarks())
        self.lr = _to_nchw([p.lr for p in data])
        self.hr = _to_nchw([p.hr for p in data])
        self.landmarks = [p.landmarks for p in data]
        self.templates = self.model.templates(self.landmarks)
        hs = self.model.heatmap_size
        factor = hs / 128
        self.gt_heatmaps = torch.from_numpy(
            np.stack([
                render_heatmaps(scale_landmarks(lm, factor), (hs, hs), self.mcfg.heatmap_sigma * factor)
                for lm in self.landmarks
            ]).astype(np.float32)
        )
        if cfg.stage == 2:
            comps = comps or build_component_set(data, self.mcfg.crop_spec)
            self.patches = {c: _to_nchw(comps.patches[c]) for c in COMPONENTS}
            self.patch_inputs = {c: degrade_patches(self.patches[c]) for c in COMPONENTS}
            self.n_items = len(comps)
        else:
            self.n_items = len(data)

        self.weights = cfg.effective_weights(int(np.prod(self.hr.shape[1:])))
        self.rng = np.random.default_rng(cfg.seed)
        self._order: list[int] = []
        self._build_optimizers()
        if init is not None and init.last_stage == cfg.stage:
            self._resume(init)
        self.report = TrainReport(cfg.stage, self.enabled_terms())

    # -- setup ---------------------------------------------------------------

    def _check_prerequisites(self, init):
        if self.cfg.stage == 3:
            done = set(init.stages_done) if init else set()
            missing = [s for s in (1, 2) if s not in done]
            if missing:
                names = " and ".join(f"stage {s}" for s in missing)
                raise ConfigError(f"stage 3 requires completed stage 1 and stage 2 checkpoints; missing {names}")

    def _adam(self, groups):
        return torch.optim.Adam(groups, betas=(self.cfg.adam_beta1, self.cfg.adam_beta2), eps=self.cfg.adam_eps)

    def _build_optimizers(self):
        m, cfg = self.model, self.cfg
        self.optimizers = {}
        if cfg.stage == 1:
            self.generator_params = list(m.coarse.parameters())
            self.critic_params = list(m.coarse_d.parameters()) if cfg.use_coarse_d else []
            self.optimizers["generator"] = self._adam([{"params": self.generator_params, "lr": cfg.lr_other, "name": "coarse"}])
        elif cfg.stage == 2:
            self.generator_params = list(m.touchup.parameters())
            self.critic_params = []
            self.optimizers["generator"] = self._adam([{"params": self.generator_params, "lr": cfg.lr_other, "name": "touchup"}])
        else:
            other = list(m.coarse.parameters())
            if self.mcfg.prior_mode == "touchup":
                other += list(m.touchup.parameters())
            fine = list(m.fine.parameters())
            self.generator_params = fine + other
            self.optimizers["generator"] = self._adam([
                {"params": fine, "lr": cfg.lr_fine_integration, "name": "fine_integration"},
                {"params": other, "lr": cfg.lr_other, "name": "other"},
            ])
            self.critic_params = []
            if cfg.use_coarse_d:
                self.critic_params += list(m.coarse_d.parameters())
            if cfg.use_fine_d:
                self.critic_params += list(m.fine_d.parameters())
        if self.critic_params:
            self.optimizers["critic"] = self._adam([{"params": self.critic_params, "lr": cfg.lr_other, "name": "critics"}])

    def _resume(self, init: Checkpoint):
        for name, state in init.optimizer_state.items():
            if name in self.optimizers:
                self.optimizers[name].load_state_dict(state)
        if init.sampler_state:
            self.rng.bit_generator.state = init.sampler_state["bit_generator"]
            self._order = list(init.sampler_state["order"])
        self.step_count = init.step

    def enabled_terms(self):
        cfg, mcfg = self.cfg, self.mcfg
        if cfg.stage == 2:
            return ["L_T", "L_G"]
        terms = ["L_mse_c"]
        terms += ["L_sys"] if cfg.use_sym_loss else []
        terms += ["L_id_c"] if cfg.use_id_loss else []
        terms += ["L_adv_c", "L_D_coarse"] if cfg.use_coarse_d else []
        if cfg.stage == 3:
            terms += ["L_T"] if mcfg.prior_mode == "touchup" else []
            terms += ["L_mse_f"]
            terms += ["L_id_f"] if cfg.use_id_loss else []
            terms += ["L_h"] if mcfg.use_component_module else []
            terms += ["L_adv_f", "L_D_fine"] if cfg.use_fine_d else []
        return terms + ["L_G"]

    # -- batching --------------------------------------------------------------

    def next_indices(self) -> list[int]:
        bs = min(self.cfg.batch_size, self.n_items)
        if len(self._order) < bs:
            self._order += [int(i) for i in self.rng.permutation(self.n_items)]
        idx, self._order = self._order[:bs], self._order[bs:]
        return idx

    def batch(self, idx):
        if self.cfg.stage == 2:
            return {"idx": idx, "inputs": {c: self.patch_inputs[c][idx] for c in COMPONENTS},
                    "targets": {c: self.patches[c][idx] for c in COMPONENTS}}
        return {
            "idx": idx,
            "lr": self.lr[idx],
            "hr": self.hr[idx],
            "landmarks": [self.landmarks[i] for i in idx],
            "templates": [self.templates[i] for i in idx],
            "heatmaps": self.gt_heatmaps[idx],
        }

    # -- steps -------------------------------------------------------------------

    def forward(self, batch) -> dict:
        m = self.model
        if self.cfg.stage == 1:
            coarse_hr, thetas = m.coarse(batch["lr"])
            return {"coarse": coarse_hr, "thetas": thetas}
        if self.cfg.stage == 2:
            return {"refined": {c: m.touchup[c](batch["inputs"][c]) for c in COMPONENTS}}
        coarse_hr, thetas = m.coarse(batch["lr"])
        prior, refined = m.prior(coarse_hr, batch["templates"], batch["hr"])
        fine_hr, heatmaps = m.fine(coarse_hr, prior)
        return {"coarse": coarse_hr, "thetas": thetas, "prior": prior, "refined": refined,
                "fine": fine_hr, "heatmaps": heatmaps}

    def critic_step(self, batch, out) -> dict:
        if not self.critic_params:
            return {}
        m, cfg = self.model, self.cfg
        for p in self.critic_params:
            p.requires_grad_(True)
        opt = self.optimizers["critic"]
        opt.zero_grad(set_to_none=True)
        terms, total = {}, 0.0
        if cfg.use_coarse_d:
            terms["L_D_coarse"] = L.loss_d_logits(m.coarse_d.logits(batch["hr"]), m.coarse_d.logits(out["coarse"].detach()))
            total = total + terms["L_D_coarse"]
        if cfg.stage == 3 and cfg.use_fine_d:
            terms["L_D_fine"] = L.loss_d_logits(m.fine_d.logits(batch["hr"]), m.fine_d.logits(out["fine"].detach()))
            total = total + terms["L_D_fine"]
        self._check_finite(terms)
        total.backward()
        opt.step()
        return {k: v.item() for k, v in terms.items()}

    def generator_terms(self, batch, out) -> dict:
        m, cfg, emb = self.model, self.cfg, self.embedder
        if cfg.stage == 2:
            t = {"L_T": torch.stack([L.loss_mse(out["refined"][c], batch["targets"][c]) for c in COMPONENTS]).mean()}
            t["L_G"] = L.compose_LT(t["L_T"])
            return t
        for p in self.critic_params:
            p.requires_grad_(False)
        hr, coarse_hr = batch["hr"], out["coarse"]
        t = {"L_mse_c": L.loss_mse(coarse_hr, hr)}
        if cfg.use_sym_loss:
            t["L_sys"] = L.loss_sym(coarse_hr)
        if cfg.use_id_loss:
            t["L_id_c"] = L.loss_id(coarse_hr, hr, emb)
        if cfg.use_coarse_d:
            t["L_adv_c"] = L.loss_adv_logits(m.coarse_d.logits(coarse_hr))
        zero = coarse_hr.new_zeros(())
        lc = L.compose_LC(t["L_mse_c"], t.get("L_sys", zero), t.get("L_id_c", zero), t.get("L_adv_c", zero), self.weights)
        if cfg.stage == 1:
            t["L_G"] = lc
            return t
        if out["refined"]:
            t["L_T"] = torch.stack([
                L.loss_mse(out["refined"][c], crop_batch(hr, batch["templates"], c)) for c in out["refined"]
            ]).mean()
        fine_hr = out["fine"]
        t["L_mse_f"] = L.loss_mse(fine_hr, hr)
        if cfg.use_id_loss:
            t["L_id_f"] = L.loss_id(fine_hr, hr, emb)
        if self.mcfg.use_component_module:
            t["L_h"] = sum(L.loss_heatmap(h, batch["heatmaps"]) for h in out["heatmaps"])
        if cfg.use_fine_d:
            t["L_adv_f"] = L.loss_adv_logits(m.fine_d.logits(fine_hr))
        lf = L.compose_LF(t["L_mse_f"], t.get("L_id_f", zero), t.get("L_h", zero), t.get("L_adv_f", zero), self.weights)
        t["L_G"] = L.compose_LG(lc, L.compose_LT(t.get("L_T", zero)), lf)
        return t

    def generator_step(self, batch, out) -> dict:
        opt = self.optimizers["generator"]
        opt.zero_grad(set_to_none=True)
        terms = self.generator_terms(batch, out)
        self._check_finite(terms)
        terms["L_G"].backward()
        opt.step()
        for p in self.critic_params:
            p.requires_grad_(True)
        return {k: v.item() for k, v in terms.items()}

    def _check_finite(self, terms):
        for name, value in terms.items():
            value = float(value.detach()) if torch.is_tensor(value) else float(value)
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss term {name} ({value}) at step {self.step_count}")

    def train_step(self) -> dict:
        batch = self.batch(self.next_indices())
        out = self.forward(batch)
        row = {"step": self.step_count}
        row.update(self.critic_step(batch, out))
        row.update(self.generator_step(batch, out))
        self.report.append(row)
        self.step_count += 1
        return row

    def run(self, run_dir=None, log_every: int = 50) -> tuple[Checkpoint, TrainReport]:
        self.model.train()
        for i in range(self.cfg.steps):
            row = self.train_step()
            if log_every and (i % log_every == 0 or i == self.cfg.steps - 1):
                log.info("stage %d step %d %s", self.cfg.stage, row["step"],
                         " ".join(f"{k}={v:.4g}" for k, v in row.items() if k != "step"))
            if run_dir and self.cfg.checkpoint_every and (i + 1) % self.cfg.checkpoint_every == 0:
                save_checkpoint(self.checkpoint(final=False), Path(run_dir) / f"checkpoint_step{self.step_count}.pt")
        ckpt = self.checkpoint(final=True)
        if run_dir:
            save_checkpoint(ckpt, Path(run_dir) / "checkpoint.pt")
            self.report.to_csv(Path(run_dir) / "train_report.csv")
        return ckpt, self.report

    def checkpoint(self, final=True) -> Checkpoint:
        done = sorted(set(self.stages_done) | ({self.cfg.stage} if final else set()))
        return Checkpoint(
            model_config=self.mcfg.to_dict(),
            model_state={k: v.detach().clone() for k, v in self.model.state_dict().items()},
            optimizer_state={k: opt.state_dict() for k, opt in self.optimizers.items()},
            step=self.step_count,
            stages_done=done,
            last_stage=self.cfg.stage,
            seed=self.cfg.seed,
            sampler_state={"bit_generator": self.rng.bit_generator.state, "order": list(self._order)},
            config_hash=self.mcfg.hash(),
        )


def run_stage(cfg: TrainConfig, data: Dataset, comps: ComponentSet | None = None, init: Checkpoint | None = None,
              model_cfg: ModelConfig | None = None, embedder=None, run_dir=None):
    trainer = Trainer(cfg, data, comps, init, model_cfg, embedder)
    return trainer.run(run_dir)
