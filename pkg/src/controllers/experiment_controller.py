"""Controller behind the ``fps`` commands: wires configuration, clients and services."""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import torch

from src.clients.checkpoint_client import resolve_checkpoint
from src.clients.dataset_client import (
    read_dataset,
    read_distance_map,
    write_dataset,
    write_distance_map,
)
from src.clients.fpsd_client import read_array, write_array
from src.models.config_models import ExperimentConfig
from src.models.domain_models import ParameterMaps, SamplePair
from src.services import dti_service, eval_service
from src.services.kspace_service import WDFPPerturber, build_distance_map
from src.services.phantom_service import PhantomService
from src.services.training_service import load_state, predict_maps, train_loop
from src.utils.errors import InvalidInputError, RegressionUndefinedError
from src.utils.graymap import read_tsv, write_graymap, write_tsv

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

REPORT_SUFFIXES = ("_metrics.tsv", "_regression.tsv", "_auc.tsv")
METRIC_COLUMNS = ["id", "quantity", "mae", "ssim", "psnr", "nrmse", "mask_policy"]
REGRESSION_COLUMNS = ["quantity", "slope", "intercept", "r2", "bias", "loa_low", "loa_high", "n"]
DTYPES = {"float32": torch.float32, "float64": torch.float64}


class ExperimentController:
    """One experiment configuration and the commands that run against it."""

    def __init__(self, config: ExperimentConfig, dtype: str = "float32"):
        if dtype not in DTYPES:
            raise InvalidInputError(f"Unsupported dtype '{dtype}' (float32 or float64)")
        self.config = config
        self.dtype = DTYPES[dtype]

    # ------------------------------------------------------------------
    # Data
    # ------------------------------------------------------------------

    def gen_data(self, out: PathLike, seed: Optional[int] = None) -> Dict[str, int]:
        """Write the synthetic, real and validation splits under ``out``."""
        phantom = self.config.phantom
        if seed is not None:
            phantom = phantom.model_copy(update={"seed": seed})
        splits = PhantomService(phantom, self.config.shift).generate_all()
        counts = {name: write_dataset(pairs, Path(out) / name) for name, pairs in splits.items()}
        logger.info(f"Generated datasets under {out}: {counts}")
        return counts

    def distmap(self, syn: PathLike, real: PathLike, out: PathLike) -> None:
        """Offline distance map between two dataset directories."""
        syn_pairs = read_dataset(syn)
        real_pairs = read_dataset(real)
        dmap = build_distance_map([p.input for p in syn_pairs], [p.input for p in real_pairs])
        write_distance_map(dmap, out)

    def perturb(self, data: PathLike, dmap_path: PathLike, out: PathLike, seed: Optional[int] = None) -> int:
        """Write WDFP-perturbed copies of a dataset plus per-image perturbation norms."""
        cfg = self.config.perturb
        if seed is not None:
            cfg = cfg.model_copy(update={"seed": seed})
        perturber = WDFPPerturber(read_distance_map(dmap_path), cfg)
        pairs = read_dataset(data)
        perturbed: List[SamplePair] = []
        norms = []
        for k, pair in enumerate(pairs):
            image = perturber.perturb(pair.input, 0, k)
            norm = float(np.linalg.norm(image.to_complex() - pair.input.to_complex()))
            logger.info(f"{pair.id}: perturbation norm {norm:.6g}")
            norms.append({"id": pair.id, "norm": norm})
            perturbed.append(pair.model_copy(update={"input": image}))
        count = write_dataset(perturbed, out)
        write_tsv(Path(out) / "perturbation_norms.tsv", norms, ["id", "norm"])
        return count

    # ------------------------------------------------------------------
    # Training and inference
    # ------------------------------------------------------------------

    def train(
        self,
        data: PathLike,
        out: PathLike,
        dmap_path: Optional[PathLike] = None,
        iters: Optional[int] = None,
        resume: Optional[PathLike] = None,
        seed: Optional[int] = None,
    ) -> int:
        """Run the training loop on ``data/synthetic`` and ``data/real``. Returns the final iteration."""
        train_cfg = self.config.train_config()
        updates = {}
        if iters is not None:
            updates["total_iterations"] = iters
        if seed is not None:
            updates["seed"] = seed
        if updates:
            train_cfg = train_cfg.model_copy(update=updates)

        synthetic = read_dataset(Path(data) / "synthetic")
        real_dir = Path(data) / "real"
        real = read_dataset(real_dir) if (real_dir / "manifest.tsv").exists() else []
        dmap = read_distance_map(dmap_path) if dmap_path is not None else None
        state, reports = train_loop(
            synthetic, real, dmap, train_cfg, self.config.network, out, resume=resume, dtype=self.dtype
        )
        if reports:
            logger.info(f"Final loss {reports[-1].total:.6g} at iteration {state.iteration}")
        return state.iteration

    def load_model(self, checkpoint: PathLike) -> torch.nn.Module:
        """Inference network of a checkpoint (teacher, or student for source-only runs)."""
        directory = resolve_checkpoint(checkpoint)
        state = load_state(directory, self.config.network, self.config.train_config(), self.dtype)
        logger.info(f"Loaded {state.mode.value} checkpoint {directory} at iteration {state.iteration}")
        return state.eval_model()

    def predict(self, checkpoint: PathLike, pairs: List[SamplePair]) -> List[ParameterMaps]:
        return predict_maps(self.load_model(checkpoint), pairs)

    # ------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------

    def evaluate(self, checkpoint: PathLike, data: PathLike, out: PathLike) -> Path:
        """
        Per-sample T2/ADC metrics, head-mean regression and Bland-Altman, and map images.

        Returns:
            Path of the metrics table
        """
        name = Path(data).name
        out = Path(out)
        pairs = read_dataset(data)
        if not pairs:
            raise InvalidInputError(f"No samples in {data}")
        predictions = self.predict(checkpoint, pairs)

        rows = []
        means: Dict[str, List[List[float]]] = {"t2": [[], []], "adc": [[], []]}
        for pair, pred in zip(pairs, predictions):
            t2, adc = eval_service.map_metrics(pred, pair.target, self.config.eval)
            for quantity, report in (("t2", t2), ("adc", adc)):
                rows.append({"id": pair.id, "quantity": quantity, **report.model_dump()})
            head = pair.target.m0 > 0
            if head.any():
                for quantity in ("t2", "adc"):
                    means[quantity][0].append(float(getattr(pair.target, quantity)[head].mean()))
                    means[quantity][1].append(float(getattr(pred, quantity)[head].mean()))
        metrics_path = out / f"{name}_metrics.tsv"
        write_tsv(metrics_path, rows, METRIC_COLUMNS)

        regression_rows = []
        for quantity, (ref_means, pred_means) in means.items():
            try:
                stats = eval_service.regression_stats(ref_means, pred_means)
            except (InvalidInputError, RegressionUndefinedError) as e:
                logger.warning(f"Skipping {quantity} regression: {e}")
                continue
            regression_rows.append({"quantity": quantity, **stats.model_dump()})
        write_tsv(out / f"{name}_regression.tsv", regression_rows, REGRESSION_COLUMNS)

        first, first_pred = pairs[0], predictions[0]
        windows = {"t2": (self.config.eval.t2_window, "s"), "adc": (self.config.eval.adc_window, "mm^2/s")}
        for quantity, (window, unit) in windows.items():
            write_graymap(out / "maps" / f"{first.id}_{quantity}_pred.pgm", getattr(first_pred, quantity), window, quantity, unit)
            write_graymap(out / "maps" / f"{first.id}_{quantity}_ref.pgm", getattr(first.target, quantity), window, quantity, unit)

        logger.info(f"Evaluated {len(pairs)} samples from {data} -> {metrics_path}")
        return metrics_path

    def classify(self, data: PathLike, out: PathLike, checkpoint: Optional[PathLike] = None) -> float:
        """
        Lesion classification from ROI histogram features. Returns the AUC.

        Features come from predicted maps when a checkpoint is given, otherwise
        from the ground-truth maps.
        """
        name = Path(data).name
        out = Path(out)
        pairs = [p for p in read_dataset(data) if p.target.lesion_label is not None]
        if not pairs:
            raise InvalidInputError(f"No lesion samples in {data}")
        maps = self.predict(checkpoint, pairs) if checkpoint is not None else [p.target for p in pairs]
        records = [eval_service.record_from_maps(p.id, m, p.target) for p, m in zip(pairs, maps)]

        fit, scores, roc = eval_service.classify_cohort(records)
        write_tsv(out / f"{name}_cohort.tsv", eval_service.cohort_table(records, scores))
        write_tsv(
            out / f"{name}_roc.tsv",
            [{"fpr": float(f), "tpr": float(t)} for f, t in zip(roc.fpr, roc.tpr)],
            ["fpr", "tpr"],
        )
        write_tsv(
            out / f"{name}_auc.tsv",
            [{"auc": roc.auc, "n": len(records), "converged": fit.converged}],
            ["auc", "n", "converged"],
        )
        return roc.auc

    # ------------------------------------------------------------------
    # DTI
    # ------------------------------------------------------------------

    def dti_fit(
        self,
        out: PathLike,
        dwi: Optional[PathLike] = None,
        scheme_path: Optional[PathLike] = None,
        synth: bool = False,
        seed: int = 0,
        shape=(32, 32, 1),
    ) -> Path:
        """Fit tensors to a DWI stack (or a synthesized one) and write FA/MD/AD/RD maps."""
        out = Path(out)
        if synth:
            scheme = dti_service.default_scheme()
            field = dti_service.synth_tensor_field(seed, shape)
            signals = dti_service.synth_dwi(field, scheme, np.ones(field.shape))
            write_array(out / "dwi.fpsd", signals)
            dti_service.write_scheme(scheme, out / "scheme.txt")
        else:
            if dwi is None or scheme_path is None:
                raise InvalidInputError("dti-fit needs --dwi and --scheme, or --synth")
            scheme = dti_service.read_scheme(scheme_path)
            signals = read_array(dwi)

        field, s0, maps = dti_service.run_pipeline(signals, scheme)
        for key in ("fa", "md", "ad", "rd"):
            write_array(out / f"{key}.fpsd", getattr(maps, key))
        write_array(out / "s0.fpsd", s0)
        write_array(out / "quality_flags.fpsd", maps.quality_flags.astype(np.float32))

        if maps.fa.ndim == 3:
            middle = maps.fa.shape[-1] // 2
            write_graymap(out / "fa.pgm", maps.fa[..., middle], (0.0, 1.0), "fa", "")
            write_graymap(out / "md.pgm", maps.md[..., middle], (0.0, 3.2e-3), "md", "mm^2/s")

        summary = {
            key: float(np.mean(getattr(maps, key))) for key in ("fa", "md", "ad", "rd")
        }
        summary["flagged"] = int(np.count_nonzero(maps.quality_flags))
        path = out / "dti_metrics.tsv"
        write_tsv(path, [summary], ["fa", "md", "ad", "rd", "flagged"])
        return path

    # ------------------------------------------------------------------
    # Report
    # ------------------------------------------------------------------

    def report(self, inputs: PathLike, out: PathLike) -> int:
        """Collate every metrics, regression and AUC table under ``inputs`` into (file, column, mean)."""
        inputs = Path(inputs)
        files = sorted(p for p in inputs.rglob("*.tsv") if p.name.endswith(REPORT_SUFFIXES))
        rows = []
        for path in files:
            table = read_tsv(path)
            if not table:
                continue
            for column in table[0]:
                try:
                    values = [float(row[column]) for row in table]
                except (KeyError, ValueError):
                    continue
                rows.append(
                    {"file": str(path.relative_to(inputs)), "column": column, "mean": float(np.mean(values))}
                )
        write_tsv(out, rows, ["file", "column", "mean"])
        logger.info(f"Collated {len(files)} tables into {out}")
        return len(rows)
