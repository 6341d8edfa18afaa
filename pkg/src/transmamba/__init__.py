"""Dual-branch spectral-Transformer / Mamba single-image deraining toolkit."""

import os as _os

# Pin BLAS to one thread (unless the user chose otherwise) so training runs
# are bit-reproducible; must happen before numpy initializes its backend.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

from .tensor import Tensor, ShapeError, no_grad  # noqa: E402
from .spectral import (ComplexPlane, MeshIndex, band_reorganize, band_restore,  # noqa: E402
                       band_swap, build_mesh_index, complex_to_real, fft2, ifft2,
                       real_to_complex, spectral_filter)
from .network import (ModelConfig, TransMamba, describe, load_checkpoint,  # noqa: E402
                      save_checkpoint, DESK_PRESET, PAPER_PRESET)
from .losses import (LossWeights, coherence, coherence_loss, l1_loss, psnr,  # noqa: E402
                     ssim, total_loss)
from .data import (RainPair, RainRecipe, flip_augment, generate_dataset,  # noqa: E402
                   load_paired_folder, make_clean_image, random_patch, synthesize_rain)
from .config import RunConfig, load_run_config, preset  # noqa: E402
from .train import AdamW, adamw_step, evaluate, lr_at, train  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "Tensor", "ShapeError", "no_grad",
    "ComplexPlane", "MeshIndex", "fft2", "ifft2", "complex_to_real", "real_to_complex",
    "build_mesh_index", "band_reorganize", "band_restore", "spectral_filter", "band_swap",
    "ModelConfig", "TransMamba", "describe", "save_checkpoint", "load_checkpoint",
    "DESK_PRESET", "PAPER_PRESET",
    "LossWeights", "l1_loss", "coherence", "coherence_loss", "total_loss", "psnr", "ssim",
    "RainPair", "RainRecipe", "synthesize_rain", "random_patch", "flip_augment",
    "load_paired_folder", "generate_dataset", "make_clean_image",
    "RunConfig", "preset", "load_run_config",
    "AdamW", "adamw_step", "train", "evaluate", "lr_at",
]
