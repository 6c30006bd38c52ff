"""splatseg: desk-scale 3D Gaussian splatting with per-Gaussian
segmentation features — training, 2D instance mask rendering, and
similarity-based 3D object extraction."""

from .core_model import (Camera, FEATURE_DIM, Gaussian, SceneModel,
                         clone_subset, covariance3d, look_at_camera)
from .errors import DataError, NumericalError, ParseError, SplatsegError
from .losses import (LossConfig, contrastive_clustering_loss, rendering_loss,
                     spatial_regularization, ssim, total_loss)
from .metrics import boundary_iou, iou, matched_mean_iou
from .rasterizer import (ParamGrads, Projected2DGaussian, RenderOutput,
                         project, rasterize, rasterize_backward,
                         set_num_threads)
from .segmentation import (FeaturePrompt, extract_object_3d,
                           feature_prompt_from_mask, match_mask_to_instance,
                           render_instance_masks, select_by_similarity)
from .synthdata import SyntheticScene, SyntheticSpec, generate
from .trainer import TrainConfig, initialize, train

__version__ = "0.1.0"

__all__ = [
    "Camera", "DataError", "FEATURE_DIM", "FeaturePrompt", "Gaussian",
    "LossConfig", "NumericalError", "ParamGrads", "ParseError",
    "Projected2DGaussian", "RenderOutput", "SceneModel", "SplatsegError",
    "SyntheticScene", "SyntheticSpec", "TrainConfig", "boundary_iou",
    "clone_subset", "contrastive_clustering_loss", "covariance3d",
    "extract_object_3d", "feature_prompt_from_mask", "generate", "initialize",
    "iou", "look_at_camera", "match_mask_to_instance", "matched_mean_iou",
    "project", "rasterize", "rasterize_backward", "render_instance_masks",
    "rendering_loss", "select_by_similarity", "set_num_threads",
    "spatial_regularization", "ssim", "total_loss", "train",
]
