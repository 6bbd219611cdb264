"""Losses, local statistics, structure matching and evaluation metrics for deterministic/stochastic super-resolution."""
from .config import (ConfigError, DetLossWeights, GaborConfig, MatchParams, MetricConfig, RunConfig,
                     StatConfig)
from .gabor import GaborBank, GaborParams, apply_bank, build_bank
from .localstats import (FeaturePyramid, corr_loss, corr_loss_grad, corr_weights, extract_features_builtin,
                         gram_loss, gram_loss_grad, load_features, local_corr, local_gram, rectification_loss)
from .losses import (LossReport, color_loss, deterministic_loss, ggrad_loss, guided_regression_loss,
                     orientation_loss)
from .metrics import TTestResult, paired_t_test, psnr_y, ssim_y
from .resample import ResizeSpec, bicubic_baseline, bicubic_resize, degrade
from .structure import CurvePrimitive, CurveSet, StructMask, closeness, match_curves, rasterize_mask
from .tensor import FeatureMap, extract_component, load_image, rgb_to_ycbcr, save_image

__version__ = "0.1.0"
