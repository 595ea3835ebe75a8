"""FMCW TDM-MIMO radar toolkit: scene simulation, point-cloud extraction,
3D ego-motion estimation with Doppler-ambiguity resolution, and notch-filter
static-background removal."""
from .config import AdcWindowWarning, ConfigError, RadarConfig, derived_limits, preset
from .dsp import (CfarParams, Detection, ExtractParams, ImageParams, RadarImage, cfar_2d, detections_to_array,
                  effective_v_max, extract_pointcloud, make_image, tdm_fold_correction)
from .ego import EgoMotionEstimate, EgoMotionError, EgoParams, NoConsensusError, OdrWeights, RansacParams, estimate
from .notch import NotchFilterSpec, profile_for_image, remove_background, remove_background_2d
from .simulate import EgoTrajectory, PointTarget, Scene, ground_truth_pointcloud, synthesize_frame

__version__ = "0.1.0"
