"""Superpixel camera emulation from sparse single-photon measurements."""

from .core import (BlurKernel, BudgetError, BudgetReport, GridSpec, SuperCam, SuperpixelSet,
                   derive_blur_kernel, gaussian_blur, measure_seeds, nearest_fill, partition_grid,
                   run_supercam, seed_cells)
from .metrics import (MetricReport, boundary_map, boundary_precision_recall, depth_metrics, evaluate,
                      miou_error, under_segmentation_error)
from .snic import RestrictedSNIC, allocate_budget, downsample, render_and_upsample, run_snic_restricted, snic_segment
from .spad import (CubeLayout, PhotonCube, SensorConfig, SensorPlane, SPADSensor, compute_exposure_scale,
                   expose_pixel, load_photon_cube, recover_intensity, sample_photon_cube, write_photon_cube)

__version__ = "0.1.0"
