"""Coarse-to-fine pupil detection with two small CNNs."""
from ._accel import USE_NUMBA
from .datagen import (PupilLabel, SynthSpec, gen_coarse_samples, gen_fine_samples,
                      load_labels, split_dataset, subsample_fine, synth_eye)
from .evaluation import (EvalCurve, FlopBreakdown, compare_runs, detection_rate_curve,
                         dump_filters, flop_accounting, mac_count)
from .imaging import (GrayImage, PatchSpec, bicubic_resize, extract_patch, load_pgm,
                      save_pgm)
from .nn import (CnnConfig, CnnModel, Gradients, TrainingSample, compute_gradients,
                 forward, gradient_check, init_model, load_model, save_model, train)
from .pipeline import (DetectionResult, PipelineConfig, coarse_detect, detect, fine_detect,
                       map_coarse_to_original, refine_ray)
from .presets import PRESETS, get_preset

__version__ = "0.1.0"
