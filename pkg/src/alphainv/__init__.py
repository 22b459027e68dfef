"""Scale-robust differentiable volume rendering.

Local segment opacity alpha = 1 - exp(-sigma * d) is a property of geometry,
not of the length unit: scaling every distance by k and every density by 1/k
leaves all alphas, weights and renders unchanged.  This package implements
that invariance exactly (log-space density parameterization) together with a
discretization-agnostic high-transmittance initialization, plus the toy
fields, analytic scenes, training harness and diagnostic reports used to
verify both properties end to end.
"""

__version__ = "0.1.0"

from .activations import (
    ActivationConfig, ActivationKind, alpha_direct, dalpha_dx, required_sigma,
    sigma, sigmoid, softplus,
)
from .errors import (
    AlphainvError, BracketError, CapabilityError, DensityOverflowError, DomainError,
    SceneValidationError,
)
from .fields import (
    Bounds, FieldKind, FieldParams, backward, backward_many, init_field, load_field,
    measure_raw_stats, query, query_many, save_field, scale_field_density,
)
from .initialization import (
    InitSpec, estimate_mean_activated, exp_init_offset, init_activation_config,
    length_for_target_mean, merged_alpha_inputs, numeric_init_offset,
    simulate_init_transmittance,
)
from .reports import (
    PercentileSummary, RatioMap, SurfaceMap, density_ratio_map, init_alpha_histogram,
    required_sigma_table, surface_stats, volume_stats,
)
from .sampling import Contraction, SamplerKind, SamplerSpec, contract, sample_ray
from .scenes import (
    CameraSpec, SceneSpec, bundled_scene, bundled_scene_names, camera_rays,
    ground_truth_render, load_scene, render_scene_image, scale_scene, scene_from_dict,
)
from .training import (
    Adam, SweepReport, SweepRow, TrainConfig, TrainResult, psnr, scaling_sweep, train,
)
from .volrend import (
    Ray, RaySamples, RenderOutput, alpha_from_sigma, composite, composite_backward,
    render_ray, transmittance_log_space,
)
