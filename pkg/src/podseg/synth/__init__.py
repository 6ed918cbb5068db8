"""OOD-augmented dataset synthesis."""

from .assets import OodAsset, builtin_library, load_assets, make_asset, save_assets, split_library
from .bins import (
    DepthBin,
    DepthBinTable,
    Placement,
    PlacementPrior,
    build_depth_bins,
    build_depth_bins_from_maps,
    place_and_scale,
    resolve_paired_class,
)
from .blend import BlendParams, apply_blend, blend_composite, sample_blend_params
from .config import SynthConfig
from .inject import InjectionReport, inject_ood
from .scenes import make_street_scene
from .split import (
    check_disjoint,
    curriculum_order,
    curriculum_schedule,
    image_rng,
    synthesize_benchmark,
    synthesize_split,
)
