"""Homography-slab camera pose loss, baseline pose-regression losses, exact
forward-mode gradients, and a desk-scale pose-refinement harness."""

__version__ = "0.1.0"

from .geometry import (
    Homography,
    Intrinsics,
    InvalidDepthError,
    InvalidInputError,
    PointAtInfinity,
    Pose,
    RelativePose,
    angle_between,
    homography,
    project,
    quat_to_rotmat,
    relative_pose,
)
from .losses import (
    LossHyperParams,
    SlabParams,
    geometric_loss,
    homography_loss,
    homography_loss_closed,
    homography_loss_numeric,
    homoscedastic_loss,
    max_error_loss,
    posenet_loss,
    scalar_form_oracle,
    sensor_weighted_reproj,
    single_plane_error,
)
from .diffgrad import (
    GradReport,
    LossContext,
    evaluate_with_grad,
    finite_diff_grad,
    grad_report,
)
from .scene import (
    DepthSlab,
    Frame,
    Scene,
    global_slab,
    local_slabs,
    parse_points,
    parse_pose_list,
    point_depth,
    synth_scene,
)
from .optim import (
    OptimConfig,
    RunRecord,
    adam_update,
    landscape_sweep,
    mean_reproj_distance,
    optimize_poses,
    pct_within,
)
