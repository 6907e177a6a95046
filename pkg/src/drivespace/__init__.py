"""All-weather LiDAR + camera + HD-map perception for drivable space."""

from .cloud import (LidarPoint, OdometrySample, PointCloud,
                    concatenate_clouds, motion_compensate, voxel_downsample)
from .clustering import (NOISE, ClusterSet, ScanPattern, adaptive_dbscan,
                         eps_at, min_pts_at, points_per_line)
from .config import PipelineConfig, default_config, load_config
from .drivable import (ClassRule, DrivableSpace, EgoState, OccupancyGrid,
                       RoadContext, build_occupancy, classify_road_context,
                       drivable_iou, expand_safety, extract_boundary)
from .fusion import (CameraModel, ClassPrior, DepthEstimate, Detection2D,
                     FusedObject, association_cost, estimate_depth_height,
                     estimate_depth_width, fuse_depth, match, project_point)
from .ground import (CurbModel, GroundConfig, PlaneModel, fit_curb,
                     fit_ground_plane, partition_grids, refine_obstacle_flags,
                     run_ground_removal, select_curb_candidates)
from .hdmap import HdMap, crop_to_roi, map_to_vehicle_frame
from .lanes import LanePoint3D, lift_lane_points
from .metrics import compute_detection_metrics, evaluate_frame
from .pipeline import FrameData, process_frame, run_pipeline, scene_to_frame
from .synth import (BoxSpec, SceneSpec, generate_scene, inject_precipitation,
                    sample_scene)
from .transforms import RigidTransform

__version__ = "0.1.0"
