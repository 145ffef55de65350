"""Dynamic-scene LiDAR augmentation: extract annotated objects and insert them
into multi-frame scenes with motion continuity, road checks and dynamic
collision avoidance."""

from .errors import DaugError
from .extraction import ExtractedObject, build_object_bank, extract_object
from .geometry import CoordFrame, OrientedBox, PointCloud, Pose, compose_pose, invert_pose, point_in_box, points_in_box, transform_cloud
from .insertion import AugmentationPlan, Placement, augment_scene, boxes_collide, dynamic_collision
from .maps import CroppedMap, PolygonLayerMap, RasterMap, crop_and_rotate, is_road_valid, layer_filter_valid, pixelize
from .scene_io import Frame, Scene, read_manifest, write_manifest

__version__ = "0.1.0"
