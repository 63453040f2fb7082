from .posing import PosingError, pose_grasp, solve_tip_ik, surface_point_at
from .surfaces import Cylinder, Ellipsoid, RoundedBox, Surface, make_surface
from .world import ContactRecord, TactileReading, World

__all__ = [
    "ContactRecord",
    "Cylinder",
    "Ellipsoid",
    "PosingError",
    "RoundedBox",
    "Surface",
    "TactileReading",
    "World",
    "make_surface",
    "pose_grasp",
    "solve_tip_ik",
    "surface_point_at",
]
