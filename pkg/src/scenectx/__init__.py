"""Scene-decoupled, camera-controlled video generation at desk scale.

Submodules: ``geometry`` (poses, trajectories, pose errors), ``panorama``
(equirectangular projection), ``trajectory`` (movement taxonomy), ``scene`` /
``render`` / ``dataset`` (paired synthetic data), ``encoder`` (implicit scene
features), ``model`` (context-conditioned transformer; imports torch),
``metrics`` and ``cli``.
"""

from ._backend import BACKEND  # noqa: F401
from .errors import *  # noqa: F401,F403
from .geometry import CameraPose, Trajectory, load_trajectory, look_at, pose_error, save_trajectory  # noqa: F401
from .metrics import evaluate, psnr, ssim  # noqa: F401
from .panorama import Panorama, equirect_to_perspective, scene_context_from_panorama  # noqa: F401

__version__ = "0.1.0"
