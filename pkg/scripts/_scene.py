"""Single-point scenes on the synthetic camera rig, shared by the experiment scripts."""
import numpy as np

from mvpose.camera import project
from mvpose.density import GaussianDensity, KeypointObservation
from mvpose.synth import CameraPlacementConfig, VolumeSpec, place_cameras
from mvpose.triangulation import ViewObservation


def scene(rng, n_views, noise_px=2.0):
    """Cameras, a target point near the subject, and clean noisy pixels (one per view)."""
    vol = VolumeSpec()
    cams = place_cameras(n_views, vol, CameraPlacementConfig(), rng)
    U = np.asarray(vol.center) + rng.normal(0, 300, 3)
    pix = [project(U, c) + rng.normal(0, noise_px, 2) for c in cams]
    return cams, U, pix


def observations(cams, pix, sigmas, model=None):
    model = GaussianDensity() if model is None else model
    return [ViewObservation(c, KeypointObservation(p, [s, s], model)) for c, p, s in zip(cams, pix, sigmas)]
