import numpy as np
import pytest

from faceverify.linalg import make_rng


def make_blob_images(n=500, size=32, num_classes=10, seed=0):
    """Ten-class image set: one Gaussian blob per class on a ring, with
    jittered centers and pixel noise.  Easy enough to learn at desk scale,
    hard enough that an untrained net sits at chance."""
    rng = make_rng(seed)
    angles = np.linspace(0, 2 * np.pi, num_classes, endpoint=False)
    centers = np.stack(
        [size / 2 + (size / 3) * np.cos(angles), size / 2 + (size / 3) * np.sin(angles)], axis=1
    )
    yy, xx = np.mgrid[0:size, 0:size]
    images = np.empty((n, size, size, 1))
    labels = rng.integers(0, num_classes, size=n)
    for k in range(n):
        cy, cx = centers[labels[k]]
        cy += rng.normal(0, 1.0)
        cx += rng.normal(0, 1.0)
        img = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 3.0**2))
        img += rng.normal(0, 0.05, img.shape)
        images[k, :, :, 0] = np.clip(img, 0, 1)
    return images, labels


def central_diff_gradient(f, x, eps=1e-5):
    """Central finite-difference gradient of scalar f w.r.t. array x,
    computed entry by entry (x is perturbed in place and restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.ravel()
    gflat = grad.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        hi = f()
        flat[k] = orig - eps
        lo = f()
        flat[k] = orig
        gflat[k] = (hi - lo) / (2 * eps)
    return grad


def max_relative_error(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale))


@pytest.fixture(scope="session")
def blob_dataset():
    return make_blob_images()
