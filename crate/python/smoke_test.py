"""Quick end-to-end check of the Python bindings.

Build first:  pip install --no-build-isolation ./crates/python
"""

import json
import math
import os
import tempfile

import anova_denoise as ad


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    clean = ad.synthetic_scene(12, 14)
    assert (clean.height, clean.width, len(clean)) == (12, 14, 168)
    noisy = ad.add_noise(clean, 30.0, seed=1)
    assert ad.mse(noisy, clean) > 100.0

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "noisy.pgm")
        ad.save_pgm(noisy, path)
        back = ad.load_pgm(path)
        assert back.height == 12 and back.width == 14
        try:
            ad.load_pgm(os.path.join(tmp, "missing.pgm"))
        except OSError:
            pass
        else:
            raise AssertionError("missing file did not raise")

    # exact and fast Gauss sums agree
    pts = [float((7 * i) % 255) for i in range(300)]
    alpha = [math.sin(i) for i in range(100)]
    fast = ad.gauss_transform(3, pts, pts, alpha, 30.0)
    exact = ad.gauss_transform(3, pts, pts, alpha, 30.0, fast=False)
    scale = max(abs(v) for v in exact)
    assert max(abs(a - b) for a, b in zip(fast, exact)) <= 1e-5 * scale

    k = ad.Kernel(noisy, sigma=30.0, mode="exact")
    assert k.dim == 168
    ones = [1.0] * k.dim
    assert max(abs(v) for v in k.laplacian(ones)) < 1e-10
    assert all(close(a, b, 1e-12) for a, b in zip(k.apply(ones), k.degree()))

    r = k.denoise(noisy, 0.3, mu=1e-2)
    assert r["converged"], r["relative_residual"]
    assert close(sum(r["pixels"]) / k.dim, noisy.mean(), 1e-8)
    assert ad.ssim(r["image"], clean) > ad.ssim(noisy, clean)

    b = ad.spectral_bounds(ad.synthetic_scene(6, 7), 1e-2, mu=1.0)
    assert b["all_passed"], b["failures"]

    m = ad.brent_minimize(lambda x: (x - 0.3) ** 2, 0.0, 1.0)
    assert m["converged"] and close(m["x"], 0.3, 1e-6)

    try:
        ad.denoise(noisy, -1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative lambda did not raise")

    cfg = json.loads(ad.default_config())
    assert cfg["command"] == "denoise"
    print("smoke test passed")


if __name__ == "__main__":
    main()
