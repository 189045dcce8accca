"""Regenerate the bundled sample data.

Writes four 128x128 source images derived from scikit-image samples and a
small contaminated two-source mixture (``sample_mixture.csv``). Requires scikit-image (not a runtime dependency of the package). Each image
is converted to grayscale, resized to 128x128 and histogram-equalised so
that the four sources have near-uniform marginals and low mutual
correlation.
"""

from pathlib import Path

import numpy as np
from skimage import color, data, exposure, transform

from gamma_ica.harness import SimulationSpec, generate_simulation
from gamma_ica.io import write_matrix_csv, write_pgm

NAMES = ("camera", "coins", "gravel", "grass")
OUT = Path(__file__).resolve().parents[1] / "src" / "gamma_ica" / "data"


def prepare(name: str, size: int = 128) -> np.ndarray:
    img = getattr(data, name)()
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3])
    img = transform.resize(img.astype(float), (size, size), anti_aliasing=True)
    img = exposure.equalize_hist(img)
    return np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)


def main() -> None:
    imgs = [prepare(n) for n in NAMES]
    for k, img in enumerate(imgs, start=1):
        write_pgm(OUT / f"source{k}.pgm", img)
    corr = np.corrcoef(np.stack([im.reshape(-1).astype(float) for im in imgs]))
    print("max |off-diagonal correlation|:", np.max(np.abs(corr - np.eye(len(imgs)))))
    sim = generate_simulation(SimulationSpec(n_outliers=30, seed=0), rep=0)
    write_matrix_csv(OUT / "sample_mixture.csv", sim.X.T)


if __name__ == "__main__":
    main()
