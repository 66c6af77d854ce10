import logging
import os

import numpy as np

LAND_RGB = (128, 128, 128)


def heatmap_rgb(values: np.ndarray, vmin: float = None, vmax: float = None) -> np.ndarray:
    """Blue (low) to red (high) ramp; NaN cells are grey. Row 0 of the
    output is the northernmost grid row."""
    finite = np.isfinite(values)
    if vmin is None:
        vmin = float(values[finite].min()) if finite.any() else 0.0
    if vmax is None:
        vmax = float(values[finite].max()) if finite.any() else 1.0
    span = vmax - vmin if vmax > vmin else 1.0
    scaled = np.clip((np.where(finite, values, vmin) - vmin) / span, 0.0, 1.0)
    rgb = np.stack([scaled, 1.0 - np.abs(2.0 * scaled - 1.0), 1.0 - scaled], axis=-1)
    rgb = np.round(rgb * 255.0).astype(np.uint8)
    rgb[~finite] = LAND_RGB
    return rgb[::-1]


class PpmFileHandler:
    def __init__(self, output: str):
        self.output = output

    def write(self, values: np.ndarray, vmin: float = None, vmax: float = None) -> None:
        logging.info(f'Writing heatmap to file: {self.output}')
        if os.path.dirname(self.output):
            os.makedirs(os.path.dirname(self.output), exist_ok=True)
        rgb = heatmap_rgb(values, vmin, vmax)
        height, width = rgb.shape[:2]
        with open(self.output, 'wb') as f:
            f.write(f'P6\n{width} {height}\n255\n'.encode('ascii'))
            f.write(rgb.tobytes())
