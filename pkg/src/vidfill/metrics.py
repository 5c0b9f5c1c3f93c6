"""Masked-region-preservation metrics (PSNR/SSIM/MSE/MAE restricted to a
pixel region) and the ID-drift measure for long-video consistency.

Learned metrics (LPIPS, CLIP similarity, FVID) need pretrained networks and
are reported as unavailable placeholder columns.
"""

import math
from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 99.0
_PSNR_MSE_FLOOR = 1e-10
SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

REPORT_COLUMNS = ["region", "psnr_db", "ssim", "mse", "mae", "pixel_count",
                  "lpips", "clip_sim", "clip_sim_m", "fvid"]
UNAVAILABLE = "n/a"


@dataclass
class RegionMetricReport:
    region: str
    psnr_db: float
    ssim: float
    mse: float
    mae: float
    pixel_count: int

    def row(self):
        return [self.region, f"{self.psnr_db:.4f}", f"{self.ssim:.6f}",
                f"{self.mse:.8f}", f"{self.mae:.8f}", str(self.pixel_count),
                UNAVAILABLE, UNAVAILABLE, UNAVAILABLE, UNAVAILABLE]


def _region_select(mask_frames, region):
    m = np.asarray(mask_frames)[:, 0].astype(bool)
    if region == "unmasked":
        sel = ~m
    elif region == "masked":
        sel = m
    elif region == "full":
        sel = np.ones_like(m)
    else:
        raise ValueError(f"unknown region {region!r}")
    if not sel.any():
        raise ValueError(f"region {region!r} selects no pixels")
    return sel


def _gather(frames, sel):
    arr = np.asarray(frames, dtype=np.float64)
    return arr.transpose(0, 2, 3, 1)[sel]


def region_mse(gen, ref, mask, region="unmasked"):
    sel = _region_select(mask, region)
    diff = _gather(gen, sel) - _gather(ref, sel)
    return float(np.mean(diff**2))


def region_mae(gen, ref, mask, region="unmasked"):
    sel = _region_select(mask, region)
    diff = _gather(gen, sel) - _gather(ref, sel)
    return float(np.mean(np.abs(diff)))


def region_psnr(gen, ref, mask, region="unmasked"):
    """10*log10(1/MSE) on the [0,1] scale, capped at 99 dB for exact matches."""
    mse = region_mse(gen, ref, mask, region)
    if mse < _PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def _gaussian_kernel(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = size // 2
    g = np.exp(-np.arange(-half, half + 1, dtype=np.float64) ** 2 / (2 * sigma**2))
    g = g / g.sum()
    return np.outer(g, g)


def _windows(img, size):
    h, w = img.shape
    sh = (h - size + 1, w - size + 1, size, size)
    st = img.strides * 2
    return np.lib.stride_tricks.as_strided(img, shape=sh, strides=st)


def region_ssim(gen, ref, mask, region="unmasked"):
    """Mean local SSIM (7x7 Gaussian windows, standard stabilizers) over
    windows whose full footprint lies inside the selected region, per
    frame and channel, averaged over frames.
    """
    sel = _region_select(mask, region)
    kernel = _gaussian_kernel()
    size = SSIM_WINDOW
    g = np.asarray(gen, dtype=np.float64)
    r = np.asarray(ref, dtype=np.float64)
    if g.shape != r.shape:
        raise ValueError(f"extent mismatch: {g.shape} vs {r.shape}")
    t_frames, channels, h, w = g.shape
    if h < size or w < size:
        raise ValueError("frames smaller than the SSIM window")
    values = []
    for t in range(t_frames):
        ok = _windows(sel[t].astype(np.float64), size).sum(axis=(2, 3)) == size * size
        if not ok.any():
            continue
        for c in range(channels):
            wx = _windows(g[t, c], size)[ok]
            wy = _windows(r[t, c], size)[ok]
            mu_x = np.tensordot(wx, kernel, axes=([1, 2], [0, 1]))
            mu_y = np.tensordot(wy, kernel, axes=([1, 2], [0, 1]))
            xx = np.tensordot(wx * wx, kernel, axes=([1, 2], [0, 1]))
            yy = np.tensordot(wy * wy, kernel, axes=([1, 2], [0, 1]))
            xy = np.tensordot(wx * wy, kernel, axes=([1, 2], [0, 1]))
            var_x = xx - mu_x**2
            var_y = yy - mu_y**2
            cov = xy - mu_x * mu_y
            ssim_map = ((2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)) / (
                (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2))
            values.append(ssim_map.mean())
    if not values:
        raise ValueError("no SSIM window fits inside the selected region")
    return float(np.mean(values))


def region_report(gen, ref, mask, region="unmasked") -> RegionMetricReport:
    sel = _region_select(mask, region)
    return RegionMetricReport(
        region=region,
        psnr_db=region_psnr(gen, ref, mask, region),
        ssim=region_ssim(gen, ref, mask, region),
        mse=region_mse(gen, ref, mask, region),
        mae=region_mae(gen, ref, mask, region),
        pixel_count=int(sel.sum()))


def id_drift(video_frames, mask_frames, windows):
    """Mean Euclidean distance between consecutive windows' masked-region
    mean colors. Raises if any window's masked region is empty."""
    frames = np.asarray(video_frames, dtype=np.float64)
    m = np.asarray(mask_frames)[:, 0].astype(bool)
    means = []
    for s, e in windows:
        region = m[s:e]
        if not region.any():
            raise ValueError(f"window [{s},{e}) has an empty masked region")
        sub = frames[s:e].transpose(0, 2, 3, 1)[region]
        means.append(sub.mean(axis=0))
    if len(means) < 2:
        return 0.0
    dists = [float(np.linalg.norm(a - b)) for a, b in zip(means, means[1:])]
    return float(np.mean(dists))


def write_report_csv(path, reports):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for rep in reports:
            fh.write(",".join(rep.row()) + "\n")
