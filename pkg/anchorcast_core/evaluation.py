# anchorcast/anchorcast_core/evaluation.py
import os
import time
import cv2
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import linalg
from scipy.ndimage import gaussian_filter
from sklearn.random_projection import GaussianRandomProjection
from .data_manager import numbered_pngs, read_png, read_mask
from .exceptions import InputValidationError, MetricError
from .utils import PIXEL_MAX, write_json_atomic

IDENTICAL = "identical"
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius int(3.5 * 1.5 + 0.5) = 5 -> 11 taps
SSIM_RADIUS = 5
SSIM_K1, SSIM_K2 = 0.01, 0.03
EIGEN_CLAMP = 1e-10
REPORT_FILE = 'report.json'
PER_FRAME_FILE = 'per_frame.parquet'
PROVENANCE = ("Features come from a deterministic toy extractor; Frechet values are not comparable "
              "with published FVD figures, and SSIM/PSNR are computed on toy-scale frames.")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"image sizes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    return a, b


def ssim(a, b):
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), valid region only, mean over pixels and channels."""
    a, b = _pair(a, b)
    if min(a.shape[:2]) < 2 * SSIM_RADIUS + 1:
        raise MetricError(f"images of {a.shape[0]}x{a.shape[1]} are smaller than the 11x11 SSIM window")
    c1 = (SSIM_K1 * PIXEL_MAX) ** 2
    c2 = (SSIM_K2 * PIXEL_MAX) ** 2
    crop = (slice(SSIM_RADIUS, -SSIM_RADIUS), slice(SSIM_RADIUS, -SSIM_RADIUS))
    values = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        blur = lambda img: gaussian_filter(img, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE)[crop]
        mu_x, mu_y = blur(x), blur(y)
        var_x = blur(x * x) - mu_x * mu_x
        var_y = blur(y * y) - mu_y * mu_y
        cov = blur(x * y) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        values.append(num / den)
    return float(np.mean(values))


def psnr(a, b):
    """PSNR in dB; the string "identical" when the images match exactly."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return IDENTICAL
    return float(10.0 * np.log10(PIXEL_MAX ** 2 / mse))


def _as_samples(feats):
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    if feats.ndim != 2:
        raise MetricError(f"features must be (samples, dim), got {feats.shape}")
    return feats


def _sym_sqrt(matrix):
    w, v = linalg.eigh(matrix)
    w = np.where(w < EIGEN_CLAMP, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(feats_a, feats_b):
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)) with unbiased covariances."""
    a, b = _as_samples(feats_a), _as_samples(feats_b)
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    dim = a.shape[1]
    for name, feats in (('a', a), ('b', b)):
        if feats.shape[0] < 2:
            raise MetricError(f"set {name} needs at least 2 samples, got {feats.shape[0]}")
        if feats.shape[0] < dim + 1:
            print(f"[{time.ctime()}] EVAL Warning: set {name} has {feats.shape[0]} samples for {dim} dimensions; "
                  f"its covariance is rank-deficient.")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False, ddof=1))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False, ddof=1))
    # tr((S_a S_b)^(1/2)) = sum of the singular values of sqrtB sqrtA.
    root_a = _sym_sqrt((cov_a + cov_a.T) / 2)
    root_b = _sym_sqrt((cov_b + cov_b.T) / 2)
    cross = linalg.svdvals(root_b @ root_a).sum()
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)
    return max(value, 0.0)


class FeatureExtractor:
    """Named, versioned map from frames to fixed-length vectors."""
    name = "base"
    version = "0"
    dim = 0

    def extract(self, frames):
        raise NotImplementedError

    def describe(self):
        return {'name': self.name, 'version': self.version, 'dim': self.dim}


class ToyProjectionExtractor(FeatureExtractor):
    """Grayscale, area-pooled to 8x8, then a seeded Gaussian random projection."""
    name = "toy-random-projection"
    version = "1"
    POOL = 8

    def __init__(self, dim=16, seed=0):
        self.dim = int(dim)
        self.seed = int(seed)
        self.projection = GaussianRandomProjection(n_components=self.dim, random_state=self.seed)
        self.projection.fit(np.zeros((1, self.POOL * self.POOL)))

    def pooled(self, frame):
        gray = cv2.cvtColor(np.asarray(frame, dtype=np.uint8), cv2.COLOR_RGB2GRAY)
        small = cv2.resize(gray, (self.POOL, self.POOL), interpolation=cv2.INTER_AREA)
        return small.astype(np.float64).reshape(-1) / PIXEL_MAX

    def extract(self, frames):
        if len(frames) == 0:
            return np.zeros((0, self.dim))
        return self.projection.transform(np.stack([self.pooled(f) for f in frames]))

    def describe(self):
        return {'name': self.name, 'version': self.version, 'dim': self.dim, 'seed': self.seed}


def apply_mask(frames, masks):
    """Zeroes background pixels; masks are (H, W) of 0/1."""
    if len(frames) != len(masks):
        raise MetricError(f"{len(frames)} frames but {len(masks)} masks")
    out = []
    for i, (frame, mask) in enumerate(zip(frames, masks)):
        frame = np.asarray(frame)
        mask = np.asarray(mask)
        if mask.shape != frame.shape[:2]:
            raise MetricError(f"mask {i} is {mask.shape}, frame is {frame.shape[:2]}")
        if not np.isin(mask, (0, 1)).all():
            raise MetricError(f"mask {i} has values outside {{0, 1}}")
        factor = mask[..., None] if frame.ndim == 3 else mask
        out.append((frame * factor).astype(frame.dtype))
    return out


class MetricsReport:
    def __init__(self, per_frame_ssim, per_frame_psnr, frechet, masked, extractor, frame_names=None):
        self.per_frame_ssim = [float(v) for v in per_frame_ssim]
        self.per_frame_psnr = list(per_frame_psnr)
        self.frechet = float(frechet)
        self.masked = bool(masked)
        self.extractor = extractor
        self.frame_names = list(frame_names) if frame_names is not None else None

    @property
    def frame_count(self):
        return len(self.per_frame_ssim)

    @property
    def ssim_mean(self):
        return float(np.mean(self.per_frame_ssim))

    @property
    def psnr_mean(self):
        """Mean over non-identical frames; the sentinel when every frame is identical."""
        finite = [v for v in self.per_frame_psnr if v != IDENTICAL]
        return float(np.mean(finite)) if finite else IDENTICAL

    def as_dict(self):
        return {
            'provenance': PROVENANCE,
            'frame_count': self.frame_count,
            'masked': self.masked,
            'extractor': self.extractor,
            'per_frame': {'ssim': self.per_frame_ssim, 'psnr': self.per_frame_psnr, 'frame': self.frame_names},
            'aggregate': {'ssim_mean': self.ssim_mean, 'psnr_mean': self.psnr_mean, 'frechet': self.frechet},
            'lpips': None,
        }

    def per_frame_table(self):
        return pd.DataFrame({
            'frame': self.frame_names or list(range(self.frame_count)),
            'ssim': self.per_frame_ssim,
            'psnr': [np.inf if v == IDENTICAL else v for v in self.per_frame_psnr],
            'identical': [v == IDENTICAL for v in self.per_frame_psnr],
        })

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        report_path = os.path.join(directory, REPORT_FILE)
        write_json_atomic(report_path, self.as_dict())
        self.per_frame_table().to_parquet(os.path.join(directory, PER_FRAME_FILE), engine='pyarrow', index=False)
        return report_path

    def __repr__(self):
        return (f"MetricsReport(frames={self.frame_count}, ssim={self.ssim_mean:.4f}, "
                f"psnr={self.psnr_mean}, frechet={self.frechet:.4f}, masked={self.masked})")


def _frame_metrics(generated, reference):
    return ssim(generated, reference), psnr(generated, reference)


def evaluate_run(generated_dir, reference_dir, masks_dir=None, extractor=None, output_dir=None, n_jobs=1):
    print(f"[{time.ctime()}] EVAL: Comparing {generated_dir} against {reference_dir}.")
    extractor = extractor or ToyProjectionExtractor()
    gen_entries = numbered_pngs(generated_dir)
    ref_entries = numbered_pngs(reference_dir)
    if len(gen_entries) != len(ref_entries):
        raise InputValidationError(f"{generated_dir} has {len(gen_entries)} frames, "
                                   f"{reference_dir} has {len(ref_entries)}")
    if not gen_entries:
        raise InputValidationError(f"no numbered PNG frames in {generated_dir}")
    generated = [read_png(p) for _, p in gen_entries]
    reference = [read_png(p) for _, p in ref_entries]
    for (_, gp), g, (_, rp), r in zip(gen_entries, generated, ref_entries, reference):
        if g.shape != r.shape:
            raise InputValidationError(f"{gp} is {g.shape[:2]}, {rp} is {r.shape[:2]}")
    if masks_dir is not None:
        mask_entries = numbered_pngs(masks_dir)
        if len(mask_entries) != len(gen_entries):
            raise InputValidationError(f"{masks_dir} has {len(mask_entries)} masks for {len(gen_entries)} frames")
        masks = [read_mask(p) for _, p in mask_entries]
        generated = apply_mask(generated, masks)
        reference = apply_mask(reference, masks)

    metrics = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(_frame_metrics)(g, r) for g, r in zip(generated, reference))
    frechet = frechet_distance(extractor.extract(generated), extractor.extract(reference))
    report = MetricsReport([m[0] for m in metrics], [m[1] for m in metrics], frechet,
                           masked=masks_dir is not None, extractor=extractor.describe(),
                           frame_names=[os.path.basename(p) for _, p in gen_entries])
    if output_dir is not None:
        report.write(output_dir)
    print(f"[{time.ctime()}] EVAL: {report}")
    return report
