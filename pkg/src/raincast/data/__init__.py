from .dataset import (SPLITS, DataError, DatasetManifest, WindowDataset, WindowRef, load_manifest,
                      window_count, window_index, window_starts)
from .synth import (WAVELENGTHS, BandSpec, RegionSpec, SynthConfig, band_label, default_regions,
                    desk_bands, full_bands, region_coverage_target, simulate_latent, simulate_region,
                    split_bounds, synth_generate)
from .transforms import (binarize_rain, block_mean, crop_center, crop_offset, denormalize_bands,
                         normalize_bands)
