from .metrics import (GLOBAL, MetricsRecord, binarize, confusion_counts, iou_binary, iou_from_counts,
                      iou_series, masks_series, mean_region_iou, region_records)
from .permutation import BandImportance, PermutationReport, permutation_importance, seeded_permutation
from .postprocess import (ThresholdMap, apply_thresholds, default_grid, ensemble_mean, iou_curve,
                          optimize_thresholds)
from .records import (PERMUTATION_HEADER, REGION_HEADER, SERIES_HEADER, THRESHOLD_CURVE_HEADER, THRESHOLD_HEADER,
                      format_value, global_record, metrics_rows, metrics_to_text, read_metrics, write_metrics)


class TransferError(ValueError):
    """A held-out-region evaluation was asked of a model that saw those regions."""


def check_transfer(checkpoint_meta, eval_regions):
    """Refuse transfer metrics unless every evaluated region was excluded from training."""
    trained = set(checkpoint_meta.get("train_regions", ()))
    leaked = sorted(trained & set(eval_regions))
    if leaked:
        raise TransferError(f"regions {leaked} were used in training; not a transfer evaluation")
    return True
