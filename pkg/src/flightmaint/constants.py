CHANNEL_COUNT = 23
DEFAULT_WINDOW_LENGTH = 4096
SHORT_SLICE_LENGTH = 128

MIN_FLIGHT_SECONDS = 1800
MAX_DAY_DISTANCE = 2

NORMALIZATION_EPSILON = 1e-6
PROBABILITY_EPSILON = 1e-7

MANIFEST_NAME = "manifest.csv"
MANIFEST_COLUMNS = ("flight_id", "tail_id", "cluster", "label", "day_offset", "duration_seconds", "path")
FOLDS_NAME = "folds.csv"
COUNTS_NAME = "counts.csv"

CHECKPOINT_NAME = "model.ckpt"
MODEL_SIDECAR_NAME = "model.toml"
CHECKPOINT_MAGIC = b"FLTMAINT"
CHECKPOINT_VERSION = 1

CONFIG_NAME = "config.toml"
RUN_RECORDS_NAME = "runs.jsonl"
CV_SUMMARY_NAME = "cv_summary.csv"
LOSS_CURVE_NAME = "loss_curve.csv"
EXCEEDANCE_NAME = "exceedance.csv"
ATTENTION_INDEX_NAME = "index.csv"

# Sensor layout of the single-engine piston fleet the benchmark was recorded on.
DEFAULT_CHANNEL_NAMES = (
    "volt1",
    "volt2",
    "amp1",
    "amp2",
    "FQtyL",
    "FQtyR",
    "E1 FFlow",
    "E1 OilT",
    "E1 OilP",
    "E1 RPM",
    "E1 CHT1",
    "E1 CHT2",
    "E1 CHT3",
    "E1 CHT4",
    "E1 EGT1",
    "E1 EGT2",
    "E1 EGT3",
    "E1 EGT4",
    "OAT",
    "IAS",
    "VSpd",
    "NormAc",
    "AltMSL",
)
