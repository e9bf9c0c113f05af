"""Python bindings for the foodcrowd dataset pipeline."""

from ._foodcrowd import (
    ConfigError,
    Error,
    IllegalTransition,
    LeaseConflict,
    MissingScore,
    NotFound,
    PoolTooSmall,
    Server,
    Store,
    ValidationError,
    acceptable_range,
    aggregate_foodness,
    analytic_pr,
    calibrate,
    crawl_fixture,
    dedup,
    filter_partition,
    image_id_for,
    intersect_ranges,
    make_fixture_corpus,
    range_midpoint,
    sha256_hex,
    sweep_pr,
    synthetic_pools,
    threshold_grid,
)

__version__ = "0.1.0"
