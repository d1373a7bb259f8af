"""Synthetic crash-analog data: lattice builder, simulator, DOE sweep and OPDS files."""
from .dataset import (
    MAGIC,
    SPLITS,
    DatasetError,
    DatasetFile,
    Sample,
    assign_splits,
    doe_configs,
    from_bytes,
    generate_doe,
    load_split,
    make_sample,
    manifest_record,
    read_dataset,
    save_splits,
    split_counts,
    to_bytes,
    write_dataset,
    write_manifest,
)
from .lattice import (
    DEFAULT_RESOLUTION,
    BeamLattice,
    DesignConfig,
    LatticeError,
    build_lattice,
    element_count,
    probe_points,
    resolution_for,
    template_box,
)
from .normalize import ChannelStats, NormStats, normalize_stats
from .simulate import SimulationError, SimulationResult, point_features, simulate, stable_step
