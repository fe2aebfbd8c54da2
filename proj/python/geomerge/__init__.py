"""Python bindings for the geomerge checkpoint merging library."""

from ._geomerge import (
    GeomergeError,
    __version__,
    angle_between,
    cli,
    geodesic_merge,
    inspect,
    merge_della,
    merge_linear,
    merge_task_arithmetic,
    merge_ties,
    project_to_sphere,
    read_tensor,
    run_merge,
    sweep,
    trim_task_vector,
    write_checkpoint,
)

__all__ = [
    "GeomergeError",
    "__version__",
    "angle_between",
    "cli",
    "geodesic_merge",
    "inspect",
    "merge_della",
    "merge_linear",
    "merge_task_arithmetic",
    "merge_ties",
    "project_to_sphere",
    "read_tensor",
    "run_merge",
    "sweep",
    "trim_task_vector",
    "write_checkpoint",
]
