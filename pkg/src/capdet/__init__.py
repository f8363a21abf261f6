"""capdet: caption detailness metrics and training-data selection.

Quantifies how much visual detail an image caption carries (coverage of the
image by mentioned objects, attributes and relations per object, both
normalized by caption length) and uses those scores to pick training subsets
for text-to-image datasets.
"""

__version__ = "0.1.0"

from capdet.errors import CapdetError
from capdet.masks import RleMask, kernel_backend, mask_area, rle_decode, rle_encode, union_area
from capdet.metrics import (
    MetricReport,
    ScoringInput,
    caption_length,
    compute_aod,
    compute_detailness,
    compute_icr,
    score_dataset,
    score_record,
)
from capdet.scene_graph import (
    SceneGraph,
    build_graph,
    induced_subgraph,
    object_attribute_count,
    object_relation_count,
    parse_scene_graph,
    serialize_scene_graph,
)

__all__ = [
    "CapdetError",
    "MetricReport",
    "RleMask",
    "SceneGraph",
    "ScoringInput",
    "__version__",
    "build_graph",
    "caption_length",
    "compute_aod",
    "compute_detailness",
    "compute_icr",
    "induced_subgraph",
    "kernel_backend",
    "mask_area",
    "object_attribute_count",
    "object_relation_count",
    "parse_scene_graph",
    "rle_decode",
    "rle_encode",
    "score_dataset",
    "score_record",
    "serialize_scene_graph",
    "union_area",
]
