"""cloudwire: vectorized wireframe extraction from 3D point clouds.

The package turns an unstructured point cloud into a compact wireframe
(vertices plus straight edges).  Per-point features feed a patch-based
vertex detector and localizer; candidate edges between detected vertices
are pruned against the cloud surface and scored by a learned verifier.
A synthetic ray-cast scanner supplies training data with exact ground
truth, and the metric suite scores predictions against it.
"""

from .backbone import EncoderConfig, encode
from .core import (
    Mesh,
    NormalizeTransform,
    ParseError,
    PointCloud,
    ScoredWireframe,
    Wireframe,
    normalize,
    read_cloud,
    read_wireframe,
    write_cloud,
    write_obj,
    write_wireframe,
)
from .infer import (
    ExtractionResult,
    InferenceConfig,
    edge_nms,
    extract_wireframe,
    predict_edges,
    predict_vertices,
    straighten,
    vertex_nms,
)
from .metrics import (
    CorpusEval,
    ObjectEval,
    WedReport,
    edge_point_ap,
    eval_corpus,
    evaluate_object,
    mean_edge_point_ap,
    mean_structural_ap,
    mean_vertex_ap,
    structural_ap,
    vertex_ap,
    wireframe_edit_distance,
)
from .model import (
    EDGE_SET_KINDS,
    HeadBundle,
    ModelConfig,
    TrainingDiverged,
    init_bundle,
    load_bundle,
    save_bundle,
    train,
)
from .neigh import (
    build_knn_graph,
    farthest_point_sampling,
    geodesic_patch,
    geodesic_patches,
    mean_nn_spacing,
    sample_training_patches,
)
from .synth import (
    SHAPE_FAMILIES,
    DatasetConfig,
    ScanConfig,
    ShapeSample,
    load_split,
    make_dataset,
    make_shape,
    virtual_scan,
)

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig",
    "encode",
    "Mesh",
    "NormalizeTransform",
    "ParseError",
    "PointCloud",
    "ScoredWireframe",
    "Wireframe",
    "normalize",
    "read_cloud",
    "read_wireframe",
    "write_cloud",
    "write_obj",
    "write_wireframe",
    "ExtractionResult",
    "InferenceConfig",
    "edge_nms",
    "extract_wireframe",
    "predict_edges",
    "predict_vertices",
    "straighten",
    "vertex_nms",
    "CorpusEval",
    "ObjectEval",
    "WedReport",
    "edge_point_ap",
    "eval_corpus",
    "evaluate_object",
    "mean_edge_point_ap",
    "mean_structural_ap",
    "mean_vertex_ap",
    "structural_ap",
    "vertex_ap",
    "wireframe_edit_distance",
    "EDGE_SET_KINDS",
    "HeadBundle",
    "ModelConfig",
    "TrainingDiverged",
    "init_bundle",
    "load_bundle",
    "save_bundle",
    "train",
    "build_knn_graph",
    "farthest_point_sampling",
    "geodesic_patch",
    "geodesic_patches",
    "mean_nn_spacing",
    "sample_training_patches",
    "SHAPE_FAMILIES",
    "DatasetConfig",
    "ScanConfig",
    "ShapeSample",
    "load_split",
    "make_dataset",
    "make_shape",
    "virtual_scan",
    "__version__",
]
