"""ioskit: intraoral-scan meshes to pseudo-color point clouds, staged
diagnostic VQA datasets, and free-form answer scoring."""

from .meshio import (
    TriangleMesh,
    Provenance,
    detect_format,
    parse_mesh,
    write_mesh,
    load_mesh,
    save_mesh,
)
from .geometry import (
    OrientedPointSet,
    RigidTransform,
    Normalization,
    PointCloud,
    face_centroids,
    gcp,
    canonicalize_pose,
    normalize_unit,
    downsample_random,
    mesh_to_pointcloud,
)
from .pcformat import (
    read_pointcloud,
    write_pointcloud,
    load_pointcloud,
    save_pointcloud,
)
from .schema import DiseaseSchema, Disease, default_schema, load_schema
from .builder import (
    CaseRecord,
    VqaSample,
    MappingRule,
    SplitPolicy,
    QuestionPolicy,
    load_manifest,
    apply_mapping,
    generate_qa,
    split_stages,
    flag_rationales,
    dataset_stats,
    synth_manifest,
    build_dataset,
)
from .evalmetrics import (
    ParsedAnswer,
    LabelMatcher,
    MetricsReport,
    parse_answer,
    compute_metrics,
    evaluate_run,
)

__version__ = "0.1.0"
