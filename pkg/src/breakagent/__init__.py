"""Fracture-pattern features from bone-fragment meshes, leakage-safe
classification experiments, spectral clustering, and a leakage audit."""

from .breaks import AnnotationError, ContractError, build_break_record, read_break_curves, read_break_metadata
from .dataset import FeatureTable, assemble_break_table, assemble_table, ingest_tabular_csv, read_features_csv, write_features_csv
from .evaluation import LeakageWarning, bootstrap_inflate, group_split, majority_vote, run_experiment, trial_seed
from .learners import ALGORITHMS, ClassifierSpec, default_specs
from .mesh import DegenerateGeometryError, MeshLoadError, TriangleMesh, load_mesh, mesh_features
from .synth import RandomDatasetConfig, generate_blob_dataset, generate_random_dataset, run_leakage_audit
from .unsupervised import build_knn_graph, clustering_accuracy, kmeans, spectral_clustering, spectral_embedding

__version__ = "0.1.0"
