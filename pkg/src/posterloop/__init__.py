"""Retrieval-augmented poster layout generation with a grade-and-refine loop."""

from .geometry import BBox, Element, ElementType, Layout, ProtectedRegion
from .grading import GraderReport, Thresholds
from .metrics import CorpusReport, MetricReport, evaluate_corpus
from .pipeline import Mode, PipelineConfig, run_experiment, run_pipeline
from .recommender import CostWeights, SearchBudget
from .retrieval import Embedding, Index, build_index

__version__ = "0.1.0"
