"""Sound polyhedral robustness certification for LSTM sequence classifiers."""

from .domain import (LOWER, UPPER, AbstractElement, affine_transformer,
                     backsubstitute, concretize, objective_lower_bound)
from .network import (MODEL_FORMAT, CandidatePlaneProvider, LSTMWeights,
                      ModelFormatError, ModelSpec, NetworkAbstraction,
                      PreprocSpec, ThreatModel, abstract_forward,
                      build_input_element, concrete_forward, load_input,
                      load_model, save_model)
from .numeric import (SOUND_SLACK, DegenerateSamplesError, Interval, LinExpr,
                      Plane)
from .refinement import (CertificationResult, CertificationTask,
                         combined_bounds, certify, grad_lambda, loss,
                         lp_bounds)
from .transformers import BinaryKind, CandidateSet, Region, candidates

__version__ = "0.1.0"

__all__ = [
    "LOWER", "UPPER", "AbstractElement", "affine_transformer",
    "backsubstitute", "concretize", "objective_lower_bound",
    "MODEL_FORMAT", "CandidatePlaneProvider", "LSTMWeights",
    "ModelFormatError", "ModelSpec", "NetworkAbstraction", "PreprocSpec",
    "ThreatModel", "abstract_forward", "build_input_element",
    "concrete_forward", "load_input", "load_model", "save_model",
    "SOUND_SLACK", "DegenerateSamplesError", "Interval", "LinExpr", "Plane",
    "CertificationResult", "CertificationTask", "combined_bounds", "certify",
    "grad_lambda", "loss", "lp_bounds",
    "BinaryKind", "CandidateSet", "Region", "candidates",
    "__version__",
]
