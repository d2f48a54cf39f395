"""
Synthetic in-car ERP decoding: session synthesis, a simulated wireless acquisition, preprocessing with trial
rejection, a random forest and a CNN classifier, run level decoding and the evaluation of training sets.
"""

from .config import ExperimentConfig, derive_seed
from .core import Channel, Condition, Epoch, IconId, SessionSpec, TrainingTag
from .decode import RunPrediction, aggregate_run, decode_recording, online_session
from .errors import ErpDecoderError
from .evaluation import EvalEntry, EvalReport, assemble_training_set, cv_select_epochs, evaluate
from .features import extract_features
from .models import ModelKind, TrainedModel, fit_cnn, fit_forest, load_model, predict_proba, save_model
from .pipeline import Manifest, run_pipeline
from .preprocess import PreprocessOptions, preprocess_recording
from .stream import Recording, read_recording, write_recording
from .synthgen import SubjectModel, default_roster, generate_session
