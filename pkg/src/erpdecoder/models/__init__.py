"""
The two classifier families: a random forest on feature vectors and the intermediate CNN on raw epochs.
"""

from .base import MODEL_FORMAT_VERSION, ModelKind, TrainedModel, load_model, save_model
from .cnn import CnnConfig, IntermediateCnn, OptimizerConfig, build_module, fit_cnn
from .forest import ForestConfig, feature_importances, fit_forest
from .inference import model_inputs, predict_epochs, predict_proba, predict_proba_batch
