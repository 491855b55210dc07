"""DIATOM: a topic model with separate latent spaces for plot and opinion topics."""
from .corpus import CorpusSplit, Vocabulary, load_annotations, load_corpus
from .model import DIATOM, ModelConfig, TopicSet, topic_word_matrix
from .training import TrainConfig, build_model, train

__version__ = "0.1.0"

__all__ = [
    "CorpusSplit", "DIATOM", "ModelConfig", "TopicSet", "TrainConfig", "Vocabulary",
    "build_model", "load_annotations", "load_corpus", "topic_word_matrix", "train",
]
