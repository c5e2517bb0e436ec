"""Dependency parsers built on BiLSTM feature vectors."""

from .autodiff import Graph, ParameterStore
from .encoder import Encoder, EncoderConfig
from .graph_parser import GraphParser, eisner
from .transition_parser import Configuration, TransitionParser, oracle_costs
from .treebank import ParseTree, Sentence, Token, Vocabulary, evaluate, is_projective, read_conll, write_conll

__version__ = "0.1.0"
