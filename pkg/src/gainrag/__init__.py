"""Gain-oriented retrieval-augmented generation.

Passages are scored by how much they lower the contrastive perplexity of the
gold answer, those scores are distilled into a lightweight selector, and at
inference the selector picks one passage (possibly a generated pseudo-passage)
to condition generation on.
"""

from .evaluation import EvalResult, coverage_curves, em_nonstrict, evaluate, f1, normalize, win_tie_lose
from .gain import GainConfig, contrastive_score_seq, gain_signal, gain_signals, perplexity
from .inference import InferenceTrace, answer, answer_all
from .lm_backend import BackendDescriptor, MockBackend, MockLMSpec, RemoteBackend, TokenScoreSeq, make_backend
from .pseudo_passage import generate_pseudo
from .retrieval import Index, Passage, RetrievalResult, build_index, import_external_scores, ingest_corpus
from .selector import (FeatureConfig, SelectorModel, TrainConfig, featurize, kl_grad, kl_loss, load_model,
                       save_model, score, select_best, train)
from .synthesis import (GainRecord, QASample, TrainingGroup, assemble_groups, filter_groups, load_qa,
                        synthesize)

__version__ = "0.1.0"
