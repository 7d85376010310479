"""Private next-token prediction from sub-sampled model ensembles.

An ensemble of paired models, each pair fine-tuned on a disjoint slice of
a private corpus, answers next-token queries by mixing its averaged
prediction with a public model. The mixing weight adapts to how much the
paired models disagree, each answer is charged its leave-one-out Renyi
divergence against per-part budgets, and budget exhaustion permanently
switches the session to the public model.
"""

from submix._kernels import BACKEND as KERNEL_BACKEND
from submix.probdist import (
    Pmf,
    max_divergence,
    mix,
    renyi_divergence,
    sample,
    sym_renyi_divergence,
    temperature_scale,
)
from submix.corpus import Partition, UserCorpus, Vocab, make_partition, tokenize
from submix.lm import NGramModel, avg_pair_pmf, fine_tune, load_model, pretrain, save_model
from submix.protocol import (
    PrivacyLedger,
    Session,
    StepOutcome,
    SubMixEnsemble,
    optimize_lambda,
    predict_step,
    run_session,
    train_ensemble,
)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "Pmf",
    "renyi_divergence",
    "max_divergence",
    "sym_renyi_divergence",
    "mix",
    "sample",
    "temperature_scale",
    "Vocab",
    "UserCorpus",
    "Partition",
    "make_partition",
    "tokenize",
    "NGramModel",
    "pretrain",
    "fine_tune",
    "avg_pair_pmf",
    "save_model",
    "load_model",
    "SubMixEnsemble",
    "PrivacyLedger",
    "StepOutcome",
    "Session",
    "optimize_lambda",
    "predict_step",
    "run_session",
    "train_ensemble",
]
