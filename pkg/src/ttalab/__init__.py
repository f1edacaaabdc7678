"""Entropy-based test-time adaptation on a small batch-normalized network,
with a mini-batch k-means companion and a synthetic corruption benchmark."""

from .adaptation import (AdaptationConfig, Adapter, GradientAccumulator,
                         accumulate_and_maybe_step, adapt_batch, default_q,
                         entropy_filter, flip_signal, identity_aug,
                         rla_forward, sample_weights, tent_loss, ttc_loss)
from .benchmark import (Corruption, RunReport, SignalDataset, StreamProtocol,
                        accuracy_score, apply_corruption, generate_dataset,
                        stream_eval, train_source)
from .clustering import (assign_step, kmeans_objective, run_minibatch_kmeans,
                         update_step)
from .errors import (DegenerateBatch, InvalidInput, ParseError, SchemaError,
                     TrainingDiverged, TTALabError)
from .network import (BatchNormLayer, BNMode, DenseLayer, Network,
                      backward_bn_affine, forward, load_checkpoint,
                      make_network, penultimate_features, save_checkpoint)
from .numeric import (binary_entropy_grad, entropy, entropy_grad_logits,
                      finite_diff_check, simulate_entropy_descent, softmax)

__version__ = "0.1.0"
