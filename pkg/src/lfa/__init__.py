"""Self-supervised annotation of seismic image patches via latent factorization.

A convolutional autoencoder is trained with two learned projection
matrices that split the latent code into complementary parts; the decoded
branch difference yields per-pixel structure confidence maps.
"""

from .annotator import (ConfidenceMap, branch_mses, branch_outputs,
                        confidence_map, iou, sparse_difference_map,
                        threshold_mask)
from .attributes import (AttributeSection, analytic_signal, compute_attributes,
                         instantaneous_amplitude, instantaneous_phase)
from .data import (ImagePatch, ManifestEntry, denormalize, load_dataset,
                   normalize, read_manifest, write_dataset, write_manifest)
from .errors import (CheckpointError, CheckpointIntegrityError,
                     CheckpointVersionError, ConfigError, GenerationError,
                     LfaError, ManifestError, ParameterError, ShapeError,
                     TrainingDiverged)
from .losses import (LossBundle, adv1_discriminator_loss, adv1_generator_loss,
                     adv2_discriminator_loss, adv2_encoder_loss, diff_loss,
                     rec_loss)
from .models import (ArchitectureConfig, ModelSet, decode, discriminate_image,
                     discriminate_latent, encode, init_parameters)
from .projection import (ProjectionPair, cross_orthogonality,
                         idempotency_residual, latent_orthogonality, proj_loss,
                         project)
from .synthetic import SyntheticSample, SyntheticSpec, generate_synthetic
from .trainer import (Checkpoint, GradcheckReport, MetricsRecord, SubStepEvent,
                      TrainConfig, Trainer, gradcheck, load_checkpoint,
                      sample_uniform_prior, save_checkpoint, train)

__version__ = "0.1.0"
