"""Monocular 2D-to-3D pose lifting with a spatio-temporal Evoformer trunk,
structural pair priors and recursive refinement, on a numpy autodiff core."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .errors import ConfigError, ContractError, NumericError, ShapeError, ValidationError
from .gradcheck import block_gradient_errors
from .kinematics import SequenceRecord, Skeleton, chain_skeleton, generate_dataset, h36m17_skeleton
from .model import ModelConfig, evopose_forward, init_model
from .objectives import auc, mpjpe, pck
from .tensor import Tensor
from .train import evaluate, infer, train

__version__ = "0.1.0"
