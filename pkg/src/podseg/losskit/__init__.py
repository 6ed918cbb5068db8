"""Reference loss and gating kernels with analytic gradients."""

from .alignment import DualHeadLogits, FeaturePair, loss_j_am, loss_s_am, margin_combine, softplus
from .config import PARTS, LossConfig, total_loss
from .gate import DynamicGateInputs, GateOutput, dynamic_gate_forward
from .gradcheck import BUILDERS, finite_diff_check, gradient_suite, numeric_gradient, sample_kink_free
from .ocm import OcmResult, ocm_loss
from .supervised import HeadPredictions, HeadTargets, SupervisedResult, supervised_losses
