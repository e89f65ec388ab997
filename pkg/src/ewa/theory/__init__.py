from .action import (
    SaddleResult,
    ScalarAction,
    effective_action,
    load_weights,
    minimize_action_general,
    minimize_action_symmetric,
    renorm_kernel,
    task_overlap_Myy,
)
from .matrix import MatrixSaddleResult, cnn_data_term, matrix_entropy, matrix_saddle, multioutput_data_term
from .mup import mu_p_transform, rescale_factor
from .noncentral import (
    DomainError,
    NoncentralState,
    TaskOverlaps,
    effective_dimension,
    noncentral_action_1hl,
    noncentral_gradient_1hl,
    noncentral_overlaps,
    noncentral_saddle_1hl,
    noncentral_setup,
)
from .zerotemp import zero_temp_action, zero_temp_saddle_1hl, zero_temp_state_eq
